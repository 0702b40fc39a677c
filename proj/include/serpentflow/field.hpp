#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "serpentflow/errors.hpp"
#include "serpentflow/tensor.hpp"

namespace serpentflow::spectral {

using numerics::Shape;

// Real-valued sample on a regular grid: shape {N} for 1D, {H, W} for 2D.
// sample_rate is Hz for time series and cycles-per-domain for images.
struct Field {
    Shape shape;
    std::vector<double> values;
    double sample_rate = 1.0;

    Field() = default;
    Field(Shape s, std::vector<double> v, double rate = 1.0);
    static Field zeros(Shape s, double rate = 1.0);

    std::size_t size() const { return values.size(); }
    std::size_t dims() const { return shape.size(); }
};

void validate_field(const Field& f);

// Complex DFT coefficients, same layout as the originating Field, DC at
// index 0 on every axis.
struct Spectrum {
    Shape shape;
    std::vector<std::complex<double>> coeff;
    double sample_rate = 1.0;

    std::size_t size() const { return coeff.size(); }
};

// Boolean frequency mask for a radial cutoff. keep[i] refers to the signed
// integer bin vector of flat index i; Hermitian symmetry holds by
// construction because the radius of xi equals the radius of -xi.
struct SpectralMask {
    Shape shape;
    std::vector<std::uint8_t> keep;
    double cutoff = 0.0;

    bool at(std::size_t i) const { return keep[i] != 0; }
    std::size_t count() const;
};

// Training pair sharing a low band: pseudo_input keeps target's spectrum
// strictly below the cutoff and carries seeded Gaussian noise above it.
struct PseudoPair {
    Field pseudo_input;
    Field target;
    double cutoff = 0.0;
    std::uint64_t noise_seed = 0;
};

} // namespace serpentflow::spectral
