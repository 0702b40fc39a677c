#pragma once

#include "serpentflow/field.hpp"
#include "serpentflow/rng.hpp"

namespace serpentflow::spectral {

// Signed integer frequency bin of flat index k on an axis of length n:
// bins run DC, 1, ..., ceil(n/2)-1, -floor(n/2), ..., -1.
std::int64_t signed_bin(std::size_t k, std::size_t n);

// Largest Euclidean norm of any signed bin vector for this grid.
double nyquist_radius(const Shape& shape);

// Unnormalized forward transform; the inverse applies 1/N (1/(H*W)).
// Arbitrary lengths are supported through recursive Cooley-Tukey with a
// direct-sum base case for prime factors.
void fft_complex(std::vector<std::complex<double>>& data, const Shape& shape, bool inverse);

Spectrum dft_forward(const Field& x);
Field dft_inverse(const Spectrum& z);

// Mask of bins with ||xi||_2 strictly below omega_c.
SpectralMask radial_mask(const Shape& shape, double omega_c);

Field lowpass(const Field& x, double omega_c);
Field highpass(const Field& x, double omega_c);
Field apply_mask(const Field& x, const SpectralMask& mask);

// Pseudo-pair construction: noise is drawn elementwise standard normal in
// signal space from the seed, transformed, and spliced in above the cutoff.
PseudoPair make_pseudo(const Field& x, double omega_c, std::uint64_t seed);

// Same construction on a caller-provided noise field (the zero-noise
// ensemble member passes zeros).
Field splice_bands(const Field& low_source, const Field& high_source, double omega_c);

double dot(const Field& a, const Field& b);
double energy(const Field& x);

} // namespace serpentflow::spectral
