#include "serpentflow/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <unordered_map>

namespace serpentflow::spectral {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kImagResidueTol = 1e-9;

struct Plan {
    std::vector<std::complex<double>> roots; // e^{-2*pi*i*j/n}, j in [0, n)
    std::vector<std::size_t> bitrev;         // only for powers of two
};

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

const Plan& plan_for(std::size_t n) {
    static std::unordered_map<std::size_t, std::unique_ptr<Plan>> cache;
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(n);
    if (it != cache.end()) return *it->second;

    auto plan = std::make_unique<Plan>();
    plan->roots.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double a = -2.0 * kPi * static_cast<double>(j) / static_cast<double>(n);
        plan->roots[j] = {std::cos(a), std::sin(a)};
    }
    if (is_pow2(n)) {
        plan->bitrev.resize(n);
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < n) ++bits;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b)
                if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
            plan->bitrev[i] = r;
        }
    }
    const Plan& ref = *plan;
    cache.emplace(n, std::move(plan));
    return ref;
}

void fft_pow2(std::complex<double>* x, std::size_t n, bool inverse, const Plan& plan) {
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = plan.bitrev[i];
        if (i < j) std::swap(x[i], x[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t step = n / len;
        const std::size_t half = len >> 1;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t k = 0; k < half; ++k) {
                std::complex<double> w = plan.roots[k * step];
                if (inverse) w = std::conj(w);
                const std::complex<double> u = x[start + k];
                const std::complex<double> v = x[start + k + half] * w;
                x[start + k] = u + v;
                x[start + k + half] = u - v;
            }
        }
    }
}

std::size_t smallest_factor(std::size_t n) {
    if (n % 2 == 0) return 2;
    for (std::size_t p = 3; p * p <= n; p += 2)
        if (n % p == 0) return p;
    return n;
}

// Recursive Cooley-Tukey for arbitrary n; prime factors fall back to the
// direct sum. `root_scale` maps exponents of the current length onto the
// top-level root table.
void fft_general(const std::complex<double>* in, std::size_t stride, std::complex<double>* out,
                 std::size_t n, const Plan& top, std::size_t root_scale, bool inverse) {
    if (n == 1) {
        out[0] = in[0];
        return;
    }
    const std::size_t p = smallest_factor(n);
    const std::size_t m = n / p;
    if (p == n) {
        // Direct transform of prime length.
        for (std::size_t k = 0; k < n; ++k) {
            std::complex<double> acc{0.0, 0.0};
            for (std::size_t j = 0; j < n; ++j) {
                std::complex<double> w = top.roots[((j * k) % n) * root_scale];
                if (inverse) w = std::conj(w);
                acc += in[j * stride] * w;
            }
            out[k] = acc;
        }
        return;
    }
    for (std::size_t r = 0; r < p; ++r)
        fft_general(in + r * stride, stride * p, out + r * m, m, top, root_scale * p, inverse);
    std::vector<std::complex<double>> mixed(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t k1 = k % m;
        std::complex<double> acc{0.0, 0.0};
        for (std::size_t r = 0; r < p; ++r) {
            std::complex<double> w = top.roots[((r * k) % n) * root_scale];
            if (inverse) w = std::conj(w);
            acc += out[r * m + k1] * w;
        }
        mixed[k] = acc;
    }
    std::copy(mixed.begin(), mixed.end(), out);
}

void fft_1d(std::complex<double>* x, std::size_t n, bool inverse) {
    if (n == 0) return;
    const Plan& plan = plan_for(n);
    if (is_pow2(n)) {
        fft_pow2(x, n, inverse, plan);
    } else {
        std::vector<std::complex<double>> src(x, x + n);
        fft_general(src.data(), 1, x, n, plan, 1, inverse);
    }
}

} // namespace

Field::Field(Shape s, std::vector<double> v, double rate)
    : shape(std::move(s)), values(std::move(v)), sample_rate(rate) {
    validate_field(*this);
}

Field Field::zeros(Shape s, double rate) {
    Field f;
    f.shape = std::move(s);
    f.values.assign(numerics::numel(f.shape), 0.0);
    f.sample_rate = rate;
    validate_field(f);
    return f;
}

void validate_field(const Field& f) {
    if (f.dims() != 1 && f.dims() != 2)
        throw ValidationError("field: expected 1D or 2D shape, got " +
                              numerics::shape_str(f.shape));
    for (const std::size_t d : f.shape)
        if (d < 4)
            throw ValidationError("field: every extent must be >= 4, got " +
                                  numerics::shape_str(f.shape));
    if (f.values.size() != numerics::numel(f.shape))
        throw ValidationError("field: values do not fill shape " + numerics::shape_str(f.shape));
    if (!(f.sample_rate > 0.0)) throw ValidationError("field: sample rate must be positive");
    if (!numerics::all_finite(f.values)) throw ValidationError("field: non-finite values");
}

std::size_t SpectralMask::count() const {
    std::size_t n = 0;
    for (const std::uint8_t k : keep) n += k;
    return n;
}

std::int64_t signed_bin(std::size_t k, std::size_t n) {
    return k <= (n - 1) / 2 ? static_cast<std::int64_t>(k)
                            : static_cast<std::int64_t>(k) - static_cast<std::int64_t>(n);
}

double nyquist_radius(const Shape& shape) {
    double r2 = 0.0;
    for (const std::size_t n : shape) {
        const double m = static_cast<double>(n / 2);
        r2 += m * m;
    }
    return std::sqrt(r2);
}

void fft_complex(std::vector<std::complex<double>>& data, const Shape& shape, bool inverse) {
    const std::size_t n = numerics::numel(shape);
    if (data.size() != n)
        throw ValidationError("fft: data does not match shape " + numerics::shape_str(shape));
    if (shape.size() == 1) {
        fft_1d(data.data(), shape[0], inverse);
    } else if (shape.size() == 2) {
        const std::size_t h = shape[0], w = shape[1];
        for (std::size_t y = 0; y < h; ++y) fft_1d(data.data() + y * w, w, inverse);
        std::vector<std::complex<double>> col(h);
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t y = 0; y < h; ++y) col[y] = data[y * w + x];
            fft_1d(col.data(), h, inverse);
            for (std::size_t y = 0; y < h; ++y) data[y * w + x] = col[y];
        }
    } else {
        throw ValidationError("fft: only 1D and 2D shapes are supported");
    }
    if (inverse) {
        const double scale = 1.0 / static_cast<double>(n);
        for (auto& v : data) v *= scale;
    }
}

Spectrum dft_forward(const Field& x) {
    validate_field(x);
    Spectrum z;
    z.shape = x.shape;
    z.sample_rate = x.sample_rate;
    z.coeff.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z.coeff[i] = {x.values[i], 0.0};
    fft_complex(z.coeff, z.shape, false);
    return z;
}

Field dft_inverse(const Spectrum& z) {
    std::vector<std::complex<double>> data = z.coeff;
    fft_complex(data, z.shape, true);
    Field out;
    out.shape = z.shape;
    out.sample_rate = z.sample_rate;
    out.values.resize(data.size());
    double residue = 0.0;
    double scale = 0.0;
    for (const auto& v : data) scale = std::max(scale, std::abs(v.real()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        residue = std::max(residue, std::abs(data[i].imag()));
        out.values[i] = data[i].real();
    }
    if (residue > kImagResidueTol * std::max(1.0, scale))
        throw NumericError("dft_inverse: imaginary residue " + std::to_string(residue) +
                           " exceeds tolerance (non-Hermitian spectrum?)");
    return out;
}

SpectralMask radial_mask(const Shape& shape, double omega_c) {
    if (omega_c < 0.0) throw ValidationError("radial_mask: negative cutoff");
    if (shape.empty() || shape.size() > 2)
        throw ValidationError("radial_mask: expected 1D or 2D shape, got " +
                              numerics::shape_str(shape));
    SpectralMask mask;
    mask.shape = shape;
    mask.cutoff = omega_c;
    const std::size_t n = numerics::numel(shape);
    mask.keep.assign(n, 0);
    const double w2 = omega_c * omega_c;
    if (shape.size() == 1) {
        for (std::size_t k = 0; k < shape[0]; ++k) {
            const double b = static_cast<double>(signed_bin(k, shape[0]));
            mask.keep[k] = (b * b < w2) ? 1 : 0;
        }
    } else {
        const std::size_t h = shape[0], w = shape[1];
        for (std::size_t ky = 0; ky < h; ++ky) {
            const double by = static_cast<double>(signed_bin(ky, h));
            for (std::size_t kx = 0; kx < w; ++kx) {
                const double bx = static_cast<double>(signed_bin(kx, w));
                mask.keep[ky * w + kx] = (by * by + bx * bx < w2) ? 1 : 0;
            }
        }
    }
    return mask;
}

Field apply_mask(const Field& x, const SpectralMask& mask) {
    if (mask.shape != x.shape)
        throw ValidationError("apply_mask: mask shape " + numerics::shape_str(mask.shape) +
                              " does not match field " + numerics::shape_str(x.shape));
    Spectrum z = dft_forward(x);
    for (std::size_t i = 0; i < z.coeff.size(); ++i)
        if (!mask.at(i)) z.coeff[i] = {0.0, 0.0};
    return dft_inverse(z);
}

Field lowpass(const Field& x, double omega_c) {
    return apply_mask(x, radial_mask(x.shape, omega_c));
}

Field highpass(const Field& x, double omega_c) {
    SpectralMask mask = radial_mask(x.shape, omega_c);
    for (auto& k : mask.keep) k = k ? 0 : 1;
    return apply_mask(x, mask);
}

Field splice_bands(const Field& low_source, const Field& high_source, double omega_c) {
    if (low_source.shape != high_source.shape)
        throw ValidationError("splice_bands: shape mismatch " +
                              numerics::shape_str(low_source.shape) + " vs " +
                              numerics::shape_str(high_source.shape));
    const SpectralMask mask = radial_mask(low_source.shape, omega_c);
    Spectrum zl = dft_forward(low_source);
    const Spectrum zh = dft_forward(high_source);
    for (std::size_t i = 0; i < zl.coeff.size(); ++i)
        if (!mask.at(i)) zl.coeff[i] = zh.coeff[i];
    return dft_inverse(zl);
}

PseudoPair make_pseudo(const Field& x, double omega_c, std::uint64_t seed) {
    validate_field(x);
    if (omega_c < 0.0) throw ValidationError("make_pseudo: negative cutoff");
    PseudoPair pair;
    pair.target = x;
    pair.cutoff = omega_c;
    pair.noise_seed = seed;

    const SpectralMask mask = radial_mask(x.shape, omega_c);
    const std::size_t kept = mask.count();
    if (kept == mask.keep.size()) {
        pair.pseudo_input = x; // cutoff above the Nyquist radius: noise contributes nothing
        return pair;
    }
    numerics::Rng rng(seed);
    Field noise = Field::zeros(x.shape, x.sample_rate);
    for (auto& v : noise.values) v = rng.normal();
    if (kept == 0) {
        pair.pseudo_input = std::move(noise); // full replacement
        return pair;
    }
    pair.pseudo_input = splice_bands(x, noise, omega_c);
    return pair;
}

double dot(const Field& a, const Field& b) {
    if (a.shape != b.shape)
        throw ValidationError("dot: shape mismatch " + numerics::shape_str(a.shape) + " vs " +
                              numerics::shape_str(b.shape));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.values[i] * b.values[i];
    return s;
}

double energy(const Field& x) { return dot(x, x); }

} // namespace serpentflow::spectral
