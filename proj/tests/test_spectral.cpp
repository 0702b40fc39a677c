#include <doctest.h>

#include <cmath>

#include "serpentflow/spectral.hpp"

#include "test_support.hpp"

using namespace serpentflow::spectral;
using serpentflow::NumericError;
using serpentflow::ValidationError;
using serpentflow::numerics::Rng;
using serpentflow::numerics::Shape;

namespace {

Field tone_1d(std::size_t n, std::size_t bin, double amplitude = 1.0, double phase = 0.0) {
    Field f = Field::zeros({n});
    for (std::size_t i = 0; i < n; ++i)
        f.values[i] = amplitude * std::sin(2.0 * 3.14159265358979323846 *
                                               static_cast<double>(bin * i) /
                                               static_cast<double>(n) +
                                           phase);
    return f;
}

} // namespace

TEST_CASE("dft examples") {
    Field constant({4}, {1.0, 1.0, 1.0, 1.0});
    const Spectrum zc = dft_forward(constant);
    CHECK(std::abs(zc.coeff[0] - std::complex<double>(4.0, 0.0)) < 1e-12);
    for (std::size_t k = 1; k < 4; ++k) CHECK(std::abs(zc.coeff[k]) < 1e-12);

    Field impulse({4}, {1.0, 0.0, 0.0, 0.0});
    const Spectrum zi = dft_forward(impulse);
    for (std::size_t k = 0; k < 4; ++k)
        CHECK(std::abs(zi.coeff[k] - std::complex<double>(1.0, 0.0)) < 1e-12);
}

TEST_CASE("fft agrees with the direct-sum oracle") {
    Rng rng(101);
    SUBCASE("1D, length 8") {
        Field f = sftest::random_field({8}, rng);
        const Spectrum z = dft_forward(f);
        const auto ref = sftest::direct_dft_1d(f.values);
        for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(z.coeff[k] - ref[k]) < 1e-10);
    }
    SUBCASE("non-power-of-two lengths") {
        for (const std::size_t n : {6ul, 12ul, 15ul, 21ul, 50ul, 97ul}) {
            Field f = sftest::random_field({n}, rng);
            const Spectrum z = dft_forward(f);
            const auto ref = sftest::direct_dft_1d(f.values);
            for (std::size_t k = 0; k < n; ++k) {
                CAPTURE(n);
                CHECK(std::abs(z.coeff[k] - ref[k]) < 1e-9);
            }
        }
    }
    SUBCASE("2D") {
        Field f = sftest::random_field({8, 12}, rng);
        const Spectrum z = dft_forward(f);
        const auto ref = sftest::direct_dft_2d(f.values, 8, 12);
        for (std::size_t k = 0; k < z.size(); ++k) CHECK(std::abs(z.coeff[k] - ref[k]) < 1e-9);
    }
}

TEST_CASE("roundtrip and Parseval") {
    Rng rng(55);
    for (const Shape shape : {Shape{64}, Shape{48}, Shape{16, 16}, Shape{12, 20}}) {
        Field f = sftest::random_field(shape, rng);
        const Spectrum z = dft_forward(f);
        const Field back = dft_inverse(z);
        CHECK(sftest::max_abs_diff(back.values, f.values) < 1e-9);
        // Unnormalized forward: sum |X_k|^2 = N * sum x^2.
        double spec_energy = 0.0;
        for (const auto& c : z.coeff) spec_energy += std::norm(c);
        CHECK(spec_energy / static_cast<double>(f.size()) ==
              doctest::Approx(energy(f)).epsilon(1e-9));
    }
}

TEST_CASE("radial mask") {
    SUBCASE("zero cutoff keeps nothing") {
        const SpectralMask m = radial_mask({8}, 0.0);
        CHECK(m.count() == 0);
    }
    SUBCASE("1D length 8 with cutoff 2 keeps bins 0, +1, -1") {
        const SpectralMask m = radial_mask({8}, 2.0);
        CHECK(m.count() == 3);
        CHECK(m.at(0));
        CHECK(m.at(1));
        CHECK(m.at(7)); // signed bin -1
        CHECK_FALSE(m.at(2));
        CHECK_FALSE(m.at(6));
    }
    SUBCASE("2D 8x8 with cutoff 1 keeps only DC") {
        const SpectralMask m = radial_mask({8, 8}, 1.0);
        CHECK(m.count() == 1);
        CHECK(m.at(0));
    }
    SUBCASE("cutoff above the Nyquist radius keeps everything") {
        const SpectralMask m = radial_mask({8, 8}, nyquist_radius({8, 8}) + 1.0);
        CHECK(m.count() == 64);
    }
    SUBCASE("negative cutoff is rejected") {
        CHECK_THROWS_AS(radial_mask({8}, -0.5), ValidationError);
    }
    SUBCASE("Hermitian symmetry: mask(xi) == mask(-xi)") {
        const SpectralMask m = radial_mask({8, 12}, 3.2);
        for (std::size_t ky = 0; ky < 8; ++ky)
            for (std::size_t kx = 0; kx < 12; ++kx) {
                const std::size_t ny = (8 - ky) % 8;
                const std::size_t nx = (12 - kx) % 12;
                CHECK(m.at(ky * 12 + kx) == m.at(ny * 12 + nx));
            }
    }
}

TEST_CASE("lowpass and highpass") {
    Rng rng(77);
    SUBCASE("cutoff above Nyquist is the identity") {
        Field f = sftest::random_field({32}, rng);
        const Field lp = lowpass(f, nyquist_radius(f.shape) + 1.0);
        CHECK(sftest::max_abs_diff(lp.values, f.values) < 1e-9);
    }
    SUBCASE("pure tone above the cutoff filters to zero") {
        const Field tone = tone_1d(32, 5);
        const Field lp = lowpass(tone, 3.0);
        CHECK(sftest::max_abs(lp.values) < 1e-9);
    }
    SUBCASE("two-tone signal keeps exactly the low tone") {
        const Field low = tone_1d(32, 1, 0.8, 0.3);
        const Field high = tone_1d(32, 5, 1.3, 1.1);
        Field mixed = Field::zeros({32});
        for (std::size_t i = 0; i < 32; ++i) mixed.values[i] = low.values[i] + high.values[i];
        const Field lp = lowpass(mixed, 3.0);
        CHECK(sftest::max_abs_diff(lp.values, low.values) < 1e-9);
        const Field hp = highpass(mixed, 3.0);
        CHECK(sftest::max_abs_diff(hp.values, high.values) < 1e-9);
    }
    SUBCASE("reconstruction, idempotence, linearity, energy split") {
        for (const Shape shape : {Shape{64}, Shape{16, 16}}) {
            Field x = sftest::random_field(shape, rng);
            Field y = sftest::random_field(shape, rng);
            const double wc = 3.0;
            const Field lx = lowpass(x, wc);
            const Field hx = highpass(x, wc);
            for (std::size_t i = 0; i < x.size(); ++i)
                CHECK(lx.values[i] + hx.values[i] == doctest::Approx(x.values[i]).epsilon(1e-9));
            const Field llx = lowpass(lx, wc);
            CHECK(sftest::max_abs_diff(llx.values, lx.values) < 1e-9);
            // linearity
            Field combo = Field::zeros(shape);
            for (std::size_t i = 0; i < x.size(); ++i)
                combo.values[i] = 2.0 * x.values[i] - 0.5 * y.values[i];
            const Field lc = lowpass(combo, wc);
            const Field ly = lowpass(y, wc);
            for (std::size_t i = 0; i < x.size(); ++i)
                CHECK(lc.values[i] ==
                      doctest::Approx(2.0 * lx.values[i] - 0.5 * ly.values[i]).epsilon(1e-9));
            // orthogonal band energies
            CHECK(energy(lx) + energy(hx) == doctest::Approx(energy(x)).epsilon(1e-9));
        }
    }
}

TEST_CASE("pseudo pairs") {
    Rng rng(202);
    SUBCASE("cutoff above Nyquist returns the input exactly") {
        Field x = sftest::random_field({32}, rng);
        const PseudoPair p = make_pseudo(x, nyquist_radius(x.shape) + 2.0, 9);
        CHECK(p.pseudo_input.values == x.values);
    }
    SUBCASE("zero cutoff returns the noise draw exactly") {
        Field x = sftest::random_field({32}, rng);
        const PseudoPair p = make_pseudo(x, 0.0, 9);
        Rng noise_rng(9);
        for (const double v : p.pseudo_input.values) CHECK(v == noise_rng.normal());
    }
    SUBCASE("band identities for a generic cutoff") {
        for (const Shape shape : {Shape{64}, Shape{16, 16}}) {
            Field x = sftest::random_field(shape, rng);
            const double wc = 4.0;
            const PseudoPair p = make_pseudo(x, wc, 1234);
            const Field lp_pseudo = lowpass(p.pseudo_input, wc);
            const Field lp_x = lowpass(x, wc);
            CHECK(sftest::max_abs_diff(lp_pseudo.values, lp_x.values) < 1e-9);
            Rng noise_rng(1234);
            Field eps = Field::zeros(shape);
            for (auto& v : eps.values) v = noise_rng.normal();
            const Field hp_pseudo = highpass(p.pseudo_input, wc);
            const Field hp_eps = highpass(eps, wc);
            CHECK(sftest::max_abs_diff(hp_pseudo.values, hp_eps.values) < 1e-9);
        }
    }
    SUBCASE("different seeds share the low band and differ on the high band") {
        Field x = sftest::random_field({64}, rng);
        const double wc = 5.0;
        const PseudoPair p1 = make_pseudo(x, wc, 1);
        const PseudoPair p2 = make_pseudo(x, wc, 2);
        const Field l1 = lowpass(p1.pseudo_input, wc);
        const Field l2 = lowpass(p2.pseudo_input, wc);
        CHECK(sftest::max_abs_diff(l1.values, l2.values) < 1e-9);
        const Field h1 = highpass(p1.pseudo_input, wc);
        const Field h2 = highpass(p2.pseudo_input, wc);
        CHECK(sftest::max_abs_diff(h1.values, h2.values) > 1e-3);
    }
}
