#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "farl/fourier.hpp"

using namespace farl;
using namespace farl::fourier;

namespace {

std::vector<double> random_plane(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

Image random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
    Image img(h, w, c);
    img.pixels = random_plane(h * w * c, seed);
    return img;
}

// Direct double sum, O(N^4).
Spectrum naive_dft(const std::vector<double>& x, std::size_t h, std::size_t w) {
    Spectrum s(h, w);
    for (std::size_t k = 0; k < h; ++k)
        for (std::size_t l = 0; l < w; ++l) {
            double re = 0.0, im = 0.0;
            for (std::size_t m = 0; m < h; ++m)
                for (std::size_t n = 0; n < w; ++n) {
                    const double ang = -2.0 * std::numbers::pi *
                                       (static_cast<double>(k * m) / static_cast<double>(h) +
                                        static_cast<double>(l * n) / static_cast<double>(w));
                    re += x[m * w + n] * std::cos(ang);
                    im += x[m * w + n] * std::sin(ang);
                }
            s.re[k * w + l] = re;
            s.im[k * w + l] = im;
        }
    return s;
}

// Direct inverse sum, complex output.
std::vector<std::complex<double>> naive_idft(const Spectrum& s) {
    const std::size_t h = s.height, w = s.width;
    std::vector<std::complex<double>> out(h * w);
    for (std::size_t m = 0; m < h; ++m)
        for (std::size_t n = 0; n < w; ++n) {
            std::complex<double> acc = 0.0;
            for (std::size_t k = 0; k < h; ++k)
                for (std::size_t l = 0; l < w; ++l) {
                    const double ang = 2.0 * std::numbers::pi *
                                       (static_cast<double>(k * m) / static_cast<double>(h) +
                                        static_cast<double>(l * n) / static_cast<double>(w));
                    acc += std::complex<double>(s.re[k * w + l], s.im[k * w + l]) * std::polar(1.0, ang);
                }
            out[m * w + n] = acc / static_cast<double>(h * w);
        }
    return out;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(Dft2, DeltaAndConstant) {
    Spectrum d = dft2(std::vector<double>{1, 0, 0, 0}, 2, 2);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(d.re[i], 1.0, 1e-15);
        EXPECT_NEAR(d.im[i], 0.0, 1e-15);
    }
    Spectrum c = dft2(std::vector<double>(12, 0.25), 3, 4);
    EXPECT_NEAR(c.re[0], 0.25 * 12, 1e-12);
    for (std::size_t i = 1; i < 12; ++i) {
        EXPECT_NEAR(c.re[i], 0.0, 1e-12);
        EXPECT_NEAR(c.im[i], 0.0, 1e-12);
    }
}

TEST(Dft2, MatchesNaiveOracleOnAllSizes) {
    const std::size_t sizes[] = {2, 3, 4, 7, 8, 16};
    for (auto h : sizes)
        for (auto w : sizes) {
            const auto x = random_plane(h * w, h * 31 + w);
            const Spectrum fast = dft2(x, h, w), ref = naive_dft(x, h, w);
            EXPECT_LT(max_diff(fast.re, ref.re), 1e-9) << h << "x" << w;
            EXPECT_LT(max_diff(fast.im, ref.im), 1e-9) << h << "x" << w;
        }
}

TEST(Idft2, RoundTripAndParseval) {
    for (std::size_t n : {16u, 32u}) {
        const auto x = random_plane(n * n, n);
        const Spectrum s = dft2(x, n, n);
        EXPECT_LT(max_diff(idft2(s), x), 1e-9);
        double e_space = 0.0, e_freq = 0.0;
        for (double v : x) e_space += v * v;
        for (std::size_t i = 0; i < s.size(); ++i) e_freq += s.re[i] * s.re[i] + s.im[i] * s.im[i];
        e_freq /= static_cast<double>(n * n);
        EXPECT_LT(std::abs(e_space - e_freq) / e_space, 1e-9);
    }
}

TEST(Idft2, OnesSpectrumGivesDelta) {
    Spectrum s(2, 2);
    std::fill(s.re.begin(), s.re.end(), 1.0);
    const auto x = idft2(s);
    EXPECT_NEAR(x[0], 1.0, 1e-15);
    for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(x[i], 0.0, 1e-15);
}

TEST(Idft2, ConjugateSymmetricSpectrumIsReal) {
    const std::size_t h = 8, w = 8;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    Spectrum s(h, w);
    for (std::size_t k = 0; k < h; ++k)
        for (std::size_t l = 0; l < w; ++l) {
            const std::size_t kk = (h - k) % h, ll = (w - l) % w;
            const std::size_t i = k * w + l, j = kk * w + ll;
            if (j < i) continue;
            s.re[i] = n(rng);
            s.im[i] = i == j ? 0.0 : n(rng);
            s.re[j] = s.re[i];
            s.im[j] = -s.im[i];
        }
    const auto full = idft2_complex(s);
    const auto ref = naive_idft(s);
    for (std::size_t i = 0; i < full.size(); ++i) {
        EXPECT_LT(std::abs(full[i].imag()), 1e-9);
        EXPECT_LT(std::abs(ref[i].imag()), 1e-9);
        EXPECT_NEAR(full[i].real(), ref[i].real(), 1e-9);
    }
}

TEST(PhaseOnly, ScaleInvarianceAndDelta) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Image img = random_image(32, 32, 3, seed);
        Image twice = img;
        for (auto& v : twice.pixels) v *= 2.0;
        EXPECT_LT(max_diff(phase_only(img).pixels, phase_only(twice).pixels), 1e-12);
    }
    Image delta(8, 8, 1);
    delta.at(0, 3, 5) = 1.0;
    EXPECT_LT(max_diff(phase_only(delta).pixels, delta.pixels), 1e-12);
}

TEST(PhaseOnly, CheckerboardMatchesTwoStepOracle) {
    Image img(32, 32, 1);
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) img.at(0, y, x) = ((x / 4 + y / 4) % 2) ? 1.0 : 0.0;
    // oracle: naive DFT, phase with the same negligible-bin rule, naive inverse of unit amplitude
    Spectrum s = naive_dft(img.pixels, 32, 32);
    double peak = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) peak = std::max(peak, std::hypot(s.re[i], s.im[i]));
    Spectrum unit(32, 32);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double p = std::hypot(s.re[i], s.im[i]) > Spectrum::kNegligible * peak ? std::atan2(s.im[i], s.re[i]) : 0.0;
        unit.re[i] = std::cos(p);
        unit.im[i] = std::sin(p);
    }
    const auto ref = naive_idft(unit);
    const Image out = phase_only(img);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.pixels[i], ref[i].real(), 1e-9);
}

TEST(AmpOnly, ShiftInvarianceConstantAndOracle) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Image img = random_image(32, 32, 3, 100 + seed);
        Image shifted = circular_shift(img, static_cast<long>(seed % 7) - 3, static_cast<long>(seed % 11));
        EXPECT_LT(max_diff(amp_only(img).pixels, amp_only(shifted).pixels), 1e-9);
    }
    Image c(4, 4, 1, 0.375);
    EXPECT_LT(max_diff(amp_only(c).pixels, c.pixels), 1e-12);

    Image r = random_image(16, 16, 1, 55);
    Spectrum s = naive_dft(r.pixels, 16, 16);
    Spectrum mag(16, 16);
    for (std::size_t i = 0; i < s.size(); ++i) mag.re[i] = std::hypot(s.re[i], s.im[i]);
    const auto ref = naive_idft(mag);
    const Image out = amp_only(r);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.pixels[i], ref[i].real(), 1e-9);
}

TEST(Normalize, Cases) {
    Image half(2, 2, 1);
    half.pixels = {0, 1, 0, 1};
    EXPECT_EQ(normalize_component(half).pixels, (std::vector<double>{-1, 1, -1, 1}));
    Image flat(3, 3, 1, 0.7);
    for (double v : normalize_component(flat).pixels) EXPECT_EQ(v, 0.0);
    Image once = normalize_component(random_image(8, 8, 3, 9));
    EXPECT_LT(max_diff(normalize_component(once).pixels, once.pixels), 1e-9);
}

TEST(Decomposition, DeterministicAndFinite) {
    Image img = random_image(32, 32, 3, 77);
    EXPECT_EQ(phase_only(img), phase_only(img));
    EXPECT_EQ(amp_only(img), amp_only(img));
    Image zero(8, 8, 1);
    for (double v : phase_only(zero).pixels) EXPECT_TRUE(std::isfinite(v));
}
