#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "farl/image.hpp"

namespace farl::fourier {

using Complex = std::complex<double>;

/// Complex H x W frequency-domain array of one image channel.
struct Spectrum {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> re;
    std::vector<double> im;

    Spectrum() = default;
    Spectrum(std::size_t h, std::size_t w) : height(h), width(w), re(h * w, 0.0), im(h * w, 0.0) {}

    std::size_t size() const { return re.size(); }

    std::vector<double> amplitude() const {
        std::vector<double> a(size());
        for (std::size_t i = 0; i < size(); ++i) a[i] = std::hypot(re[i], im[i]);
        return a;
    }

    /// Bins whose amplitude is zero, or negligible against the largest bin, get phase 0.
    std::vector<double> phase() const {
        const auto amp = amplitude();
        double peak = 0.0;
        for (double v : amp) peak = std::max(peak, v);
        const double floor = kNegligible * peak;
        std::vector<double> p(size(), 0.0);
        for (std::size_t i = 0; i < size(); ++i)
            if (amp[i] > floor) p[i] = std::atan2(im[i], re[i]);
        return p;
    }

    static constexpr double kNegligible = 1e-10;
};

inline bool is_power_of_two(std::size_t n) { return n && !(n & (n - 1)); }

/// In-place 1D transform. sign = -1 forward, +1 inverse (unnormalized).
inline void transform_1d(std::vector<Complex>& a, int sign) {
    const std::size_t n = a.size();
    if (n <= 1) return;
    if (!is_power_of_two(n)) {
        std::vector<Complex> out(n);
        for (std::size_t k = 0; k < n; ++k) {
            Complex s = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) /
                                   static_cast<double>(n);
                s += a[t] * Complex(std::cos(ang), std::sin(ang));
            }
            out[k] = s;
        }
        a = std::move(out);
        return;
    }
    // iterative radix-2 Cooley-Tukey
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        for (std::size_t k = 0; k < half; ++k) {
            const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
            const Complex w(std::cos(ang), std::sin(ang));
            for (std::size_t i = 0; i < n; i += len) {
                const Complex u = a[i + k];
                const Complex v = a[i + k + half] * w;
                a[i + k] = u + v;
                a[i + k + half] = u - v;
            }
        }
    }
}

inline void transform_2d(std::vector<Complex>& data, std::size_t h, std::size_t w, int sign) {
    std::vector<Complex> line(w);
    for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(data.begin() + static_cast<long>(y * w), w, line.begin());
        transform_1d(line, sign);
        std::copy(line.begin(), line.end(), data.begin() + static_cast<long>(y * w));
    }
    line.resize(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) line[y] = data[y * w + x];
        transform_1d(line, sign);
        for (std::size_t y = 0; y < h; ++y) data[y * w + x] = line[y];
    }
}

/// Unnormalized forward 2D DFT of a real H x W channel.
inline Spectrum dft2(std::span<const double> channel, std::size_t h, std::size_t w) {
    if (h == 0 || w == 0 || channel.size() != h * w) throw ShapeError("dft2: channel size does not match dims");
    std::vector<Complex> data(channel.begin(), channel.end());
    transform_2d(data, h, w, -1);
    Spectrum s(h, w);
    for (std::size_t i = 0; i < data.size(); ++i) {
        s.re[i] = data[i].real();
        s.im[i] = data[i].imag();
    }
    return s;
}

/// Inverse 2D DFT with 1/(H*W) normalization, both parts.
inline std::vector<Complex> idft2_complex(const Spectrum& s) {
    std::vector<Complex> data(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) data[i] = Complex(s.re[i], s.im[i]);
    transform_2d(data, s.height, s.width, +1);
    const double norm = 1.0 / static_cast<double>(s.size());
    for (auto& v : data) v *= norm;
    return data;
}

/// Real part of the normalized inverse transform.
inline std::vector<double> idft2(const Spectrum& s) {
    const auto data = idft2_complex(s);
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = data[i].real();
    return out;
}

/// Per channel Re(F^-1(e^{jP})): original phase, unit amplitude.
inline Image phase_only(const Image& img) {
    Image out(img.height, img.width, img.channels);
    for (std::size_t c = 0; c < img.channels; ++c) {
        const Spectrum s = dft2(img.channel(c), img.height, img.width);
        const auto phase = s.phase();
        Spectrum unit(img.height, img.width);
        for (std::size_t i = 0; i < unit.size(); ++i) {
            unit.re[i] = std::cos(phase[i]);
            unit.im[i] = std::sin(phase[i]);
        }
        const auto rec = idft2(unit);
        std::copy(rec.begin(), rec.end(), out.channel(c).begin());
    }
    return out;
}

/// Per channel Re(F^-1(A)): original amplitude, zero phase.
inline Image amp_only(const Image& img) {
    Image out(img.height, img.width, img.channels);
    for (std::size_t c = 0; c < img.channels; ++c) {
        const Spectrum s = dft2(img.channel(c), img.height, img.width);
        Spectrum mag(img.height, img.width);
        mag.re = s.amplitude();
        const auto rec = idft2(mag);
        std::copy(rec.begin(), rec.end(), out.channel(c).begin());
    }
    return out;
}

constexpr double kMinChannelVariance = 1e-12;

/// Per-channel standardization; a channel with variance below 1e-12 becomes all zeros.
inline Image normalize_component(const Image& img) {
    Image out = img;
    const double n = static_cast<double>(img.plane());
    for (std::size_t c = 0; c < img.channels; ++c) {
        auto ch = out.channel(c);
        double mean = 0.0;
        for (double v : ch) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : ch) var += (v - mean) * (v - mean);
        var /= n;
        if (var < kMinChannelVariance) {
            std::fill(ch.begin(), ch.end(), 0.0);
            continue;
        }
        const double inv = 1.0 / std::sqrt(var);
        for (double& v : ch) v = (v - mean) * inv;
    }
    return out;
}

}  // namespace farl::fourier
