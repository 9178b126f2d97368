#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "farl/fusion.hpp"
#include "farl/image.hpp"

namespace farl::data {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::array<std::string_view, 8> kClassNames = {"circle", "square", "triangle", "cross",
                                                                "ring",   "bar",    "ell",      "diamond"};

enum class StyleFamily { Solid, Stripes, Checker, Noise };

inline constexpr std::array<StyleFamily, 4> kAllStyles = {StyleFamily::Solid, StyleFamily::Stripes,
                                                         StyleFamily::Checker, StyleFamily::Noise};

inline std::string_view style_name(StyleFamily s) {
    switch (s) {
        case StyleFamily::Solid: return "solid";
        case StyleFamily::Stripes: return "stripes";
        case StyleFamily::Checker: return "checker";
        case StyleFamily::Noise: return "noise";
    }
    return "?";
}

inline StyleFamily parse_style(std::string_view name) {
    for (auto s : kAllStyles)
        if (style_name(s) == name) return s;
    throw DataError("unknown style family '" + std::string(name) + "'");
}

/// Which pool a sample belongs to: backbone pretraining, few-shot adaptation, or evaluation.
enum class Role { Pretrain, Train, Test };

inline std::string_view role_name(Role r) {
    switch (r) {
        case Role::Pretrain: return "pretrain";
        case Role::Train: return "train";
        case Role::Test: return "test";
    }
    return "?";
}

inline Role parse_role(std::string_view name) {
    for (Role r : {Role::Pretrain, Role::Train, Role::Test})
        if (role_name(r) == name) return r;
    throw DataError("unknown split tag '" + std::string(name) + "'");
}

struct SplitSpec {
    std::vector<int> base_classes{0, 1, 2, 3};
    std::vector<int> novel_classes{4, 5, 6, 7};
    std::vector<StyleFamily> train_styles{StyleFamily::Solid, StyleFamily::Stripes};
    std::vector<StyleFamily> shifted_styles{StyleFamily::Checker, StyleFamily::Noise};

    void validate() const {
        std::set<int> seen;
        for (int c : base_classes) {
            if (c < 0 || c >= static_cast<int>(kClassNames.size())) throw ConfigError("class id out of range");
            seen.insert(c);
        }
        for (int c : novel_classes) {
            if (c < 0 || c >= static_cast<int>(kClassNames.size())) throw ConfigError("class id out of range");
            if (seen.count(c)) throw ConfigError("base and novel classes overlap at id " + std::to_string(c));
        }
        for (auto s : train_styles)
            if (std::find(shifted_styles.begin(), shifted_styles.end(), s) != shifted_styles.end())
                throw ConfigError("train and shifted styles overlap at '" + std::string(style_name(s)) + "'");
        if (base_classes.empty() || novel_classes.empty() || train_styles.empty() || shifted_styles.empty())
            throw ConfigError("split needs non-empty class and style sets");
    }

    bool is_base(int c) const { return std::find(base_classes.begin(), base_classes.end(), c) != base_classes.end(); }
};

struct Pose {
    double dx = 0.0, dy = 0.0;     // pixels
    double rotation = 0.0;         // degrees
    double scale = 1.0;
};

struct Sample {
    Image image;
    int class_id = 0;
    StyleFamily style = StyleFamily::Solid;
    Role role = Role::Pretrain;
    Pose pose;
};

struct Dataset {
    SplitSpec split;
    std::vector<Sample> samples;

    std::vector<std::size_t> indices(Role role) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].role == role) out.push_back(i);
        return out;
    }
};

constexpr std::size_t kImageSize = 32;

/// Whether the canonical-frame point (u, v), in pixels from the center, lies inside a shape.
inline bool inside_shape(int class_id, double u, double v) {
    const double au = std::abs(u), av = std::abs(v);
    switch (class_id) {
        case 0: return u * u + v * v <= 56.25;                                     // circle
        case 1: return au <= 8.0 && av <= 8.0;                                      // square
        case 2: {                                                                   // triangle
            if (v > 8.0) return false;
            const double half = (v + 10.0) * (10.0 / 18.0);
            return v >= -10.0 && au <= half;
        }
        case 3: return (au <= 3.0 && av <= 10.0) || (av <= 3.0 && au <= 10.0);     // cross
        case 4: { const double r2 = u * u + v * v; return r2 <= 100.0 && r2 >= 30.25; }  // ring
        case 5: return au <= 11.0 && av <= 4.0;                                     // bar
        case 6: return (u >= -8.0 && u <= -2.0 && av <= 10.0) || (u >= -8.0 && u <= 8.0 && v >= 4.0 && v <= 10.0);  // ell
        case 7: return au + av <= 11.0;                                             // diamond
        default: throw DataError("unknown class id " + std::to_string(class_id));
    }
}

/// Anti-aliased coverage mask (4x4 supersampling) of a class under a pose.
inline std::vector<double> rasterize(int class_id, const Pose& pose, std::size_t size = kImageSize) {
    std::vector<double> mask(size * size, 0.0);
    const double th = -pose.rotation * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double center = static_cast<double>(size) / 2.0;
    constexpr int kSub = 4;
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSub; ++sy)
                for (int sx = 0; sx < kSub; ++sx) {
                    const double px = static_cast<double>(x) + (sx + 0.5) / kSub - center - pose.dx;
                    const double py = static_cast<double>(y) + (sy + 0.5) / kSub - center - pose.dy;
                    const double u = (c * px - s * py) / pose.scale;
                    const double v = (s * px + c * py) / pose.scale;
                    hits += inside_shape(class_id, u, v) ? 1 : 0;
                }
            mask[y * size + x] = static_cast<double>(hits) / (kSub * kSub);
        }
    return mask;
}

/// Paints a mask with a style. Foreground is brighter than background in every
/// channel, and textures modulate both regions without moving the mask boundary.
/// Values are quantized to multiples of 1/255 so PPM persistence is lossless.
inline Image paint(const std::vector<double>& mask, StyleFamily style, std::mt19937_64& rng,
                   std::size_t size = kImageSize) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::array<double, 3> fg{}, bg{};
    for (int ch = 0; ch < 3; ++ch) {
        fg[ch] = 0.6 + 0.4 * unit(rng);
        bg[ch] = 0.4 * unit(rng);
    }
    const double strength = 0.15 + 0.15 * unit(rng);
    // stripes use an integer wave vector so the pattern tiles the image exactly
    const double wave_x = std::floor(5.0 + 7.0 * unit(rng)) * (unit(rng) < 0.5 ? 0.0 : 1.0);
    const double wave_y = wave_x == 0.0 ? std::floor(5.0 + 7.0 * unit(rng)) : std::floor(-6.0 + 13.0 * unit(rng));
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const int period = unit(rng) < 0.5 ? 2 : 4;  // checker cell size
    const double offset = unit(rng) * period * 2;
    // smooth value noise: random lattice every `cell` pixels, bilinearly interpolated
    const std::size_t cell = 4;
    const std::size_t lattice = size / cell + 2;
    std::vector<double> knots(style == StyleFamily::Noise ? lattice * lattice : 0);
    for (auto& k : knots) k = unit(rng);
    std::vector<double> texture(size * size, 0.5);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            double t = 0.5;
            const double fx = static_cast<double>(x), fy = static_cast<double>(y);
            switch (style) {
                case StyleFamily::Solid: break;
                case StyleFamily::Stripes:
                    t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (wave_x * fx + wave_y * fy) / static_cast<double>(size) + phase);
                    break;
                case StyleFamily::Checker: {
                    const auto cx = static_cast<long>(std::floor((fx + offset) / period));
                    const auto cy = static_cast<long>(std::floor((fy + offset) / period));
                    t = ((cx + cy) % 2 == 0) ? 1.0 : 0.0;
                    break;
                }
                case StyleFamily::Noise: {
                    const std::size_t gx = x / cell, gy = y / cell;
                    const double u = (fx - static_cast<double>(gx * cell)) / cell;
                    const double v = (fy - static_cast<double>(gy * cell)) / cell;
                    auto knot = [&](std::size_t i, std::size_t j) { return knots[j * lattice + i]; };
                    t = (1 - u) * (1 - v) * knot(gx, gy) + u * (1 - v) * knot(gx + 1, gy) +
                        (1 - u) * v * knot(gx, gy + 1) + u * v * knot(gx + 1, gy + 1);
                    break;
                }
            }
            texture[y * size + x] = t;
        }
    Image img(size, size, 3);
    for (int ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < size * size; ++i) {
            const double base = bg[ch] + mask[i] * (fg[ch] - bg[ch]);
            const double v = std::clamp(base + strength * (texture[i] - 0.5), 0.0, 1.0);
            img.channel(ch)[i] = std::round(v * 255.0) / 255.0;
        }
    return img;
}

/// Role of the i-th sample of a class: half pretraining, a quarter each for adaptation and test.
inline Role role_for_index(std::size_t i) {
    switch (i % 4) {
        case 0:
        case 1: return Role::Pretrain;
        case 2: return Role::Train;
        default: return Role::Test;
    }
}

/// Deterministic shapes-by-styles dataset. Pretraining samples draw from every
/// style; adaptation samples and base-class test samples use the train styles;
/// novel-class test samples use only the shifted styles.
inline Dataset generate(std::uint64_t seed, std::size_t n_per_class, const SplitSpec& split = {}) {
    split.validate();
    Dataset ds;
    ds.split = split;
    std::vector<int> classes = split.base_classes;
    classes.insert(classes.end(), split.novel_classes.begin(), split.novel_classes.end());
    std::sort(classes.begin(), classes.end());
    for (int c : classes)
        for (std::size_t i = 0; i < n_per_class; ++i) {
            // one independent stream per (class, index)
            std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                               static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(i)};
            std::mt19937_64 rng(sseq);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            Sample s;
            s.class_id = c;
            s.role = role_for_index(i);
            const bool shifted = s.role == Role::Test && !split.is_base(c);
            std::vector<StyleFamily> pool;
            if (s.role == Role::Pretrain) pool.assign(kAllStyles.begin(), kAllStyles.end());
            else pool = shifted ? split.shifted_styles : split.train_styles;
            s.style = pool[std::min(pool.size() - 1, static_cast<std::size_t>(unit(rng) * pool.size()))];
            s.pose.dx = -4.0 + 8.0 * unit(rng);
            s.pose.dy = -4.0 + 8.0 * unit(rng);
            s.pose.rotation = -15.0 + 30.0 * unit(rng);
            s.pose.scale = 0.9 + 0.2 * unit(rng);
            s.image = paint(rasterize(c, s.pose), s.style, rng);
            ds.samples.push_back(std::move(s));
        }
    return ds;
}

/// Exactly 16 train-role samples per base class, seeded selection without replacement.
inline std::vector<std::size_t> sample_16shot(const Dataset& ds, std::uint64_t seed, std::size_t shots = 16) {
    std::vector<std::size_t> out;
    std::mt19937_64 rng(seed);
    for (int c : ds.split.base_classes) {
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < ds.samples.size(); ++i)
            if (ds.samples[i].class_id == c && ds.samples[i].role == Role::Train) pool.push_back(i);
        if (pool.size() < shots)
            throw DataError("class '" + std::string(kClassNames[c]) + "' has " + std::to_string(pool.size()) +
                            " training samples, need " + std::to_string(shots));
        // partial Fisher-Yates
        for (std::size_t k = 0; k < shots; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
            std::swap(pool[k], pool[pick(rng)]);
        }
        std::sort(pool.begin(), pool.begin() + static_cast<long>(shots));
        out.insert(out.end(), pool.begin(), pool.begin() + static_cast<long>(shots));
    }
    return out;
}

/// Test-role samples of the base or novel classes.
inline std::vector<std::size_t> evaluation_pool(const Dataset& ds, bool base) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].role == Role::Test && ds.split.is_base(ds.samples[i].class_id) == base) out.push_back(i);
    return out;
}

/// Words needed to prompt every class.
inline std::vector<std::string> default_vocabulary() {
    std::vector<std::string> words{"a", "photo", "of"};
    for (auto n : kClassNames) words.emplace_back(n);
    return words;
}

/// Pearson correlation of two equally sized pixel arrays (0 when either is constant).
inline double pearson(std::span<const double> a, std::span<const double> b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace farl::data
