#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "farl/fourier.hpp"
#include "farl/trainer.hpp"

namespace farl {

/// 2bn / (b + n); 0 when both are 0.
inline double harmonic_mean(double base, double novel) {
    if (base < 0.0 || base > 100.0 || novel < 0.0 || novel > 100.0)
        throw std::domain_error("harmonic_mean: accuracies must lie in [0, 100]");
    if (base + novel == 0.0) return 0.0;
    return 2.0 * base * novel / (base + novel);
}

struct Metrics {
    double base_acc = 0.0;
    double novel_acc = 0.0;
    double hm = 0.0;
    std::uint64_t seed = 0;
    std::string variant;
};

struct EvalOptions {
    double base_weight = 0.5;     // weight of softmax(logits_v) in the base-split mixture
    bool condition_text = true;   // false: text side receives R instead of R_fused
};

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Class index predicted for one cached image. The base rule mixes both heads'
/// probabilities; the novel rule reads the class-feature logits only and never
/// builds the representation feature.
inline std::size_t predict(const Backbone& bb, const Adapter& ad, const SampleCache& s,
                           const std::vector<ClassCache>& classes, bool base_rule, const EvalOptions& opt = {}) {
    Graph g(false);
    const ForwardOptions fwd{.want_rep_feature = base_rule, .condition_text = opt.condition_text};
    FarlOutputs out = farl_forward(g, bb, ad, s, classes, fwd);
    if (!base_rule) return argmax(out.logits_v.value().data());
    const Tensor pv = softmax_rows_value(out.logits_v.value());
    const Tensor pr = softmax_rows_value(out.logits_r->value());
    std::vector<double> mix(pv.size());
    for (std::size_t c = 0; c < mix.size(); ++c) mix[c] = opt.base_weight * pv[c] + (1.0 - opt.base_weight) * pr[c];
    return argmax(mix);
}

inline std::vector<std::size_t> predict_all(const Backbone& bb, const Adapter& ad, const FrozenCache& pool,
                                            bool base_rule, const EvalOptions& opt = {}) {
    std::vector<std::size_t> out;
    out.reserve(pool.samples.size());
    for (const auto& s : pool.samples) out.push_back(predict(bb, ad, s, pool.classes, base_rule, opt));
    return out;
}

inline double accuracy(const std::vector<std::size_t>& predicted, const FrozenCache& pool) {
    if (pool.samples.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        hits += predicted[i] == static_cast<std::size_t>(pool.samples[i].label);
    return 100.0 * static_cast<double>(hits) / static_cast<double>(pool.samples.size());
}

/// Base accuracy with the combined rule on the base pool, novel accuracy with the
/// class-feature rule on the novel pool; each pool carries its own candidate classes.
inline Metrics evaluate(const Backbone& bb, const Adapter& ad, const FrozenCache& base_pool,
                        const FrozenCache& novel_pool, const EvalOptions& opt = {}) {
    Metrics m;
    m.variant = std::string(variant_name(ad.cfg.variant));
    m.base_acc = accuracy(predict_all(bb, ad, base_pool, true, opt), base_pool);
    m.novel_acc = accuracy(predict_all(bb, ad, novel_pool, false, opt), novel_pool);
    m.hm = harmonic_mean(m.base_acc, m.novel_acc);
    return m;
}

/// Frozen-backbone zero-shot predictions from cached features.
inline std::vector<std::size_t> zero_shot_predictions(const FrozenCache& pool) {
    std::vector<std::size_t> out;
    for (const auto& s : pool.samples) {
        std::vector<double> sims;
        for (const auto& c : pool.classes) {
            double dot = 0.0;
            for (std::size_t k = 0; k < c.frozen_text_feature.size(); ++k)
                dot += s.frozen_class_feature[k] * c.frozen_text_feature[k];
            sims.push_back(dot);
        }
        out.push_back(argmax(sims));
    }
    return out;
}

inline Metrics zero_shot(const FrozenCache& base_pool, const FrozenCache& novel_pool) {
    Metrics m;
    m.variant = "ZERO_SHOT";
    m.base_acc = accuracy(zero_shot_predictions(base_pool), base_pool);
    m.novel_acc = accuracy(zero_shot_predictions(novel_pool), novel_pool);
    m.hm = harmonic_mean(m.base_acc, m.novel_acc);
    return m;
}

// ---------------------------------------------------------------- ablation

struct AblationPools {
    FrozenCache train;   // one pool per shot seed is not needed: shots are fixed per dataset
    FrozenCache base;
    FrozenCache novel;
};

inline AblationPools build_pools(const Backbone& bb, const data::Dataset& ds, std::uint64_t shot_seed,
                                 std::size_t shots, bool decompose_normalized = false) {
    AblationPools p;
    p.train = build_cache(bb, ds, data::sample_16shot(ds, shot_seed, shots), ds.split.base_classes,
                          decompose_normalized);
    p.base = build_cache(bb, ds, data::evaluation_pool(ds, true), ds.split.base_classes, decompose_normalized);
    p.novel = build_cache(bb, ds, data::evaluation_pool(ds, false), ds.split.novel_classes, decompose_normalized);
    return p;
}

/// Trains and evaluates every (variant, seed) pair with the same budget. Rows come
/// out variant-major in the order given.
inline std::vector<Metrics> run_ablation(const Backbone& bb, const AblationPools& pools,
                                         const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
                                         const AdaptConfig& base_cfg, const EvalOptions& opt = {},
                                         const std::function<void(const Metrics&)>& on_row = {}) {
    std::vector<Metrics> rows;
    for (Variant v : variants)
        for (std::uint64_t seed : seeds) {
            AdaptConfig cfg = base_cfg;
            cfg.adapter.variant = v;
            cfg.seed = seed;
            Adapter ad = train_adapt(bb, pools.train, cfg);
            Metrics m = evaluate(bb, ad, pools.base, pools.novel, opt);
            m.seed = seed;
            rows.push_back(m);
            if (on_row) on_row(m);
        }
    return rows;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median HM of one variant's rows.
inline double median_hm(const std::vector<Metrics>& rows, Variant v) {
    std::vector<double> hms;
    for (const auto& m : rows)
        if (m.variant == variant_name(v)) hms.push_back(m.hm);
    return median(hms);
}

// ---------------------------------------------------------------- rendering

/// Per-channel min-max scaling to [0, 1]; a channel with range below 1e-6 is left as is.
inline Image minmax_per_channel(const Image& img) {
    Image out = img;
    for (std::size_t c = 0; c < img.channels; ++c) {
        auto ch = out.channel(c);
        const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
        const double a = *lo, range = *hi - *lo;
        if (range < 1e-6) continue;
        for (double& v : ch) v = (v - a) / range;
    }
    return out;
}

/// ITU-R BT.601 luma of a 3-channel image; a 1-channel image is copied.
inline Image luma(const Image& img) {
    if (img.channels == 1) return img;
    if (img.channels != 3) throw ShapeError("luma needs 1 or 3 channels");
    Image out(img.height, img.width, 1);
    for (std::size_t i = 0; i < img.plane(); ++i)
        out.pixels[i] = 0.299 * img.channel(0)[i] + 0.587 * img.channel(1)[i] + 0.114 * img.channel(2)[i];
    return out;
}

struct Decomposition {
    Image phase;     // grayscale, [0, 1]
    Image amp;       // grayscale, [0, 1]
    Image spectrum;  // centered log(1 + |F|), grayscale, [0, 1]
};

inline Decomposition render_decomposition(const Image& raw) {
    Decomposition d;
    d.phase = luma(minmax_per_channel(fourier::phase_only(raw)));
    d.amp = luma(minmax_per_channel(fourier::amp_only(raw)));
    Image spec(raw.height, raw.width, raw.channels);
    for (std::size_t c = 0; c < raw.channels; ++c) {
        const auto s = fourier::dft2(raw.channel(c), raw.height, raw.width);
        const auto amp = s.amplitude();
        for (std::size_t y = 0; y < raw.height; ++y)
            for (std::size_t x = 0; x < raw.width; ++x) {
                const std::size_t sy = (y + raw.height / 2) % raw.height, sx = (x + raw.width / 2) % raw.width;
                spec.at(c, sy, sx) = std::log1p(amp[y * raw.width + x]);
            }
    }
    d.spectrum = minmax_per_channel(luma(spec));
    return d;
}

/// Bilinear resize of a single-channel grid with pixel-center alignment.
inline Image bilinear_resize(const Image& src, std::size_t height, std::size_t width) {
    if (src.channels != 1) throw ShapeError("bilinear_resize expects one channel");
    Image out(height, width, 1);
    auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
        const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
        return std::clamp(s, 0.0, static_cast<double>(n_in - 1));
    };
    for (std::size_t y = 0; y < height; ++y) {
        const double sy = coord(y, height, src.height);
        const auto y0 = static_cast<std::size_t>(std::floor(sy));
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double sx = coord(x, width, src.width);
            const auto x0 = static_cast<std::size_t>(std::floor(sx));
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const double fx = sx - static_cast<double>(x0);
            out.at(0, y, x) = (1 - fy) * ((1 - fx) * src.at(0, y0, x0) + fx * src.at(0, y0, x1)) +
                              fy * ((1 - fx) * src.at(0, y1, x0) + fx * src.at(0, y1, x1));
        }
    }
    return out;
}

/// K x N attention averaged over K, laid out on the stream's token grid.
inline Image attention_grid(const Tensor& attn, std::size_t grid_h, std::size_t grid_w) {
    if (attn.cols() != grid_h * grid_w)
        throw ShapeError("attention has " + std::to_string(attn.cols()) + " columns, grid is " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w));
    Image g(grid_h, grid_w, 1);
    for (std::size_t n = 0; n < attn.cols(); ++n) {
        double s = 0.0;
        for (std::size_t k = 0; k < attn.rows(); ++k) s += attn(k, n);
        g.pixels[n] = s / static_cast<double>(attn.rows());
    }
    return g;
}

struct AttentionExport {
    std::optional<Image> phase_heat;  // absent when the variant has no phase stream
    std::optional<Image> amp_heat;
    Tensor attn_phase, attn_amp;      // raw K x N maps, when present
    Decomposition decomposition;
};

inline AttentionExport export_attention(const Backbone& bb, const Adapter& ad, const Image& raw,
                                        bool decompose_normalized = false) {
    if (raw.height != bb.cfg.image_size || raw.width != bb.cfg.image_size || raw.channels != bb.cfg.channels)
        throw ShapeError("attention export expects the backbone's image geometry");
    AttentionExport ex;
    const StreamViews views = make_views(raw, decompose_normalized);
    auto [phase_img, amp_img] = stream_inputs(views, ad.cfg.variant);
    Graph g(false);
    Var rep = g.param(ad.rep);
    std::optional<Var> fp, fa;
    if (phase_img) fp = ad.phase_cnn(g, *phase_img);
    if (amp_img) fa = ad.amp_cnn(g, *amp_img);
    EnrichResult r = enrich(g, rep, fp, fa, ad.phase_attn, ad.amp_attn, ad.fusion);
    const std::size_t gh = StreamCNN::token_side(raw.height), gw = StreamCNN::token_side(raw.width);
    auto heat = [&](const Tensor& attn) {
        return minmax_per_channel(bilinear_resize(attention_grid(attn, gh, gw), raw.height, raw.width));
    };
    if (r.attn_phase) {
        ex.attn_phase = r.attn_phase->value();
        ex.phase_heat = heat(ex.attn_phase);
    }
    if (r.attn_amp) {
        ex.attn_amp = r.attn_amp->value();
        ex.amp_heat = heat(ex.attn_amp);
    }
    ex.decomposition = render_decomposition(raw);
    return ex;
}

}  // namespace farl
