#pragma once

#include <optional>
#include <string>
#include <vector>

#include "farl/encoder.hpp"
#include "farl/fourier.hpp"
#include "farl/fusion.hpp"
#include "farl/stream.hpp"

namespace farl {

struct AdapterConfig {
    std::size_t k_tokens = 5;
    std::size_t d_rep = 64;
    std::size_t cnn_hidden = 16;
    std::size_t attn_heads = 1;
    double beta = 1.0;
    double rep_init_std = 0.02;
    Variant variant = Variant::Full;
};

/// Everything FARL learns on top of the frozen backbone.
struct Adapter {
    AdapterConfig cfg;
    Parameter rep;  // R, [K, d_rep]
    StreamCNN phase_cnn, amp_cnn;
    CrossAttnBlock phase_attn, amp_attn;
    FusionMLP fusion;
    ProjectionBank bank;
    Parameter rep_head;  // f_r projection, [d_model, d_embed]

    Adapter() = default;

    /// Parameters are drawn in a fixed order independent of the variant, so variants
    /// sharing a seed start from identical shared weights.
    Adapter(const AdapterConfig& config, const Backbone& bb, nn::Rng& rng) : cfg(config) {
        if (cfg.k_tokens == 0) throw ShapeError("k_tokens must be >= 1");
        rep = Parameter(nn::normal({cfg.k_tokens, cfg.d_rep}, cfg.rep_init_std, rng), false);
        phase_cnn = StreamCNN(bb.cfg.channels, cfg.cnn_hidden, cfg.d_rep, rng);
        amp_cnn = StreamCNN(bb.cfg.channels, cfg.cnn_hidden, cfg.d_rep, rng);
        phase_attn = CrossAttnBlock(cfg.d_rep, cfg.attn_heads, rng);
        amp_attn = CrossAttnBlock(cfg.d_rep, cfg.attn_heads, rng);
        fusion = FusionMLP(cfg.d_rep, rng, cfg.beta);
        bank = ProjectionBank(bb.cfg, cfg.d_rep, rng);
        rep_head = Parameter(bb.image.proj.value);
    }

    bool uses_phase_branch() const { return cfg.variant != Variant::AmpOnly; }
    bool uses_amp_branch() const { return cfg.variant != Variant::PhaseOnly; }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + "rep", self.rep);
        StreamCNN::visit(self.phase_cnn, prefix + "phase_cnn", f);
        StreamCNN::visit(self.amp_cnn, prefix + "amp_cnn", f);
        CrossAttnBlock::visit(self.phase_attn, prefix + "phase_attn", f);
        CrossAttnBlock::visit(self.amp_attn, prefix + "amp_attn", f);
        FusionMLP::visit(self.fusion, prefix + "fusion", f);
        ProjectionBank::visit(self.bank, prefix + "bank", f);
        f(prefix + "rep_head", self.rep_head);
    }
};

/// Normalized inputs for the two streams.
struct StreamViews {
    Image phase;  // normalize(phase_only(x))
    Image amp;    // normalize(amp_only(x))
    Image rgb;    // normalize(x)
};

/// When `decompose_normalized` is set the Fourier split runs on the standardized
/// image instead of the raw [0, 1] pixels.
inline StreamViews make_views(const Image& raw, bool decompose_normalized = false) {
    StreamViews v;
    v.rgb = fourier::normalize_component(raw);
    const Image& src = decompose_normalized ? v.rgb : raw;
    v.phase = fourier::normalize_component(fourier::phase_only(src));
    v.amp = fourier::normalize_component(fourier::amp_only(src));
    return v;
}

/// Per-variant routing of images into the phase and amplitude streams.
inline std::pair<const Image*, const Image*> stream_inputs(const StreamViews& v, Variant variant) {
    switch (variant) {
        case Variant::Full: return {&v.phase, &v.amp};
        case Variant::PhaseOnly: return {&v.phase, nullptr};
        case Variant::AmpOnly: return {nullptr, &v.amp};
        case Variant::Spatial: return {&v.rgb, &v.rgb};
        case Variant::PhaseAndSpatial: return {&v.phase, &v.rgb};
    }
    return {nullptr, nullptr};
}

/// Cached, adapter-independent state of one image.
struct SampleCache {
    StreamViews views;
    Tensor image_prefix;  // sequence entering layer J
    Tensor frozen_class_feature;
    int label = -1;  // index into the candidate class list
};

/// Cached, adapter-independent state of one class prompt.
struct ClassCache {
    std::vector<int> prompt;
    Tensor text_prefix;
    Tensor frozen_text_feature;
};

inline SampleCache cache_sample(const Backbone& bb, const Image& raw, int label, bool decompose_normalized = false) {
    SampleCache s;
    s.views = make_views(raw, decompose_normalized);
    s.image_prefix = image_prefix_state(bb, raw);
    Graph g(false);
    s.frozen_class_feature = image_from_prefix(g, bb, g.constant(s.image_prefix), std::nullopt, nullptr)
                                 .class_feature.value();
    s.label = label;
    return s;
}

inline ClassCache cache_class(const Backbone& bb, const std::string& name) {
    ClassCache c;
    c.prompt = bb.vocab.prompt(name);
    c.text_prefix = text_prefix_state(bb, c.prompt);
    Graph g(false);
    c.frozen_text_feature = text_from_prefix(g, bb, g.constant(c.text_prefix), std::nullopt).value();
    return c;
}

struct ForwardOptions {
    bool want_rep_feature = true;
    bool condition_text = true;  // inject R_fused into the text side; otherwise inject R
};

struct FarlOutputs {
    EnrichResult enriched;
    Var rep;                          // R as a graph node
    Var class_feature;                // f_v
    std::optional<Var> rep_feature;   // f_r
    Var text_features;                // [C, d_embed]
    Var logits_v;                     // [1, C]
    std::optional<Var> logits_r;
};

/// Streams -> fusion -> asymmetric injection -> features and logits for one image.
inline FarlOutputs farl_forward(Graph& g, const Backbone& bb, const Adapter& ad, const SampleCache& sample,
                                const std::vector<ClassCache>& classes, const ForwardOptions& opt = {}) {
    FarlOutputs out;
    out.rep = g.param(ad.rep);
    auto [phase_img, amp_img] = stream_inputs(sample.views, ad.cfg.variant);
    std::optional<Var> fp, fa;
    if (phase_img) fp = ad.phase_cnn(g, *phase_img);
    if (amp_img) fa = ad.amp_cnn(g, *amp_img);
    out.enriched = enrich(g, out.rep, fp, fa, ad.phase_attn, ad.amp_attn, ad.fusion);

    const std::size_t j0 = bb.cfg.inject_layer;
    Injection image_inj{out.rep, &ad.bank.image, j0};
    ImageFeatures img = image_from_prefix(g, bb, g.constant(sample.image_prefix), image_inj,
                                          opt.want_rep_feature ? &ad.rep_head : nullptr);
    out.class_feature = img.class_feature;
    out.rep_feature = img.rep_feature;

    Injection text_inj{opt.condition_text ? out.enriched.fused : out.rep, &ad.bank.text, j0};
    std::vector<Var> feats;
    feats.reserve(classes.size());
    for (const auto& c : classes) feats.push_back(text_from_prefix(g, bb, g.constant(c.text_prefix), text_inj));
    out.text_features = concat_rows(feats);
    out.logits_v = similarity_logits(out.class_feature, out.text_features, bb.cfg.temperature);
    if (out.rep_feature) out.logits_r = similarity_logits(*out.rep_feature, out.text_features, bb.cfg.temperature);
    return out;
}

}  // namespace farl
