#pragma once

// Finite-difference sweeps over every differentiable op and over the adaptation
// objective, shared by the gradcheck command and the acceptance binary.

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "farl/dataset.hpp"
#include "farl/gradcheck.hpp"
#include "farl/trainer.hpp"

namespace farl {

struct CheckResult {
    std::string name;
    double max_rel_error = 0.0;
};

namespace detail {

inline Tensor gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

}  // namespace detail

/// One entry per op (plus im2col and a transformer layer) at a seeded 3x4 point.
inline std::vector<CheckResult> op_gradchecks(std::uint64_t seed) {
    const Tensor w = detail::gaussian(4, 3, seed + 1000);
    const Tensor other = detail::gaussian(3, 4, seed + 2000);
    const Tensor rowv = detail::gaussian(1, 4, seed + 3000);
    const Tensor weights = detail::gaussian(3, 4, seed + 4000);
    auto wsum = [&](Graph& g, Var y) {
        if (y.rows() == weights.rows() && y.cols() == weights.cols()) return sum(mul(y, g.constant(weights)));
        return sum(mul(y, y));
    };
    using Fn = std::function<Var(Graph&, Var)>;
    const std::vector<std::pair<const char*, Fn>> cases = {
        {"add", [&](Graph& g, Var x) { return wsum(g, add(x, g.constant(other))); }},
        {"sub", [&](Graph& g, Var x) { return wsum(g, sub(g.constant(other), x)); }},
        {"mul", [&](Graph& g, Var x) { return wsum(g, mul(x, x)); }},
        {"scale", [&](Graph& g, Var x) { return wsum(g, scale(x, -1.7)); }},
        {"add_row", [&](Graph& g, Var x) { return wsum(g, add_row(x, g.constant(rowv))); }},
        {"mul_row", [&](Graph& g, Var x) { return wsum(g, mul_row(x, slice_rows(x, 0, 1))); }},
        {"matmul", [&](Graph& g, Var x) { Var y = matmul(x, g.constant(w)); return sum(mul(y, y)); }},
        {"matmul_nt", [&](Graph& g, Var x) { return wsum(g, matmul_nt(x, g.constant(other))); }},
        {"transpose", [&](Graph& g, Var x) { return sum(mul(transpose(x), g.constant(w))); }},
        {"gelu", [&](Graph& g, Var x) { return wsum(g, gelu(x)); }},
        {"relu", [&](Graph& g, Var x) { return wsum(g, relu(x)); }},
        {"softmax_rows", [&](Graph& g, Var x) { return wsum(g, softmax_rows(x)); }},
        {"layer_norm", [&](Graph& g, Var x) { return wsum(g, layer_norm(x)); }},
        {"layer_norm_affine", [&](Graph& g, Var x) { return wsum(g, layer_norm(x, slice_rows(x, 1, 1), g.constant(rowv))); }},
        {"mean_rows", [&](Graph&, Var x) { Var m = mean_rows(x); return sum(mul(m, m)); }},
        {"mean", [&](Graph&, Var x) { return mul(mean(x), mean(mul(x, x))); }},
        {"concat_rows", [&](Graph& g, Var x) { return sum(mul(concat_rows({x, x}), concat_rows({g.constant(weights), x}))); }},
        {"concat_cols", [&](Graph&, Var x) { Var c = concat_cols({x, slice_cols(x, 1, 2)}); return sum(mul(c, c)); }},
        {"slice", [&](Graph&, Var x) { Var s = slice_cols(slice_rows(x, 1, 2), 1, 3); return sum(mul(s, s)); }},
        {"cross_entropy", [&](Graph&, Var x) { return cross_entropy(x, std::vector<int>{0, 3, 1}); }},
        {"cosine_similarity", [&](Graph& g, Var x) { return cosine_similarity(slice_rows(x, 0, 1), g.constant(rowv)); }},
        {"l2_normalize_rows", [&](Graph& g, Var x) { return wsum(g, l2_normalize_rows(x)); }},
    };
    std::vector<CheckResult> out;
    const Tensor point = detail::gaussian(3, 4, seed);
    for (const auto& [name, fn] : cases) out.push_back({name, gradcheck(fn, point)});

    const ConvGeometry geo{5, 6, 2};
    const Tensor cw = detail::gaussian(geo.out_height() * geo.out_width(), 9 * 2, seed + 5000);
    out.push_back({"im2col", gradcheck([&](Graph& g, Var x) { return sum(mul(im2col(x, geo), g.constant(cw))); },
                                       detail::gaussian(30, 2, seed + 6000))});

    nn::Rng rng(seed + 7000);
    nn::TransformerLayer layer(8, 2, 2, rng);
    const Tensor lw = detail::gaussian(5, 8, seed + 8000);
    out.push_back({"transformer_layer", gradcheck([&](Graph& g, Var x) { return sum(mul(layer(g, x), g.constant(lw))); },
                                                  detail::gaussian(5, 8, seed + 9000))});
    return out;
}

/// Gradient checks for a small adapter on a small frozen backbone, at the `point`-th
/// cached sample. R, the projections and rep_head are checked against the full
/// objective. The stream CNNs, attention blocks and fusion MLP reach that objective only
/// through the text conditioning, where their gradients sit near 1e-8 and drown in
/// finite-difference rounding, so they are checked against a fixed random readout of
/// R_fused - R instead: the CNNs and MLP on the cached sample, the attention blocks on unit-scale
/// Gaussian stream tokens (CNN tokens of one image are too alike to give the key
/// projection a resolvable gradient). Large parameters are probed at up to `max_coords` strided coordinates.
inline std::vector<CheckResult> loss_gradchecks(std::uint64_t point, std::size_t max_coords = 8) {
    EncoderConfig enc;
    enc.layers = 2;
    enc.inject_layer = 2;
    enc.d_model = 16;
    enc.heads = 2;
    enc.d_embed = 8;
    enc.mlp_ratio = 2;
    nn::Rng rng(41);
    Backbone bb(enc, Vocabulary(data::default_vocabulary()), rng);
    nn::set_trainable(bb, false);
    const data::Dataset ds = data::generate(11, 64);
    const FrozenCache cache = build_cache(bb, ds, data::sample_16shot(ds, 3, 2), ds.split.base_classes);

    AdapterConfig ac;
    ac.k_tokens = 2;
    ac.d_rep = 8;
    ac.cnn_hidden = 4;
    ac.rep_init_std = 1.0;  // the pipeline default; at 0.02 the attention is flat and W_Q, W_K gradients vanish
    nn::Rng arng(100 + point);
    Adapter ad(ac, bb, arng);
    const SampleCache& s = cache.samples[point % cache.samples.size()];
    auto loss = [&](Graph& g) {
        FarlOutputs out = farl_forward(g, bb, ad, s, cache.classes);
        return farl_loss(out, s.label, s.frozen_class_feature, cache.classes, {}).total;
    };
    const Tensor readout = detail::gaussian(ac.k_tokens, ac.d_rep, 500 + point);
    auto fused_probe = [&](Graph& g) {
        std::optional<Var> fp = ad.phase_cnn(g, s.views.phase), fa = ad.amp_cnn(g, s.views.amp);
        Var rep = g.param(ad.rep);
        EnrichResult e = enrich(g, rep, fp, fa, ad.phase_attn, ad.amp_attn, ad.fusion);
        return sum(mul(sub(e.fused, rep), g.constant(readout)));
    };
    const std::size_t n_tokens = s.views.phase.height * s.views.phase.width / 16;
    const Tensor tokens_p = detail::gaussian(n_tokens, ac.d_rep, 600 + point);
    const Tensor tokens_a = detail::gaussian(n_tokens, ac.d_rep, 700 + point);
    auto attn_probe = [&](Graph& g) {
        Var rep = g.param(ad.rep);
        EnrichResult e = enrich(g, rep, g.constant(tokens_p), g.constant(tokens_a), ad.phase_attn, ad.amp_attn, ad.fusion);
        return sum(mul(sub(e.fused, rep), g.constant(readout)));
    };
    using Loss = std::function<Var(Graph&)>;
    auto group = [&](const char* name, auto& module, const Loss& fn) {
        auto ps = nn::parameters(module);
        return CheckResult{name, gradcheck(fn, ps, 1e-5, max_coords)};
    };
    std::vector<CheckResult> out;
    std::vector<Parameter*> rep{&ad.rep};
    out.push_back({"R", gradcheck(loss, rep, 1e-5, max_coords)});
    out.push_back(group("phase_cnn", ad.phase_cnn, fused_probe));
    out.push_back(group("amp_cnn", ad.amp_cnn, fused_probe));
    out.push_back(group("phase_attn", ad.phase_attn, attn_probe));
    out.push_back(group("amp_attn", ad.amp_attn, attn_probe));
    out.push_back(group("fusion", ad.fusion, fused_probe));
    out.push_back(group("projections", ad.bank, loss));
    std::vector<Parameter*> head{&ad.rep_head};
    out.push_back({"rep_head", gradcheck(loss, head, 1e-5, max_coords)});
    return out;
}

}  // namespace farl
