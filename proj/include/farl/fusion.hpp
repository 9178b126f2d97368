#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "farl/nn.hpp"

namespace farl {

/// Which streams feed the dual cross-attention.
enum class Variant { Full, PhaseOnly, AmpOnly, Spatial, PhaseAndSpatial };

inline constexpr Variant kAllVariants[] = {Variant::Full, Variant::PhaseOnly, Variant::AmpOnly, Variant::Spatial,
                                           Variant::PhaseAndSpatial};

inline std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "FULL";
        case Variant::PhaseOnly: return "PHASE_ONLY";
        case Variant::AmpOnly: return "AMP_ONLY";
        case Variant::Spatial: return "SPATIAL";
        case Variant::PhaseAndSpatial: return "PHASE_AND_SPATIAL";
    }
    return "?";
}

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline Variant parse_variant(std::string_view name) {
    for (Variant v : kAllVariants)
        if (variant_name(v) == name) return v;
    throw ConfigError("unknown variant '" + std::string(name) +
                      "' (expected FULL, PHASE_ONLY, AMP_ONLY, SPATIAL or PHASE_AND_SPATIAL)");
}

/// Cross-attention with the representation tokens as queries:
/// attn = softmax(Q K^T / sqrt(d_head)), out = (attn V) W_O. No bias, no intra-block residual.
struct CrossAttnBlock {
    std::size_t heads = 1;
    std::size_t d_head = 64;
    Parameter wq, wk, wv;  // [d_rep, heads*d_head]
    Parameter wo;          // [heads*d_head, d_rep]

    CrossAttnBlock() = default;
    CrossAttnBlock(std::size_t d_rep, std::size_t num_heads, nn::Rng& rng) : heads(num_heads) {
        if (num_heads == 0 || d_rep % num_heads != 0)
            throw ShapeError("cross-attention: d_rep " + std::to_string(d_rep) + " not divisible by " +
                             std::to_string(num_heads) + " heads");
        d_head = d_rep / num_heads;
        const std::size_t inner = heads * d_head;
        wq = Parameter(nn::fan_in_uniform(d_rep, {d_rep, inner}, rng));
        wk = Parameter(nn::fan_in_uniform(d_rep, {d_rep, inner}, rng));
        wv = Parameter(nn::fan_in_uniform(d_rep, {d_rep, inner}, rng));
        wo = Parameter(nn::fan_in_uniform(inner, {inner, d_rep}, rng));
    }

    struct Result {
        Var out;   // [K, d_rep]
        Var attn;  // [K, N], averaged over heads
    };

    Result operator()(Graph& g, Var queries, Var kv) const {
        const std::size_t d_rep = wq.value.rows();
        if (queries.cols() != d_rep || kv.cols() != d_rep)
            throw ShapeError("cross-attention: queries " + shape_string(queries.shape()) + ", tokens " +
                             shape_string(kv.shape()) + ", expected width " + std::to_string(d_rep));
        Var q = matmul(queries, g.param(wq));
        Var k = matmul(kv, g.param(wk));
        Var v = matmul(kv, g.param(wv));
        std::vector<Var> probs;
        Var ctx = nn::scaled_dot_attention(q, k, v, heads, &probs);
        Var attn = probs.front();
        for (std::size_t h = 1; h < probs.size(); ++h) attn = add(attn, probs[h]);
        if (probs.size() > 1) attn = scale(attn, 1.0 / static_cast<double>(probs.size()));
        return {matmul(ctx, g.param(wo)), attn};
    }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".wq", self.wq);
        f(prefix + ".wk", self.wk);
        f(prefix + ".wv", self.wv);
        f(prefix + ".wo", self.wo);
    }
};

/// 2*d_rep -> 2*d_rep -> d_rep with GELU in between.
struct FusionMLP {
    nn::Linear fc1, fc2;
    double beta = 1.0;

    FusionMLP() = default;
    FusionMLP(std::size_t d_rep, nn::Rng& rng, double residual_weight = 1.0)
        : fc1(2 * d_rep, 2 * d_rep, rng), fc2(2 * d_rep, d_rep, rng), beta(residual_weight) {}

    Var operator()(Graph& g, Var x) const { return fc2(g, gelu(fc1(g, x))); }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        nn::Linear::visit(self.fc1, prefix + ".fc1", f);
        nn::Linear::visit(self.fc2, prefix + ".fc2", f);
    }
};

struct EnrichResult {
    Var fused;                  // R + beta * fusion
    Var phase_tokens;           // R'_phase (or the surviving branch in single-stream variants)
    Var amp_tokens;             // R'_amp
    std::optional<Var> attn_phase;
    std::optional<Var> attn_amp;
};

/// Dual cross-attention, fusion MLP and residual. In PHASE_ONLY / AMP_ONLY the
/// surviving branch is duplicated into both halves of the fusion input.
inline EnrichResult enrich(Graph& g, Var rep, std::optional<Var> phase_feats, std::optional<Var> amp_feats,
                           const CrossAttnBlock& phase_block, const CrossAttnBlock& amp_block,
                           const FusionMLP& mlp) {
    if (!phase_feats && !amp_feats) throw UsageError("enrich: at least one stream is required");
    EnrichResult r{};
    std::optional<Var> rp, ra;
    if (phase_feats) {
        auto res = phase_block(g, rep, *phase_feats);
        rp = res.out;
        r.attn_phase = res.attn;
    }
    if (amp_feats) {
        auto res = amp_block(g, rep, *amp_feats);
        ra = res.out;
        r.attn_amp = res.attn;
    }
    r.phase_tokens = rp ? *rp : *ra;
    r.amp_tokens = ra ? *ra : *rp;
    Var fusion = mlp(g, concat_cols({r.phase_tokens, r.amp_tokens}));
    r.fused = add(rep, scale(fusion, mlp.beta));
    return r;
}

}  // namespace farl
