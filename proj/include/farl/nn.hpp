#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "farl/ops.hpp"

namespace farl::nn {

using Rng = std::mt19937_64;

inline Tensor uniform(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

inline Tensor normal(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

/// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor fan_in_uniform(std::size_t fan_in, Shape shape, Rng& rng) {
    return uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

/// y = x W + b with W stored [in, out].
struct Linear {
    Parameter weight;
    Parameter bias;
    bool has_bias = true;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
        : weight(fan_in_uniform(in, {in, out}, rng)), has_bias(with_bias) {
        if (has_bias) bias = Parameter(fan_in_uniform(in, {1, out}, rng), false);
    }

    std::size_t in_features() const { return weight.value.rows(); }
    std::size_t out_features() const { return weight.value.cols(); }

    Var operator()(Graph& g, Var x) const {
        Var y = matmul(x, g.param(weight));
        return has_bias ? add_row(y, g.param(bias)) : y;
    }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".weight", self.weight);
        if (self.has_bias) f(prefix + ".bias", self.bias);
    }
};

/// Row-wise layer normalization with learned gain and offset.
struct LayerNorm {
    Parameter gamma;
    Parameter beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim) : gamma(Tensor({1, dim}, 1.0), false), beta(Tensor({1, dim}), false) {}

    Var operator()(Graph& g, Var x) const { return layer_norm(x, g.param(gamma), g.param(beta)); }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".gamma", self.gamma);
        f(prefix + ".beta", self.beta);
    }
};

/// Multi-head scaled dot-product attention of queries [m, h*d] over keys/values [n, h*d].
/// When `probs` is given, the per-head attention matrices are appended to it.
inline Var scaled_dot_attention(Var q, Var k, Var v, std::size_t heads, std::vector<Var>* probs = nullptr) {
    const std::size_t width = q.cols();
    if (k.cols() != width || v.cols() != width || k.rows() != v.rows())
        throw ShapeError("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                         shape_string(v.shape()));
    if (heads == 0 || width % heads != 0)
        throw ShapeError("attention: width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
    const std::size_t d = width / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    if (heads == 1) {
        Var p = softmax_rows(scale(matmul_nt(q, k), inv_sqrt_d));
        if (probs) probs->push_back(p);
        return matmul(p, v);
    }
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * d, d);
        Var kh = slice_cols(k, h * d, d);
        Var vh = slice_cols(v, h * d, d);
        Var p = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_d));
        if (probs) probs->push_back(p);
        outs.push_back(matmul(p, vh));
    }
    return concat_cols(outs);
}

/// Pre-norm transformer block: x + MHA(LN(x)), then + MLP(LN(x)).
struct TransformerLayer {
    LayerNorm ln1, ln2;
    Linear wq, wk, wv, wo;
    Linear fc1, fc2;
    std::size_t heads = 1;

    TransformerLayer() = default;
    TransformerLayer(std::size_t dim, std::size_t num_heads, std::size_t mlp_ratio, Rng& rng)
        : ln1(dim),
          ln2(dim),
          wq(dim, dim, rng),
          wk(dim, dim, rng),
          wv(dim, dim, rng),
          wo(dim, dim, rng),
          fc1(dim, dim * mlp_ratio, rng),
          fc2(dim * mlp_ratio, dim, rng),
          heads(num_heads) {}

    Var operator()(Graph& g, Var x) const {
        Var h = ln1(g, x);
        Var attn = scaled_dot_attention(wq(g, h), wk(g, h), wv(g, h), heads);
        x = add(x, wo(g, attn));
        Var m = fc2(g, gelu(fc1(g, ln2(g, x))));
        return add(x, m);
    }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        LayerNorm::visit(self.ln1, prefix + ".ln1", f);
        Linear::visit(self.wq, prefix + ".wq", f);
        Linear::visit(self.wk, prefix + ".wk", f);
        Linear::visit(self.wv, prefix + ".wv", f);
        Linear::visit(self.wo, prefix + ".wo", f);
        LayerNorm::visit(self.ln2, prefix + ".ln2", f);
        Linear::visit(self.fc1, prefix + ".fc1", f);
        Linear::visit(self.fc2, prefix + ".fc2", f);
    }
};

/// Collects (name, parameter) pairs from any module exposing a static visit().
template <class Module>
std::vector<std::pair<std::string, Parameter*>> named_parameters(Module& m, const std::string& prefix) {
    std::vector<std::pair<std::string, Parameter*>> out;
    Module::visit(m, prefix, [&](const std::string& name, Parameter& p) { out.emplace_back(name, &p); });
    return out;
}

template <class Module>
std::vector<Parameter*> parameters(Module& m) {
    std::vector<Parameter*> out;
    Module::visit(m, "", [&](const std::string&, Parameter& p) { out.push_back(&p); });
    return out;
}

template <class Module>
void set_trainable(Module& m, bool trainable) {
    Module::visit(m, "", [&](const std::string&, Parameter& p) { p.trainable = trainable; });
}

template <class Module>
void zero_grad(Module& m) {
    Module::visit(m, "", [](const std::string&, Parameter& p) { p.zero_grad(); });
}

/// FNV-1a over every parameter's name and raw value bytes, in visit order.
template <class Module>
std::uint64_t parameter_hash(const Module& m) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    Module::visit(m, "", [&](const std::string& name, const Parameter& p) {
        mix(name.data(), name.size());
        mix(p.value.ptr(), p.value.size() * sizeof(double));
    });
    return h;
}

}  // namespace farl::nn
