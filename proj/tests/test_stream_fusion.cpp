#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "farl/fusion.hpp"
#include "farl/gradcheck.hpp"
#include "farl/optim.hpp"
#include "farl/stream.hpp"

using namespace farl;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

Image random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Image img(h, w, c);
    for (auto& v : img.pixels) v = n(rng);
    return img;
}

// Nested-loop 3x3 stride-2 pad-1 convolution on channel-major planes, then bias and GELU.
std::vector<std::vector<double>> direct_conv(const std::vector<std::vector<double>>& in, std::size_t h, std::size_t w,
                                             const Tensor& weight, const Tensor& bias) {
    const std::size_t cin = in.size(), cout = weight.cols();
    const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
    std::vector<std::vector<double>> out(cout, std::vector<double>(ho * wo));
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x) {
                double s = 0.0;
                for (std::size_t ky = 0; ky < 3; ++ky)
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const long iy = static_cast<long>(2 * y + ky) - 1, ix = static_cast<long>(2 * x + kx) - 1;
                        if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                        for (std::size_t c = 0; c < cin; ++c)
                            s += in[c][static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] *
                                 weight((ky * 3 + kx) * cin + c, o);
                    }
                out[o][y * wo + x] = gelu_value(s + bias[o]);
            }
    return out;
}

}  // namespace

TEST(StreamCNN, ShapeArithmetic) {
    nn::Rng rng(1);
    StreamCNN cnn(3, 16, 64, rng);
    Graph g(false);
    Var t = cnn(g, random_image(32, 32, 3, 2));
    EXPECT_EQ(t.rows(), 64u);
    EXPECT_EQ(t.cols(), 64u);
    Var odd = cnn(g, random_image(9, 6, 3, 3));
    EXPECT_EQ(odd.rows(), StreamCNN::token_count(9, 6));
    EXPECT_EQ(odd.rows(), 3u * 2u);
    EXPECT_THROW(cnn(g, random_image(3, 8, 3, 4)), ShapeError);
    EXPECT_THROW(cnn(g, random_image(8, 8, 1, 4)), ShapeError);
}

TEST(StreamCNN, ZeroImageZeroBiasGivesZeroTokens) {
    nn::Rng rng(1);
    StreamCNN cnn(3, 16, 64, rng);
    cnn.b1.value.fill(0.0);
    cnn.b2.value.fill(0.0);
    Graph g(false);
    for (double v : cnn(g, Image(32, 32, 3)).value().data()) EXPECT_EQ(v, 0.0);
}

TEST(StreamCNN, MatchesDirectConvolutionOracle) {
    nn::Rng rng(5);
    StreamCNN cnn(3, 16, 64, rng);
    const Image img = random_image(32, 32, 3, 6);
    std::vector<std::vector<double>> planes;
    for (std::size_t c = 0; c < 3; ++c) planes.emplace_back(img.channel(c).begin(), img.channel(c).end());
    auto h1 = direct_conv(planes, 32, 32, cnn.w1.value, cnn.b1.value);
    auto h2 = direct_conv(h1, 16, 16, cnn.w2.value, cnn.b2.value);
    Graph g(false);
    const Tensor tokens = cnn(g, img).value();
    for (std::size_t n = 0; n < 64; ++n)
        for (std::size_t d = 0; d < 64; ++d) EXPECT_NEAR(tokens(n, d), h2[d][n], 1e-12);
}

TEST(StreamCNN, GradcheckAllParameters) {
    nn::Rng rng(7);
    StreamCNN cnn(3, 4, 8, rng);
    const Image img = random_image(8, 8, 3, 8);
    const Tensor w = random_matrix(4, 8, 9);
    auto params = nn::parameters(cnn);
    auto loss = [&](Graph& g) { return sum(mul(cnn(g, img), g.constant(w))); };
    EXPECT_LT(gradcheck(loss, params), 1e-4);
}

TEST(StreamCNN, IndependentStreamsDivergeAfterOneSidedStep) {
    nn::Rng rng(9);
    StreamCNN phase(3, 16, 64, rng);
    StreamCNN amp = phase;  // identical start
    const Image img = random_image(32, 32, 3, 10);
    auto params = nn::parameters(phase);
    Graph g;
    Var y = sum(phase(g, img));
    g.backward(y);
    g.accumulate_into(params);
    AdamW opt({.lr = 1e-2});
    opt.step(params);
    Graph h(false);
    EXPECT_GT(max_abs_diff(phase(h, img).value(), amp(h, img).value()), 0.0);
}

TEST(CrossAttention, RowsSumToOne) {
    nn::Rng rng(11);
    for (std::size_t heads : {1u, 2u, 4u}) {
        CrossAttnBlock block(8, heads, rng);
        Graph g(false);
        auto r = block(g, g.constant(random_matrix(5, 8, 12, 3.0)), g.constant(random_matrix(17, 8, 13, 3.0)));
        const Tensor& a = r.attn.value();
        for (std::size_t i = 0; i < a.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(CrossAttention, SingleKeyClosedForm) {
    nn::Rng rng(14);
    CrossAttnBlock block(6, 1, rng);
    Graph g(false);
    const Tensor kv = random_matrix(1, 6, 15);
    auto r = block(g, g.constant(random_matrix(4, 6, 16)), g.constant(kv));
    Graph h(false);
    const Tensor expected = matmul(matmul(h.constant(kv), h.param(block.wv)), h.param(block.wo)).value();
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(r.attn.value()(k, 0), 1.0);
        for (std::size_t d = 0; d < 6; ++d) EXPECT_EQ(r.out.value()(k, d), expected[d]);
    }
}

TEST(CrossAttention, IdenticalKeysClosedForm) {
    nn::Rng rng(17);
    CrossAttnBlock block(6, 1, rng);
    const Tensor row = random_matrix(1, 6, 18);
    Tensor kv = Tensor::matrix(5, 6);
    for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t d = 0; d < 6; ++d) kv(n, d) = row[d];
    Graph g(false);
    auto r = block(g, g.constant(random_matrix(3, 6, 19)), g.constant(kv));
    Graph h(false);
    const Tensor expected = matmul(matmul(h.constant(row), h.param(block.wv)), h.param(block.wo)).value();
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t n = 0; n < 5; ++n) EXPECT_EQ(r.attn.value()(k, n), 0.2);
        for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(r.out.value()(k, d), expected[d], 1e-15);
    }
}

TEST(CrossAttention, HandWorkedExample) {
    CrossAttnBlock block;
    block.heads = 1;
    block.d_head = 2;
    block.wq = Parameter(Tensor::identity(2));
    block.wk = Parameter(Tensor::identity(2));
    block.wv = Parameter(Tensor::identity(2));
    block.wo = Parameter(Tensor::identity(2));
    Graph g(false);
    auto r = block(g, g.constant(Tensor::from_rows({{1, 0}})), g.constant(Tensor::from_rows({{1, 0}, {0, 1}})));
    EXPECT_NEAR(r.attn.value()[0], 0.6698, 1e-4);
    EXPECT_NEAR(r.attn.value()[1], 0.3302, 1e-4);
    block.wv = Parameter(Tensor::from_rows({{2, 0}, {0, 2}}));
    Graph w(false);
    auto r2 = block(w, w.constant(Tensor::from_rows({{1, 0}})), w.constant(Tensor::from_rows({{1, 0}, {0, 1}})));
    const double a0 = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
    EXPECT_NEAR(r2.out.value()[0], 2.0 * a0, 1e-12);
    EXPECT_NEAR(r2.out.value()[1], 2.0 * (1.0 - a0), 1e-12);
    EXPECT_NEAR(r2.out.value()[0], 1.3396, 1e-4);
    EXPECT_NEAR(r2.out.value()[1], 0.6604, 1e-4);
}

TEST(CrossAttention, KeyPermutationEquivariance) {
    nn::Rng rng(20);
    CrossAttnBlock block(8, 2, rng);
    const Tensor q = random_matrix(5, 8, 21), kv = random_matrix(12, 8, 22);
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(23));
    Tensor kvp = kv;
    for (std::size_t n = 0; n < 12; ++n)
        for (std::size_t d = 0; d < 8; ++d) kvp(n, d) = kv(perm[n], d);
    Graph g(false);
    auto a = block(g, g.constant(q), g.constant(kv));
    auto b = block(g, g.constant(q), g.constant(kvp));
    EXPECT_LT(max_abs_diff(a.out.value(), b.out.value()), 1e-9);
    for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t n = 0; n < 12; ++n) EXPECT_NEAR(b.attn.value()(k, n), a.attn.value()(k, perm[n]), 1e-9);
}

TEST(CrossAttention, RejectsWidthMismatch) {
    nn::Rng rng(24);
    CrossAttnBlock block(8, 1, rng);
    Graph g(false);
    EXPECT_THROW(block(g, g.constant(Tensor::matrix(2, 8)), g.constant(Tensor::matrix(3, 6))), ShapeError);
    EXPECT_THROW(CrossAttnBlock(8, 3, rng), ShapeError);
}

namespace {

struct EnrichFixture {
    nn::Rng rng{30};
    CrossAttnBlock phase{8, 1, rng}, amp{8, 1, rng};
    FusionMLP mlp{8, rng};
    Parameter rep{random_matrix(5, 8, 31)};
    Tensor fp = random_matrix(16, 8, 32), fa = random_matrix(16, 8, 33);
};

// Straight-line recomputation of the enrichment step from raw tensors.
Tensor enrich_oracle(const EnrichFixture& f) {
    auto mm = [](const Tensor& a, const Tensor& b) {
        Tensor c = Tensor::matrix(a.rows(), b.cols());
        for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < b.cols(); ++j)
                for (std::size_t p = 0; p < a.cols(); ++p) c(i, j) += a(i, p) * b(p, j);
        return c;
    };
    auto attend = [&](const CrossAttnBlock& blk, const Tensor& kv) {
        Tensor q = mm(f.rep.value, blk.wq.value), k = mm(kv, blk.wk.value), v = mm(kv, blk.wv.value);
        Tensor a = Tensor::matrix(q.rows(), k.rows());
        for (std::size_t i = 0; i < q.rows(); ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < k.rows(); ++j) {
                double s = 0.0;
                for (std::size_t d = 0; d < q.cols(); ++d) s += q(i, d) * k(j, d);
                a(i, j) = s / std::sqrt(static_cast<double>(q.cols()));
                mx = std::max(mx, a(i, j));
            }
            double z = 0.0;
            for (std::size_t j = 0; j < k.rows(); ++j) z += (a(i, j) = std::exp(a(i, j) - mx));
            for (std::size_t j = 0; j < k.rows(); ++j) a(i, j) /= z;
        }
        return mm(mm(a, v), blk.wo.value);
    };
    const Tensor rp = attend(f.phase, f.fp), ra = attend(f.amp, f.fa);
    Tensor cat = Tensor::matrix(rp.rows(), 16);
    for (std::size_t i = 0; i < rp.rows(); ++i)
        for (std::size_t d = 0; d < 8; ++d) {
            cat(i, d) = rp(i, d);
            cat(i, 8 + d) = ra(i, d);
        }
    Tensor h = mm(cat, f.mlp.fc1.weight.value);
    for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) = gelu_value(h(i, j) + f.mlp.fc1.bias.value[j]);
    Tensor o = mm(h, f.mlp.fc2.weight.value);
    Tensor fused = f.rep.value;
    for (std::size_t i = 0; i < o.rows(); ++i)
        for (std::size_t j = 0; j < o.cols(); ++j) fused(i, j) += f.mlp.beta * (o(i, j) + f.mlp.fc2.bias.value[j]);
    return fused;
}

}  // namespace

TEST(Enrich, MatchesStraightLineOracle) {
    EnrichFixture f;
    Graph g(false);
    auto r = enrich(g, g.param(f.rep), g.constant(f.fp), g.constant(f.fa), f.phase, f.amp, f.mlp);
    EXPECT_LT(max_abs_diff(r.fused.value(), enrich_oracle(f)), 1e-12);
}

TEST(Enrich, ZeroMlpOrZeroBetaLeavesR) {
    EnrichFixture f;
    {
        Graph g(false);
        FusionMLP zero = f.mlp;
        nn::Linear::visit(zero.fc1, "", [](const std::string&, Parameter& p) { p.value.fill(0.0); });
        nn::Linear::visit(zero.fc2, "", [](const std::string&, Parameter& p) { p.value.fill(0.0); });
        auto r = enrich(g, g.param(f.rep), g.constant(f.fp), g.constant(f.fa), f.phase, f.amp, zero);
        EXPECT_EQ(r.fused.value(), f.rep.value);
    }
    {
        Graph g(false);
        FusionMLP off = f.mlp;
        off.beta = 0.0;
        auto r = enrich(g, g.param(f.rep), g.constant(f.fp), g.constant(f.fa), f.phase, f.amp, off);
        EXPECT_EQ(r.fused.value(), f.rep.value);
    }
}

TEST(Enrich, IdenticalStreamsAndBlocksGiveIdenticalBranches) {
    EnrichFixture f;
    Graph g(false);
    auto r = enrich(g, g.param(f.rep), g.constant(f.fp), g.constant(f.fp), f.phase, f.phase, f.mlp);
    EXPECT_EQ(r.phase_tokens.value(), r.amp_tokens.value());
}

TEST(Enrich, SingleStreamDuplicatesBranch) {
    EnrichFixture f;
    Graph g(false);
    auto r = enrich(g, g.param(f.rep), g.constant(f.fp), std::nullopt, f.phase, f.amp, f.mlp);
    EXPECT_EQ(r.phase_tokens.value(), r.amp_tokens.value());
    EXPECT_TRUE(r.attn_phase.has_value());
    EXPECT_FALSE(r.attn_amp.has_value());
    EXPECT_THROW(enrich(g, g.param(f.rep), std::nullopt, std::nullopt, f.phase, f.amp, f.mlp), UsageError);
}

TEST(Enrich, GradcheckEndToEnd) {
    EnrichFixture f;
    std::vector<Parameter*> params{&f.rep};
    for (auto* p : nn::parameters(f.phase)) params.push_back(p);
    for (auto* p : nn::parameters(f.amp)) params.push_back(p);
    for (auto* p : nn::parameters(f.mlp)) params.push_back(p);
    const Tensor w = random_matrix(5, 8, 34);
    auto loss = [&](Graph& g) {
        auto r = enrich(g, g.param(f.rep), g.constant(f.fp), g.constant(f.fa), f.phase, f.amp, f.mlp);
        return sum(mul(r.fused, g.constant(w)));
    };
    EXPECT_LT(gradcheck(loss, params, 1e-5, 24), 1e-4);
}

TEST(Variant, NamesRoundTrip) {
    for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
    EXPECT_THROW(parse_variant("BOGUS"), ConfigError);
}
