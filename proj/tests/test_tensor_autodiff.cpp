#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "farl/gradcheck.hpp"
#include "farl/nn.hpp"
#include "farl/ops.hpp"

using namespace farl;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::matrix(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
            c(i, j) = s;
        }
    return c;
}

}  // namespace

TEST(Tensor, RejectsZeroDimsAndMismatchedData) {
    EXPECT_THROW(Tensor({2, 0}), ShapeError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor s;
    EXPECT_EQ(s.size(), 1u);
    EXPECT_EQ(s.rows(), 1u);
    EXPECT_EQ(s.cols(), 1u);
}

TEST(Matmul, IdentityAndAnnihilator) {
    Graph g(false);
    Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
    EXPECT_EQ(matmul(g.constant(Tensor::identity(2)), g.constant(m)).value(), m);
    Var z = matmul(g.constant(Tensor::matrix(2, 3)), g.constant(random_matrix(3, 4, 1)));
    for (double v : z.value().data()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(z.rows(), 2u);
    EXPECT_EQ(z.cols(), 4u);
}

TEST(Matmul, HandExample) {
    Graph g(false);
    Var c = matmul(g.constant(Tensor::from_rows({{1, 2}, {3, 4}})), g.constant(Tensor::from_rows({{5, 6}, {7, 8}})));
    EXPECT_EQ(c.value(), Tensor::from_rows({{19, 22}, {43, 50}}));
}

TEST(Matmul, BitwiseEqualToTripleLoop) {
    for (std::size_t m = 1; m <= 16; m += 5)
        for (std::size_t k = 1; k <= 16; k += 3)
            for (std::size_t n = 1; n <= 16; n += 4) {
                Tensor a = random_matrix(m, k, m * 100 + k), b = random_matrix(k, n, k * 100 + n);
                Graph g(false);
                EXPECT_EQ(matmul(g.constant(a), g.constant(b)).value(), naive_matmul(a, b));
            }
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
    Graph g(false);
    try {
        matmul(g.constant(Tensor::matrix(2, 3)), g.constant(Tensor::matrix(4, 5)));
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
    }
}

TEST(Softmax, AnalyticRows) {
    Graph g(false);
    Var s = softmax_rows(g.constant(Tensor::from_rows({{0, 0, 0}})));
    for (double v : s.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    Var t = softmax_rows(g.constant(Tensor::from_rows({{0, std::log(2.0)}})));
    EXPECT_NEAR(t.value()[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(t.value()[1], 2.0 / 3.0, 1e-15);
    Var u = softmax_rows(g.constant(Tensor::from_rows({{1000, 0}})));
    EXPECT_TRUE(u.value().all_finite());
    EXPECT_NEAR(u.value()[0], 1.0, 1e-15);
    EXPECT_NEAR(u.value()[1], 0.0, 1e-15);
}

TEST(Softmax, RowsSumToOneForLargeInputs) {
    Graph g(false);
    Tensor x = random_matrix(20, 13, 9, 400.0);
    for (auto& v : x.data()) v = std::clamp(v, -1e3, 1e3);
    Tensor s = softmax_rows(g.constant(x)).value();
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) {
            EXPECT_GE(s(i, j), 0.0);
            sum += s(i, j);
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
    Graph g(false);
    Tensor y = layer_norm(g.constant(random_matrix(10, 64, 3, 5.0))).value();
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double mu = 0.0, var = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) mu += y(i, j);
        mu /= static_cast<double>(y.cols());
        for (std::size_t j = 0; j < y.cols(); ++j) var += (y(i, j) - mu) * (y(i, j) - mu);
        var /= static_cast<double>(y.cols());
        EXPECT_LT(std::abs(mu), 1e-9);
        EXPECT_NEAR(var, 1.0, 1e-6);
    }
}

TEST(Elementwise, CrossEntropyAndCosineAnalytic) {
    Graph g(false);
    EXPECT_NEAR(cross_entropy(g.constant(Tensor::from_rows({{0.3, 0.3, 0.3, 0.3}})), 2).item(), std::log(4.0), 1e-15);
    EXPECT_THROW(cross_entropy(g.constant(Tensor::from_rows({{0, 0}})), 2), std::out_of_range);
    Var v = g.constant(Tensor::row({0.3, -2.0, 5.0}));
    EXPECT_NEAR(cosine_similarity(v, v).item(), 1.0, 1e-15);
    EXPECT_EQ(cosine_similarity(g.constant(Tensor::row({1, 0})), g.constant(Tensor::row({0, 1}))).item(), 0.0);
    EXPECT_THROW(cosine_similarity(g.constant(Tensor::row({0, 0, 0})), v), DegenerateInputError);
}

TEST(Backward, ScalarAnalytic) {
    Graph g;
    Var x = g.leaf(Tensor::scalar(3.0));
    g.backward(mul(x, x));
    EXPECT_EQ(g.grad(x).item(), 6.0);

    Graph h;
    Tensor a = random_matrix(4, 3, 5);
    Var xv = h.leaf(random_matrix(3, 1, 6));
    h.backward(sum(matmul(h.constant(a), xv)));
    for (std::size_t j = 0; j < 3; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < 4; ++i) col += a(i, j);
        EXPECT_NEAR(h.grad(xv)[j], col, 1e-14);
    }
}

TEST(Backward, RejectsNonScalarAndSecondCall) {
    Graph g;
    Var x = g.leaf(Tensor::matrix(2, 2, 1.0));
    EXPECT_THROW(g.backward(x), UsageError);
    Var s = sum(x);
    g.backward(s);
    EXPECT_THROW(g.backward(s), UsageError);
}

TEST(Backward, FrozenParameterGetsNoGradient) {
    Parameter p(Tensor::matrix(2, 2, 1.0));
    p.trainable = false;
    Graph g;
    Var y = sum(mul(g.param(p), g.leaf(Tensor::matrix(2, 2, 3.0))));
    g.backward(y);
    EXPECT_EQ(g.grad_for(p), nullptr);
}

TEST(Gradcheck, LinearMapIsExact) {
    Tensor a = random_matrix(3, 4, 11);
    auto fn = [&](Graph& g, Var x) { return sum(matmul(g.constant(a), x)); };
    EXPECT_LT(gradcheck(fn, random_matrix(4, 2, 12)), 1e-9);
}

// Rows of a softmax sum to one, so the gradient of their total vanishes.
TEST(Gradcheck, ConstantSoftmaxSum) {
    Graph g;
    Var x = g.leaf(random_matrix(3, 5, 13));
    g.backward(sum(softmax_rows(x)));
    for (double v : g.grad(x).data()) EXPECT_LT(std::abs(v), 1e-15);
}

// Every differentiable op, 10 seeded points each.
class OpGradcheck : public ::testing::TestWithParam<int> {};

TEST_P(OpGradcheck, AllOpsBelowTolerance) {
    const auto seed = static_cast<std::uint64_t>(GetParam());
    const Tensor w = random_matrix(4, 3, seed + 1000);
    const Tensor other = random_matrix(3, 4, seed + 2000);
    const Tensor rowv = random_matrix(1, 4, seed + 3000);
    const Tensor weights = random_matrix(3, 4, seed + 4000);  // makes sums non-degenerate
    auto wsum = [&](Graph& g, Var y) {
        if (y.rows() == weights.rows() && y.cols() == weights.cols()) return sum(mul(y, g.constant(weights)));
        return sum(mul(y, y));
    };
    const std::vector<std::pair<const char*, std::function<Var(Graph&, Var)>>> cases = {
        {"add", [&](Graph& g, Var x) { return wsum(g, add(x, g.constant(other))); }},
        {"sub", [&](Graph& g, Var x) { return wsum(g, sub(g.constant(other), x)); }},
        {"mul", [&](Graph& g, Var x) { return wsum(g, mul(x, x)); }},
        {"scale", [&](Graph& g, Var x) { return wsum(g, scale(x, -1.7)); }},
        {"add_row", [&](Graph& g, Var x) { return wsum(g, add_row(x, g.constant(rowv))); }},
        {"mul_row", [&](Graph& g, Var x) { return wsum(g, mul_row(x, slice_rows(x, 0, 1))); }},
        {"matmul", [&](Graph& g, Var x) { return sum(mul(matmul(x, g.constant(w)), matmul(x, g.constant(w)))); }},
        {"matmul_nt", [&](Graph& g, Var x) { return wsum(g, matmul_nt(x, g.constant(other))); }},
        {"transpose", [&](Graph& g, Var x) { return sum(mul(transpose(x), g.constant(w))); }},
        {"gelu", [&](Graph& g, Var x) { return wsum(g, gelu(x)); }},
        {"relu", [&](Graph& g, Var x) { return wsum(g, relu(x)); }},
        {"softmax", [&](Graph& g, Var x) { return wsum(g, softmax_rows(x)); }},
        {"layer_norm", [&](Graph& g, Var x) { return wsum(g, layer_norm(x)); }},
        {"layer_norm_affine",
         [&](Graph& g, Var x) { return wsum(g, layer_norm(x, slice_rows(x, 1, 1), g.constant(rowv))); }},
        {"mean_rows", [&](Graph&, Var x) { Var m = mean_rows(x); return sum(mul(m, m)); }},
        {"mean", [&](Graph&, Var x) { return mul(mean(x), mean(mul(x, x))); }},
        {"concat_rows", [&](Graph& g, Var x) { return sum(mul(concat_rows({x, x}), concat_rows({g.constant(weights), x}))); }},
        {"concat_cols", [&](Graph&, Var x) { Var c = concat_cols({x, slice_cols(x, 1, 2)}); return sum(mul(c, c)); }},
        {"slice", [&](Graph&, Var x) { Var s = slice_cols(slice_rows(x, 1, 2), 1, 3); return sum(mul(s, s)); }},
        {"cross_entropy", [&](Graph&, Var x) { std::vector<int> l{0, 3, 1}; return cross_entropy(x, l); }},
        {"cosine", [&](Graph& g, Var x) { return cosine_similarity(slice_rows(x, 0, 1), g.constant(rowv)); }},
        {"l2_normalize", [&](Graph& g, Var x) { return wsum(g, l2_normalize_rows(x)); }},
    };
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor point = Tensor::matrix(3, 4);
    for (auto& v : point.data()) v = n(rng);
    for (const auto& [name, fn] : cases) EXPECT_LT(gradcheck(fn, point), 1e-4) << name;
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradcheck, ::testing::Range(0, 10));

TEST(Im2col, GradcheckAndGeometry) {
    ConvGeometry geo{5, 6, 2};
    EXPECT_EQ(geo.out_height(), 3u);
    EXPECT_EQ(geo.out_width(), 3u);
    const Tensor w = random_matrix(geo.out_height() * geo.out_width(), 9 * 2, 77);
    auto fn = [&](Graph& g, Var x) { return sum(mul(im2col(x, geo), g.constant(w))); };
    EXPECT_LT(gradcheck(fn, random_matrix(30, 2, 78)), 1e-6);
}

TEST(AttentionBlock, ComposedGradcheck) {
    nn::Rng rng(3);
    nn::TransformerLayer layer(8, 2, 2, rng);
    const Tensor w = random_matrix(5, 8, 79);
    auto fn = [&](Graph& g, Var x) { return sum(mul(layer(g, x), g.constant(w))); };
    EXPECT_LT(gradcheck(fn, random_matrix(5, 8, 80)), 1e-4);
}
