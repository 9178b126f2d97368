#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "farl/autodiff.hpp"

namespace farl {

namespace detail {

inline void require_same_graph(Var a, Var b) {
    if (a.graph != b.graph) throw UsageError("operands live in different graphs");
}

inline void require_same_shape(const char* op, Var a, Var b) {
    if (a.value().size() != b.value().size() || a.rows() != b.rows())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

inline Shape matrix_shape(std::size_t r, std::size_t c) { return Shape{r, c}; }

inline void add_into(Tensor* dst, const Tensor& src, double scale = 1.0) {
    if (!dst) return;
    for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += scale * src[i];
}

constexpr double kGeluC = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace detail

inline Var add(Var a, Var b) {
    detail::require_same_graph(a, b);
    detail::require_same_shape("add", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return a.graph->record(std::move(out), {a.id, b.id}, [](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        detail::add_into(g.grad_acc(g.parent(self, 0)), dy);
        detail::add_into(g.grad_acc(g.parent(self, 1)), dy);
    });
}

inline Var sub(Var a, Var b) {
    detail::require_same_graph(a, b);
    detail::require_same_shape("sub", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.graph->record(std::move(out), {a.id, b.id}, [](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        detail::add_into(g.grad_acc(g.parent(self, 0)), dy);
        detail::add_into(g.grad_acc(g.parent(self, 1)), dy, -1.0);
    });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
    detail::require_same_graph(a, b);
    detail::require_same_shape("mul", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.graph->record(std::move(out), {a.id, b.id}, [](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        const int pa = g.parent(self, 0), pb = g.parent(self, 1);
        const Tensor& av = g.value(pa);
        const Tensor& bv = g.value(pb);
        if (Tensor* ga = g.grad_acc(pa))
            for (std::size_t i = 0; i < dy.size(); ++i) (*ga)[i] += dy[i] * bv[i];
        if (Tensor* gb = g.grad_acc(pb))
            for (std::size_t i = 0; i < dy.size(); ++i) (*gb)[i] += dy[i] * av[i];
    });
}

inline Var scale(Var a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    return a.graph->record(std::move(out), {a.id}, [s](Graph& g, int self) {
        detail::add_into(g.grad_acc(g.parent(self, 0)), g.grad(Var{&g, self}), s);
    });
}

/// a[m,n] + b[1,n] broadcast over rows.
inline Var add_row(Var a, Var b) {
    detail::require_same_graph(a, b);
    const std::size_t m = a.rows(), n = a.cols();
    if (b.value().size() != n)
        throw ShapeError("add_row: " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
    return a.graph->record(std::move(out), {a.id, b.id}, [m, n](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        detail::add_into(g.grad_acc(g.parent(self, 0)), dy);
        if (Tensor* gb = g.grad_acc(g.parent(self, 1)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*gb)[j] += dy[i * n + j];
    });
}

/// a[m,n] * b[1,n] broadcast over rows.
inline Var mul_row(Var a, Var b) {
    detail::require_same_graph(a, b);
    const std::size_t m = a.rows(), n = a.cols();
    if (b.value().size() != n)
        throw ShapeError("mul_row: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= bv[j];
    return a.graph->record(std::move(out), {a.id, b.id}, [m, n](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        const int pa = g.parent(self, 0), pb = g.parent(self, 1);
        const Tensor& av = g.value(pa);
        const Tensor& bv = g.value(pb);
        if (Tensor* ga = g.grad_acc(pa))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += dy[i * n + j] * bv[j];
        if (Tensor* gb = g.grad_acc(pb))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*gb)[j] += dy[i * n + j] * av[i * n + j];
    });
}

inline Var matmul(Var a, Var b) {
    detail::require_same_graph(a, b);
    const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw ShapeError("matmul: inner dims differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    Tensor out = Tensor::matrix(m, n);
    kernels::gemm_nn(a.value().ptr(), b.value().ptr(), out.ptr(), m, k, n);
    return a.graph->record(std::move(out), {a.id, b.id}, [m, k, n](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        const int pa = g.parent(self, 0), pb = g.parent(self, 1);
        if (Tensor* ga = g.grad_acc(pa)) kernels::gemm_nt(dy.ptr(), g.value(pb).ptr(), ga->ptr(), m, n, k);
        if (Tensor* gb = g.grad_acc(pb)) kernels::gemm_tn(g.value(pa).ptr(), dy.ptr(), gb->ptr(), m, k, n);
    });
}

/// a[m,k] * b[n,k]^T
inline Var matmul_nt(Var a, Var b) {
    detail::require_same_graph(a, b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k)
        throw ShapeError("matmul_nt: inner dims differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
    Tensor out = Tensor::matrix(m, n);
    kernels::gemm_nt(a.value().ptr(), b.value().ptr(), out.ptr(), m, k, n);
    return a.graph->record(std::move(out), {a.id, b.id}, [m, k, n](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        const int pa = g.parent(self, 0), pb = g.parent(self, 1);
        // dA = dY B ; dB = dY^T A
        if (Tensor* ga = g.grad_acc(pa)) kernels::gemm_nn(dy.ptr(), g.value(pb).ptr(), ga->ptr(), m, n, k);
        if (Tensor* gb = g.grad_acc(pb)) kernels::gemm_tn(dy.ptr(), g.value(pa).ptr(), gb->ptr(), m, n, k);
    });
}

inline Var transpose(Var a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = Tensor::matrix(n, m);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return a.graph->record(std::move(out), {a.id}, [m, n](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        if (Tensor* ga = g.grad_acc(g.parent(self, 0)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += dy[j * m + i];
    });
}

/// Tanh-approximated GELU.
inline double gelu_value(double x) {
    const double u = detail::kGeluC * (x + detail::kGeluA * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_derivative(double x) {
    const double u = detail::kGeluC * (x + detail::kGeluA * x * x * x);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * x * x);
}

inline Var gelu(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = gelu_value(v);
    return a.graph->record(std::move(out), {a.id}, [](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        const int pa = g.parent(self, 0);
        const Tensor& x = g.value(pa);
        if (Tensor* ga = g.grad_acc(pa))
            for (std::size_t i = 0; i < dy.size(); ++i) (*ga)[i] += dy[i] * gelu_derivative(x[i]);
    });
}

inline Var relu(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return a.graph->record(std::move(out), {a.id}, [](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        const int pa = g.parent(self, 0);
        const Tensor& x = g.value(pa);
        if (Tensor* ga = g.grad_acc(pa))
            for (std::size_t i = 0; i < dy.size(); ++i) (*ga)[i] += x[i] > 0.0 ? dy[i] : 0.0;
    });
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_rows_value(const Tensor& x) {
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = x;
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.ptr() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
    }
    return out;
}

inline Var softmax_rows(Var a) {
    const std::size_t m = a.rows(), n = a.cols();
    return a.graph->record(softmax_rows_value(a.value()), {a.id}, [m, n](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        const Tensor& y = g.value(self);
        if (Tensor* ga = g.grad_acc(g.parent(self, 0)))
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += dy[i * n + j] * y[i * n + j];
                for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += y[i * n + j] * (dy[i * n + j] - dot);
            }
    });
}

constexpr double kLayerNormEps = 1e-10;

/// Per-row standardization to zero mean and unit variance (no affine).
inline Var layer_norm(Var a, double eps = kLayerNormEps) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = a.value();
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.ptr() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) row[j] = (row[j] - mean) * inv_std[i];
    }
    return a.graph->record(std::move(out), {a.id}, [m, n, inv_std = std::move(inv_std)](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        const Tensor& y = g.value(self);
        if (Tensor* ga = g.grad_acc(g.parent(self, 0)))
            for (std::size_t i = 0; i < m; ++i) {
                double mdy = 0.0, mdyy = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    mdy += dy[i * n + j];
                    mdyy += dy[i * n + j] * y[i * n + j];
                }
                mdy /= static_cast<double>(n);
                mdyy /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j)
                    (*ga)[i * n + j] += inv_std[i] * (dy[i * n + j] - mdy - y[i * n + j] * mdyy);
            }
    });
}

inline Var layer_norm(Var a, Var gamma, Var beta) { return add_row(mul_row(layer_norm(a), gamma), beta); }

/// x W + b; b may be omitted.
inline Var linear(Var x, Var w) { return matmul(x, w); }
inline Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

/// Mean over rows: [m,n] -> [1,n].
inline Var mean_rows(Var a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = Tensor::matrix(1, n);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
    for (auto& v : out.data()) v /= static_cast<double>(m);
    return a.graph->record(std::move(out), {a.id}, [m, n](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        if (Tensor* ga = g.grad_acc(g.parent(self, 0)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += dy[j] / static_cast<double>(m);
    });
}

inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.graph->record(Tensor::scalar(s), {a.id}, [](Graph& g, int self) {
        const double dy = g.grad(Var{&g, self})[0];
        if (Tensor* ga = g.grad_acc(g.parent(self, 0)))
            for (auto& v : ga->data()) v += dy;
    });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw UsageError("concat_rows: no inputs");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    std::vector<int> ids;
    for (const Var& p : parts) {
        detail::require_same_graph(parts[0], p);
        if (p.cols() != n)
            throw ShapeError("concat_rows: " + shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
        m += p.rows();
        ids.push_back(p.id);
    }
    Tensor out = Tensor::matrix(m, n);
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + off);
        off += p.value().size();
    }
    return parts[0].graph->record(std::move(out), ids, [count = parts.size()](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        std::size_t off = 0;
        for (std::size_t k = 0; k < count; ++k) {
            const int pid = g.parent(self, k);
            const std::size_t len = g.value(pid).size();
            if (Tensor* gp = g.grad_acc(pid))
                for (std::size_t i = 0; i < len; ++i) (*gp)[i] += dy[off + i];
            off += len;
        }
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: no inputs");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        detail::require_same_graph(parts[0], p);
        if (p.rows() != m)
            throw ShapeError("concat_cols: " + shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
        n += p.cols();
        ids.push_back(p.id);
        widths.push_back(p.cols());
    }
    Tensor out = Tensor::matrix(m, n);
    std::size_t c0 = 0;
    for (const Var& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * n + c0 + j] = p.value()[i * w + j];
        c0 += w;
    }
    return parts[0].graph->record(std::move(out), ids, [m, n, widths](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            const std::size_t w = widths[k];
            if (Tensor* gp = g.grad_acc(g.parent(self, k)))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) (*gp)[i * w + j] += dy[i * n + c0 + j];
            c0 += w;
        }
    });
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t count) {
    const std::size_t m = a.rows(), n = a.cols();
    if (count == 0 || begin + count > m)
        throw ShapeError("slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                         shape_string(a.shape()));
    Tensor out = Tensor::matrix(count, n);
    std::copy_n(a.value().ptr() + begin * n, count * n, out.ptr());
    return a.graph->record(std::move(out), {a.id}, [begin, count, n](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        if (Tensor* ga = g.grad_acc(g.parent(self, 0)))
            for (std::size_t i = 0; i < count * n; ++i) (*ga)[begin * n + i] += dy[i];
    });
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const std::size_t m = a.rows(), n = a.cols();
    if (count == 0 || begin + count > n)
        throw ShapeError("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                         shape_string(a.shape()));
    Tensor out = Tensor::matrix(m, count);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.value()[i * n + begin + j];
    return a.graph->record(std::move(out), {a.id}, [m, n, begin, count](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        if (Tensor* ga = g.grad_acc(g.parent(self, 0)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j) (*ga)[i * n + begin + j] += dy[i * count + j];
    });
}

/// Mean cross-entropy of raw logits [m,C] against integer labels, via stabilized log-softmax.
inline Var cross_entropy(Var logits, std::span<const int> labels) {
    const std::size_t m = logits.rows(), c = logits.cols();
    if (labels.size() != m)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= c)
            throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                                    std::to_string(c) + ")");
    const Tensor& z = logits.value();
    Tensor probs = softmax_rows_value(z);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = z.ptr() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        loss += mx + std::log(s) - row[labels[i]];
    }
    loss /= static_cast<double>(m);
    std::vector<int> lab(labels.begin(), labels.end());
    return logits.graph->record(Tensor::scalar(loss), {logits.id},
                                [m, c, lab = std::move(lab), probs = std::move(probs)](Graph& g, int self) {
                                    const double dy = g.grad(Var{&g, self})[0] / static_cast<double>(m);
                                    if (Tensor* ga = g.grad_acc(g.parent(self, 0)))
                                        for (std::size_t i = 0; i < m; ++i)
                                            for (std::size_t j = 0; j < c; ++j)
                                                (*ga)[i * c + j] +=
                                                    dy * (probs[i * c + j] -
                                                          (static_cast<int>(j) == lab[i] ? 1.0 : 0.0));
                                });
}

inline Var cross_entropy(Var logits, int label) { return cross_entropy(logits, std::span<const int>(&label, 1)); }

constexpr double kMinNorm = 1e-12;

/// Cosine of the angle between two equally sized tensors, as a scalar.
inline Var cosine_similarity(Var u, Var v) {
    detail::require_same_graph(u, v);
    if (u.value().size() != v.value().size())
        throw ShapeError("cosine_similarity: " + shape_string(u.shape()) + " vs " + shape_string(v.shape()));
    const Tensor& a = u.value();
    const Tensor& b = v.value();
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na <= kMinNorm || nb <= kMinNorm) throw DegenerateInputError("cosine_similarity: zero-norm vector");
    const double s = dot / (na * nb);
    return u.graph->record(Tensor::scalar(s), {u.id, v.id}, [na, nb, s](Graph& g, int self) {
        const double dy = g.grad(Var{&g, self})[0];
        const int pu = g.parent(self, 0), pv = g.parent(self, 1);
        const Tensor& a = g.value(pu);
        const Tensor& b = g.value(pv);
        if (Tensor* ga = g.grad_acc(pu))
            for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += dy * (b[i] / (na * nb) - s * a[i] / (na * na));
        if (Tensor* gb = g.grad_acc(pv))
            for (std::size_t i = 0; i < b.size(); ++i) (*gb)[i] += dy * (a[i] / (na * nb) - s * b[i] / (nb * nb));
    });
}

/// Scales every row to unit Euclidean norm.
inline Var l2_normalize_rows(Var a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = a.value();
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += out[i * n + j] * out[i * n + j];
        norms[i] = std::sqrt(s);
        if (norms[i] <= kMinNorm) throw DegenerateInputError("l2_normalize_rows: zero-norm row");
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= norms[i];
    }
    return a.graph->record(std::move(out), {a.id}, [m, n, norms = std::move(norms)](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        const Tensor& y = g.value(self);
        if (Tensor* ga = g.grad_acc(g.parent(self, 0)))
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * dy[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    (*ga)[i * n + j] += (dy[i * n + j] - y[i * n + j] * dot) / norms[i];
            }
    });
}

/// Geometry of a square-kernel convolution over a pixel-major [H*W, C] map.
struct ConvGeometry {
    std::size_t height, width, channels;
    std::size_t kernel = 3, stride = 2, pad = 1;

    std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    std::size_t patch_size() const { return kernel * kernel * channels; }
};

/// Unfolds zero-padded kernel windows: [H*W, C] -> [Ho*Wo, k*k*C], column index (ky*k + kx)*C + c.
inline Var im2col(Var x, ConvGeometry geo) {
    if (x.rows() != geo.height * geo.width || x.cols() != geo.channels)
        throw ShapeError("im2col: input " + shape_string(x.shape()) + " does not match " +
                         std::to_string(geo.height) + "x" + std::to_string(geo.width) + "x" +
                         std::to_string(geo.channels));
    const std::size_t ho = geo.out_height(), wo = geo.out_width(), pc = geo.patch_size(), c = geo.channels;
    Tensor out = Tensor::matrix(ho * wo, pc);
    const Tensor& xv = x.value();
    auto for_each_tap = [geo, ho, wo, c](auto&& fn) {
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox)
                for (std::size_t ky = 0; ky < geo.kernel; ++ky) {
                    const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
                    if (iy < 0 || iy >= static_cast<long>(geo.height)) continue;
                    for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
                        const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
                        if (ix < 0 || ix >= static_cast<long>(geo.width)) continue;
                        const std::size_t src = (static_cast<std::size_t>(iy) * geo.width + ix) * c;
                        const std::size_t dst = (oy * wo + ox) * geo.patch_size() + (ky * geo.kernel + kx) * c;
                        fn(src, dst);
                    }
                }
    };
    for_each_tap([&](std::size_t src, std::size_t dst) {
        for (std::size_t ch = 0; ch < c; ++ch) out[dst + ch] = xv[src + ch];
    });
    return x.graph->record(std::move(out), {x.id}, [for_each_tap, c](Graph& g, int self) {
        const Tensor& dy = g.grad(Var{&g, self});
        if (Tensor* gx = g.grad_acc(g.parent(self, 0)))
            for_each_tap([&](std::size_t src, std::size_t dst) {
                for (std::size_t ch = 0; ch < c; ++ch) (*gx)[src + ch] += dy[dst + ch];
            });
    });
}

}  // namespace farl
