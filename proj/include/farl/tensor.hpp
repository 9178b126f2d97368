#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace farl {

/// Thrown when operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an input lies outside an operation's domain (e.g. a zero-norm vector).
class DegenerateInputError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Thrown when an API is called in a way its contract forbids.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of doubles. Rank 0..2 is what the model uses; a rank-1
/// tensor behaves as a single row and a rank-0 tensor as a 1x1 matrix.
class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        for (auto d : shape_)
            if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_string(shape_));
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        for (auto d : shape_)
            if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_string(shape_));
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_string(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor({rows, cols}, fill);
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("ragged row list");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor row(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    static Tensor identity(std::size_t n) {
        Tensor t = matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const {
        if (shape_.size() == 2) return shape_[1];
        if (shape_.size() == 1) return shape_[0];
        return data_.size();
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double item() const {
        if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size())
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " +
                                               shape_string(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Learnable tensor with its gradient accumulator.
struct Parameter {
    Tensor value;
    Tensor grad;
    bool trainable = true;
    bool decay = true;  // weight decay applies (off for biases, norms, embeddings of tokens)

    Parameter() = default;
    explicit Parameter(Tensor v, bool apply_decay = true)
        : value(std::move(v)), grad(value.shape()), decay(apply_decay) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

/// Row-major matrix kernels. Accumulating variants add into the output.
namespace kernels {

// C[m,n] += A[m,k] * B[k,n]. Each output element accumulates its k products in
// ascending order, so results equal a naive triple loop bit for bit.
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T, via a transposed copy of B so the inner loop is contiguous.
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(a, bt.data(), c, m, k, n);
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace kernels

}  // namespace farl
