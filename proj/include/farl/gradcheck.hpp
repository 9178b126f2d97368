#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "farl/autodiff.hpp"

namespace farl {

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Maximum relative error between the reverse-mode gradient of a scalar map and
/// central finite differences, over every coordinate of `point`.
inline double gradcheck(const std::function<Var(Graph&, Var)>& fn, const Tensor& point, double eps = 1e-5) {
    Tensor analytic;
    {
        Graph g;
        Var x = g.leaf(point);
        Var y = fn(g, x);
        g.backward(y);
        analytic = g.has_grad(x) ? g.grad(x) : Tensor(point.shape());
    }
    auto eval = [&](const Tensor& at) {
        Graph g;
        return fn(g, g.leaf(at, false)).item();
    };
    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + eps;
        const double up = eval(probe);
        probe[i] = point[i] - eps;
        const double down = eval(probe);
        probe[i] = point[i];
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    return worst;
}

/// Same check against a loss built from parameters. When `max_coords` is nonzero,
/// at most that many evenly strided coordinates are probed per parameter.
inline double gradcheck(const std::function<Var(Graph&)>& loss, std::span<Parameter* const> params,
                        double eps = 1e-5, std::size_t max_coords = 0) {
    std::vector<Tensor> analytic;
    {
        Graph g;
        Var y = loss(g);
        g.backward(y);
        for (Parameter* p : params) {
            const Tensor* gr = g.grad_for(*p);
            analytic.push_back(gr ? *gr : Tensor(p->value.shape()));
        }
    }
    auto eval = [&] {
        Graph g;
        return loss(g).item();
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& v = params[k]->value;
        const std::size_t n = v.size();
        const std::size_t stride = (max_coords == 0 || n <= max_coords) ? 1 : (n + max_coords - 1) / max_coords;
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = v[i];
            v[i] = orig + eps;
            const double up = eval();
            v[i] = orig - eps;
            const double down = eval();
            v[i] = orig;
            worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * eps)));
        }
    }
    return worst;
}

}  // namespace farl
