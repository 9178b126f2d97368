#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "farl/tensor.hpp"

namespace farl {

class Graph;

/// Handle to a node in a Graph.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    double item() const { return value().item(); }
    bool requires_grad() const;
};

/// Define-by-run tape. Nodes are appended in evaluation order, so every node's
/// parents have smaller ids and a reverse sweep over ids is a topological order.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int self)>;

    /// With track_gradients false no backward closures are recorded and nothing requires grad.
    explicit Graph(bool track_gradients = true) : track_(track_gradients) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor t) { return push(std::move(t), nullptr, {}, {}, false); }

    /// A leaf owning its value; its gradient is readable through grad() after backward().
    Var leaf(Tensor t, bool requires_grad = true) {
        return push(std::move(t), nullptr, {}, {}, track_ && requires_grad);
    }

    /// A leaf referencing a Parameter. Requires grad iff the parameter is trainable.
    /// The parameter must outlive the graph.
    Var param(const Parameter& p) {
        if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
        Var v = push(Tensor(), &p.value, {}, {}, track_ && p.trainable);
        nodes_[v.id].param = &p;
        param_nodes_.emplace(&p, v.id);
        return v;
    }

    /// Appends an op node. The backward closure is dropped when no parent needs a gradient.
    Var record(Tensor value, std::vector<int> parents, BackwardFn fn) {
        bool needs = false;
        for (int p : parents) needs = needs || nodes_[p].requires_grad;
        if (!needs) return push(std::move(value), nullptr, {}, {}, false);
        return push(std::move(value), nullptr, std::move(parents), std::move(fn), true);
    }

    const Tensor& value(int id) const {
        const Node& n = nodes_[id];
        return n.ext ? *n.ext : n.own;
    }

    bool requires_grad(int id) const { return nodes_[id].requires_grad; }

    /// Gradient accumulator of a node, allocated on first use; nullptr when the node needs none.
    Tensor* grad_acc(int id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (!n.has_grad) {
            n.grad = Tensor(value(id).shape());
            n.has_grad = true;
        }
        return &n.grad;
    }

    const Tensor& grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (!n.has_grad) throw UsageError("node " + std::to_string(v.id) + " has no gradient");
        return n.grad;
    }

    bool has_grad(Var v) const { return nodes_[v.id].has_grad; }

    /// Gradient reaching a parameter leaf, or nullptr if it never entered this graph
    /// or received no gradient.
    const Tensor* grad_for(const Parameter& p) const {
        auto it = param_nodes_.find(&p);
        if (it == param_nodes_.end()) return nullptr;
        const Node& n = nodes_[it->second];
        return n.has_grad ? &n.grad : nullptr;
    }

    /// Reverse sweep from a scalar output. Each node is visited at most once.
    void backward(Var out) {
        if (out.graph != this) throw UsageError("backward: variable belongs to another graph");
        if (value(out.id).size() != 1 || value(out.id).rank() > 2)
            throw UsageError("backward requires a scalar output, got shape " +
                             shape_string(value(out.id).shape()));
        if (backward_done_) throw UsageError("backward already ran on this graph");
        backward_done_ = true;
        Tensor* seed = grad_acc(out.id);
        if (!seed) return;
        (*seed)[0] += 1.0;
        for (int id = out.id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.requires_grad || !n.has_grad || !n.fn) continue;
            n.fn(*this, id);
        }
    }

    /// Adds each trainable parameter's gradient into Parameter::grad.
    template <class Range>
    void accumulate_into(Range&& params) const {
        for (Parameter* p : params) {
            if (!p->trainable) continue;
            if (const Tensor* g = grad_for(*p)) {
                if (p->grad.size() != g->size()) p->grad = Tensor(p->value.shape());
                for (std::size_t i = 0; i < g->size(); ++i) p->grad[i] += (*g)[i];
            }
        }
    }

    int parent(int id, std::size_t k) const { return nodes_[id].parents[k]; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor own;
        const Tensor* ext = nullptr;
        Tensor grad;
        std::vector<int> parents;
        BackwardFn fn;
        const Parameter* param = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
    };

    Var push(Tensor own, const Tensor* ext, std::vector<int> parents, BackwardFn fn, bool requires_grad) {
        Node n;
        n.own = std::move(own);
        n.ext = ext;
        n.parents = std::move(parents);
        n.fn = std::move(fn);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
    bool track_ = true;
    bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return graph->value(id); }
inline bool Var::requires_grad() const { return graph->requires_grad(id); }

}  // namespace farl
