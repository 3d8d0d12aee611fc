#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Graph records nodes in creation order, which is already a topological
// order; backward() walks it in reverse. Parameter nodes read straight from a
// ParamStore and, after backward(), add their gradient into Param::grad.

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "groundrl/params.hpp"
#include "groundrl/tensor.hpp"

namespace groundrl::ad {

class Graph;

struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    // Binds a parameter; repeated binds of the same (store, index) share a node.
    Var parameter(ParamStore& store, int index);
    Var parameter(ParamStore& store, std::string_view name) { return parameter(store, store.index(name)); }

    const Tensor& value(Var v) const;
    // Gradient of the last backward() root w.r.t. v (zeros if unreachable).
    Tensor grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

    // Root must hold exactly one value. Throws UsageError otherwise.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

    // For op implementations.
    Var make(Tensor value, bool requires_grad, BackwardFn fn);
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    // Allocates a zero gradient on first use.
    Tensor& grad_ref(int id);
    const Tensor& upstream(int self) const { return nodes_[static_cast<std::size_t>(self)].grad; }
    const Tensor& value(int id) const;

private:
    struct Node {
        Tensor value;
        Param* param = nullptr;
        Tensor grad;
        BackwardFn backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    std::vector<std::pair<const ParamStore*, int>> bound_;
    std::vector<int> bound_ids_;
};

// ---- primitives -------------------------------------------------------------
// Shapes: rank-2 tensors are [batch, features]; conv2d uses [batch, C, H, W].

Var dense(Var x, Var weight, Var bias);          // x[B,in] W[out,in] b[out] -> [B,out]
Var matmul_t(Var x, Var weight);                  // x[B,in] W[out,in] -> [B,out]
Var conv2d(Var x, Var weight, Var bias, int stride, int padding);  // W[O,C,K,K]
Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var square(Var x);
Var concat(std::span<const Var> parts);           // along the last axis, rank 2
Var flatten(Var x);                               // [B, ...] -> [B, prod]
Var slice(Var x, int start, int length);          // last axis, rank 2
Var l2_norm(Var x);                               // reduces the last axis
Var sum(Var x);                                   // -> scalar
Var mean(Var x);                                  // -> scalar
Var sum_squares(Var x);                           // -> scalar
Var mse(Var a, Var b);                            // -> scalar
Var softmax(Var x);                               // last axis
// Masked entries (mask[k] == false) get -inf and no gradient.
Var log_softmax(Var x, const std::vector<bool>& mask = {});
Var pick(Var x, std::span<const int> index);      // x[B,K] -> [B], x[b, index[b]]
Var entropy_from_log_probs(Var log_probs);        // [B,K] -> [B], skips -inf entries
Var embedding_lookup(Var table, std::span<const int> ids);  // table[V,D] -> [n,D]
Var gather_rows(Var x, std::span<const int> rows);          // x[N,D] -> [rows,D]

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---- gradient checking ------------------------------------------------------

// Rebuilds the scalar graph produced by `build` and compares reverse-mode
// gradients of every parameter entry against central differences with step
// `epsilon`. Returns the max relative error |a-n| / max(|a|+|n|, 1e-7).
// A store with no entries yields 0.
double grad_check(const std::function<Var(Graph&)>& build, ParamStore& params, double epsilon);

}  // namespace groundrl::ad
