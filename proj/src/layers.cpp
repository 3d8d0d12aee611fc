#include "groundrl/layers.hpp"

#include "groundrl/errors.hpp"

namespace groundrl::ad {

Dense::Dense(ParamStore& store, const std::string& prefix, int in, int out, std::mt19937_64& rng)
    : in_(in), out_(out) {
    weight_ = store.add(prefix + ".weight", init_uniform(Shape{out, in}, in, rng));
    bias_ = store.add(prefix + ".bias", init_uniform(Shape{out}, in, rng));
}

Var Dense::operator()(ParamStore& store, Var x) const {
    Graph& g = *x.graph;
    return dense(x, g.parameter(store, weight_), g.parameter(store, bias_));
}

Conv2d::Conv2d(ParamStore& store, const std::string& prefix, int in_ch, int out_ch, int kernel, int stride,
               int padding, std::mt19937_64& rng)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), padding_(padding) {
    const int fan_in = in_ch * kernel * kernel;
    weight_ = store.add(prefix + ".weight", init_uniform(Shape{out_ch, in_ch, kernel, kernel}, fan_in, rng));
    bias_ = store.add(prefix + ".bias", init_uniform(Shape{out_ch}, fan_in, rng));
}

Var Conv2d::operator()(ParamStore& store, Var x) const {
    Graph& g = *x.graph;
    return conv2d(x, g.parameter(store, weight_), g.parameter(store, bias_), stride_, padding_);
}

LstmCell::LstmCell(ParamStore& store, const std::string& prefix, int in, int hidden, std::mt19937_64& rng)
    : in_(in), hidden_(hidden) {
    w_ = store.add(prefix + ".w_input", init_uniform(Shape{4 * hidden, in}, in, rng));
    u_ = store.add(prefix + ".w_hidden", init_uniform(Shape{4 * hidden, hidden}, hidden, rng));
    b_ = store.add(prefix + ".bias", init_uniform(Shape{4 * hidden}, hidden, rng));
}

LstmState LstmCell::operator()(ParamStore& store, Var x, const LstmState& state) const {
    Graph& g = *x.graph;
    Var gates = add(dense(x, g.parameter(store, w_), g.parameter(store, b_)),
                    matmul_t(state.h, g.parameter(store, u_)));
    const int h = hidden_;
    Var i = sigmoid(slice(gates, 0, h));
    Var f = sigmoid(slice(gates, h, h));
    Var cand = tanh(slice(gates, 2 * h, h));
    Var o = sigmoid(slice(gates, 3 * h, h));
    Var c = add(mul(f, state.c), mul(i, cand));
    return {mul(o, tanh(c)), c};
}

Embedding::Embedding(ParamStore& store, const std::string& prefix, int vocab, int dim, std::mt19937_64& rng)
    : vocab_(vocab), dim_(dim) {
    table_ = store.add(prefix + ".table", init_uniform(Shape{vocab, dim}, dim, rng));
}

Var Embedding::operator()(ParamStore& store, Graph& g, std::span<const int> ids) const {
    return embedding_lookup(g.parameter(store, table_), ids);
}

}  // namespace groundrl::ad
