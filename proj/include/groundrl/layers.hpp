#pragma once

// Parameterized layers. A layer only remembers parameter indices, so the same
// layer object can run against any ParamStore with an identical layout (e.g. a
// worker-local snapshot).

#include <random>
#include <string>
#include <utility>

#include "groundrl/graph.hpp"

namespace groundrl::ad {

class Dense {
public:
    Dense() = default;
    Dense(ParamStore& store, const std::string& prefix, int in, int out, std::mt19937_64& rng);
    Var operator()(ParamStore& store, Var x) const;
    int in() const { return in_; }
    int out() const { return out_; }

private:
    int in_ = 0, out_ = 0;
    int weight_ = -1, bias_ = -1;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamStore& store, const std::string& prefix, int in_ch, int out_ch, int kernel, int stride,
           int padding, std::mt19937_64& rng);
    Var operator()(ParamStore& store, Var x) const;
    // Spatial output size for an input of side n.
    int output_side(int n) const { return (n + 2 * padding_ - kernel_) / stride_ + 1; }
    int out_channels() const { return out_ch_; }

private:
    int in_ch_ = 0, out_ch_ = 0, kernel_ = 0, stride_ = 1, padding_ = 0;
    int weight_ = -1, bias_ = -1;
};

struct LstmState {
    Var h;
    Var c;
};

// Gate layout along the 4H axis: input, forget, candidate, output.
class LstmCell {
public:
    LstmCell() = default;
    LstmCell(ParamStore& store, const std::string& prefix, int in, int hidden, std::mt19937_64& rng);
    LstmState operator()(ParamStore& store, Var x, const LstmState& state) const;
    int hidden() const { return hidden_; }
    int in() const { return in_; }

private:
    int in_ = 0, hidden_ = 0;
    int w_ = -1, u_ = -1, b_ = -1;
};

class Embedding {
public:
    Embedding() = default;
    Embedding(ParamStore& store, const std::string& prefix, int vocab, int dim, std::mt19937_64& rng);
    Var operator()(ParamStore& store, Graph& g, std::span<const int> ids) const;
    int table_index() const { return table_; }
    int dim() const { return dim_; }

private:
    int vocab_ = 0, dim_ = 0;
    int table_ = -1;
};

}  // namespace groundrl::ad
