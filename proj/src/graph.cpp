#include "groundrl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "groundrl/errors.hpp"

namespace groundrl::ad {

namespace {

[[noreturn]] void dim_error(const char* op, const Shape& a, const Shape& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void dim_error(const char* op, const Shape& a) {
    throw DimensionError(std::string(op) + ": unsupported shape " + shape_str(a));
}

void check_same_graph(Var a, Var b) {
    if (a.graph == nullptr || a.graph != b.graph) throw UsageError("variables belong to different graphs");
}

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double alpha, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = fwd(xv[i]);
    const int xi = x.id;
    return g.make(std::move(y), g.requires_grad(xi), [xi, deriv](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        const Tensor& yv = gr.value(self);
        const Tensor& xv2 = gr.value(xi);
        Tensor& dx = gr.grad_ref(xi);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * deriv(yv[i], xv2[i]);
    });
}

// Rows/cols view of a tensor reduced along its last axis.
std::pair<std::size_t, int> rows_cols(const Shape& s) {
    if (s.empty()) return {1, 1};
    const int cols = s.back();
    return {shape_size(s) / static_cast<std::size_t>(std::max(cols, 1)), cols};
}

Var gather_impl(const char* op, Var table, std::span<const int> ids) {
    Graph& g = *table.graph;
    const Tensor& t = table.value();
    if (t.rank() != 2) dim_error(op, t.shape());
    const int rows = t.dim(0);
    const int d = t.dim(1);
    const int n = static_cast<int>(ids.size());
    Tensor y(Shape{n, d});
    for (int r = 0; r < n; ++r) {
        if (ids[r] < 0 || ids[r] >= rows)
            throw DimensionError(std::string(op) + ": index " + std::to_string(ids[r]) + " out of range for " +
                                 shape_str(t.shape()));
        std::copy_n(t.data() + static_cast<std::size_t>(ids[r]) * d, d, y.data() + static_cast<std::size_t>(r) * d);
    }
    const int ti = table.id;
    std::vector<int> idv(ids.begin(), ids.end());
    return g.make(std::move(y), g.requires_grad(ti), [ti, idv = std::move(idv), d](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        Tensor& dt = gr.grad_ref(ti);
        for (std::size_t r = 0; r < idv.size(); ++r)
            axpy(1.0, dy.data() + r * d, dt.data() + static_cast<std::size_t>(idv[r]) * d, d);
    });
}

}  // namespace

const Tensor& Var::value() const {
    if (graph == nullptr) throw UsageError("uninitialized variable");
    return graph->value(*this);
}

Var Graph::make(Tensor value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) { return make(std::move(value), false, nullptr); }

Var Graph::parameter(ParamStore& store, int index) {
    for (std::size_t k = 0; k < bound_.size(); ++k)
        if (bound_[k].first == &store && bound_[k].second == index) return Var{this, bound_ids_[k]};
    Param& p = store.at(index);
    Node n;
    n.param = &p;
    n.requires_grad = p.trainable;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size() - 1);
    bound_.emplace_back(&store, index);
    bound_ids_.push_back(id);
    return Var{this, id};
}

const Tensor& Graph::value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.param != nullptr ? n.param->value : n.value;
}

const Tensor& Graph::value(Var v) const {
    if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw UsageError("variable does not belong to this graph");
    return value(v.id);
}

Tensor& Graph::grad_ref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty() && !value(id).empty()) n.grad = Tensor(value(id).shape());
    return n.grad;
}

Tensor Graph::grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.empty()) return Tensor(value(v.id).shape());
    return n.grad;
}

void Graph::backward(Var root) {
    if (root.graph != this) throw UsageError("backward root belongs to another graph");
    if (value(root.id).size() != 1)
        throw UsageError("backward requires a scalar output, got shape " + shape_str(value(root.id).shape()));
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[static_cast<std::size_t>(root.id)].requires_grad) return;
    grad_ref(root.id)[0] = 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        n.backward(*this, i);
    }
    for (auto& n : nodes_) {
        if (n.param == nullptr || n.grad.empty()) continue;
        auto& dst = n.param->grad.storage();
        const auto& src = n.grad.storage();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
}

// ---- primitives -------------------------------------------------------------

Var matmul_t(Var x, Var weight) {
    check_same_graph(x, weight);
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) dim_error("matmul", xv.shape(), wv.shape());
    const int batch = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
    Tensor y(Shape{batch, out});
    for (int b = 0; b < batch; ++b)
        for (int o = 0; o < out; ++o)
            y[static_cast<std::size_t>(b) * out + o] =
                dot(xv.data() + static_cast<std::size_t>(b) * in, wv.data() + static_cast<std::size_t>(o) * in, in);
    const int xi = x.id, wi = weight.id;
    const bool rg = g.requires_grad(xi) || g.requires_grad(wi);
    return g.make(std::move(y), rg, [xi, wi, batch, in, out](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        if (gr.requires_grad(xi)) {
            const Tensor& w = gr.value(wi);
            Tensor& dx = gr.grad_ref(xi);
            for (int b = 0; b < batch; ++b)
                for (int o = 0; o < out; ++o) {
                    const double d = dy[static_cast<std::size_t>(b) * out + o];
                    if (d != 0.0)
                        axpy(d, w.data() + static_cast<std::size_t>(o) * in, dx.data() + static_cast<std::size_t>(b) * in, in);
                }
        }
        if (gr.requires_grad(wi)) {
            const Tensor& xv2 = gr.value(xi);
            Tensor& dw = gr.grad_ref(wi);
            for (int b = 0; b < batch; ++b)
                for (int o = 0; o < out; ++o) {
                    const double d = dy[static_cast<std::size_t>(b) * out + o];
                    if (d != 0.0)
                        axpy(d, xv2.data() + static_cast<std::size_t>(b) * in, dw.data() + static_cast<std::size_t>(o) * in, in);
                }
        }
    });
}

Var dense(Var x, Var weight, Var bias) {
    check_same_graph(x, bias);
    const Tensor& bv = bias.value();
    if (bv.rank() != 1 || weight.value().rank() != 2 || bv.dim(0) != weight.value().dim(0))
        dim_error("dense bias", weight.value().shape(), bv.shape());
    Var y = matmul_t(x, weight);
    Graph& g = *x.graph;
    Tensor out = y.value();
    const int batch = out.dim(0), n = out.dim(1);
    for (int b = 0; b < batch; ++b) axpy(1.0, bv.data(), out.data() + static_cast<std::size_t>(b) * n, n);
    const int yi = y.id, bi = bias.id;
    const bool rg = g.requires_grad(yi) || g.requires_grad(bi);
    return g.make(std::move(out), rg, [yi, bi, batch, n](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        if (gr.requires_grad(yi)) axpy(1.0, dy.data(), gr.grad_ref(yi).data(), static_cast<int>(dy.size()));
        if (gr.requires_grad(bi)) {
            Tensor& db = gr.grad_ref(bi);
            for (int b = 0; b < batch; ++b) axpy(1.0, dy.data() + static_cast<std::size_t>(b) * n, db.data(), n);
        }
    });
}

Var conv2d(Var x, Var weight, Var bias, int stride, int padding) {
    check_same_graph(x, weight);
    check_same_graph(x, bias);
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const Tensor& bv = bias.value();
    if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1) || wv.dim(2) != wv.dim(3))
        dim_error("conv2d", xv.shape(), wv.shape());
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(0)) dim_error("conv2d bias", wv.shape(), bv.shape());
    if (stride < 1 || padding < 0) throw UsageError("conv2d: stride must be >= 1 and padding >= 0");
    const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int oc = wv.dim(0), k = wv.dim(2);
    const int ho = (h + 2 * padding - k) / stride + 1;
    const int wo = (w + 2 * padding - k) / stride + 1;
    if (ho < 1 || wo < 1) dim_error("conv2d output", xv.shape(), wv.shape());
    const int pos = ho * wo;
    const int patch = ch * k * k;

    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(batch) * patch * pos, 0.0);
    for (int b = 0; b < batch; ++b) {
        const double* xb = xv.data() + static_cast<std::size_t>(b) * ch * h * w;
        double* cb = cols->data() + static_cast<std::size_t>(b) * patch * pos;
        for (int c = 0; c < ch; ++c)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double* row = cb + static_cast<std::size_t>((c * k + ky) * k + kx) * pos;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - padding + kx;
                            if (ix >= 0 && ix < w) row[oy * wo + ox] = xb[(c * h + iy) * w + ix];
                        }
                    }
                }
    }

    Tensor y(Shape{batch, oc, ho, wo});
    for (int b = 0; b < batch; ++b) {
        const double* cb = cols->data() + static_cast<std::size_t>(b) * patch * pos;
        for (int o = 0; o < oc; ++o) {
            double* yrow = y.data() + (static_cast<std::size_t>(b) * oc + o) * pos;
            std::fill(yrow, yrow + pos, bv[static_cast<std::size_t>(o)]);
            const double* wrow = wv.data() + static_cast<std::size_t>(o) * patch;
            for (int j = 0; j < patch; ++j)
                if (wrow[j] != 0.0) axpy(wrow[j], cb + static_cast<std::size_t>(j) * pos, yrow, pos);
        }
    }

    const int xi = x.id, wi = weight.id, bi = bias.id;
    const bool rg = g.requires_grad(xi) || g.requires_grad(wi) || g.requires_grad(bi);
    return g.make(std::move(y), rg,
                  [=, cols = std::move(cols)](Graph& gr, int self) {
                      const Tensor& dy = gr.upstream(self);
                      const Tensor& wv2 = gr.value(wi);
                      if (gr.requires_grad(wi)) {
                          Tensor& dw = gr.grad_ref(wi);
                          for (int b = 0; b < batch; ++b) {
                              const double* cb = cols->data() + static_cast<std::size_t>(b) * patch * pos;
                              for (int o = 0; o < oc; ++o) {
                                  const double* dyrow = dy.data() + (static_cast<std::size_t>(b) * oc + o) * pos;
                                  double* dwrow = dw.data() + static_cast<std::size_t>(o) * patch;
                                  for (int j = 0; j < patch; ++j)
                                      dwrow[j] += dot(dyrow, cb + static_cast<std::size_t>(j) * pos, pos);
                              }
                          }
                      }
                      if (gr.requires_grad(bi)) {
                          Tensor& db = gr.grad_ref(bi);
                          for (int b = 0; b < batch; ++b)
                              for (int o = 0; o < oc; ++o) {
                                  const double* dyrow = dy.data() + (static_cast<std::size_t>(b) * oc + o) * pos;
                                  double s = 0.0;
                                  for (int p = 0; p < pos; ++p) s += dyrow[p];
                                  db[static_cast<std::size_t>(o)] += s;
                              }
                      }
                      if (gr.requires_grad(xi)) {
                          Tensor& dx = gr.grad_ref(xi);
                          std::vector<double> dcols(static_cast<std::size_t>(patch) * pos);
                          for (int b = 0; b < batch; ++b) {
                              std::fill(dcols.begin(), dcols.end(), 0.0);
                              for (int o = 0; o < oc; ++o) {
                                  const double* dyrow = dy.data() + (static_cast<std::size_t>(b) * oc + o) * pos;
                                  const double* wrow = wv2.data() + static_cast<std::size_t>(o) * patch;
                                  for (int j = 0; j < patch; ++j)
                                      if (wrow[j] != 0.0) axpy(wrow[j], dyrow, dcols.data() + static_cast<std::size_t>(j) * pos, pos);
                              }
                              double* dxb = dx.data() + static_cast<std::size_t>(b) * ch * h * w;
                              for (int c = 0; c < ch; ++c)
                                  for (int ky = 0; ky < k; ++ky)
                                      for (int kx = 0; kx < k; ++kx) {
                                          const double* row = dcols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * pos;
                                          for (int oy = 0; oy < ho; ++oy) {
                                              const int iy = oy * stride - padding + ky;
                                              if (iy < 0 || iy >= h) continue;
                                              for (int ox = 0; ox < wo; ++ox) {
                                                  const int ix = ox * stride - padding + kx;
                                                  if (ix >= 0 && ix < w) dxb[(c * h + iy) * w + ix] += row[oy * wo + ox];
                                              }
                                          }
                                      }
                          }
                      }
                  });
}

Var relu(Var x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double, double xv) { return xv > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
    return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                 [](double y, double) { return y * (1.0 - y); });
}

Var square(Var x) {
    return unary(x, [](double v) { return v * v; }, [](double, double xv) { return 2.0 * xv; });
}

Var scale(Var x, double factor) {
    return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

namespace {

template <typename Op>
Var binary(const char* name, Var a, Var b, Op op, double sign_b, bool product) {
    check_same_graph(a, b);
    Graph& g = *a.graph;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) dim_error(name, av.shape(), bv.shape());
    Tensor y(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) y[i] = op(av[i], bv[i]);
    const int ai = a.id, bi = b.id;
    const bool rg = g.requires_grad(ai) || g.requires_grad(bi);
    return g.make(std::move(y), rg, [ai, bi, sign_b, product](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        if (gr.requires_grad(ai)) {
            Tensor& da = gr.grad_ref(ai);
            if (product) {
                const Tensor& bv2 = gr.value(bi);
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv2[i];
            } else {
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
            }
        }
        if (gr.requires_grad(bi)) {
            Tensor& db = gr.grad_ref(bi);
            if (product) {
                const Tensor& av2 = gr.value(ai);
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av2[i];
            } else {
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += sign_b * dy[i];
            }
        }
    });
}

}  // namespace

Var add(Var a, Var b) { return binary("add", a, b, [](double x, double y) { return x + y; }, 1.0, false); }
Var sub(Var a, Var b) { return binary("sub", a, b, [](double x, double y) { return x - y; }, -1.0, false); }
Var mul(Var a, Var b) { return binary("mul", a, b, [](double x, double y) { return x * y; }, 1.0, true); }

Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw UsageError("concat of zero tensors");
    Graph& g = *parts[0].graph;
    const int batch = parts[0].value().rank() == 2 ? parts[0].value().dim(0) : -1;
    std::vector<int> widths;
    std::vector<int> ids;
    int total = 0;
    bool rg = false;
    for (const Var& p : parts) {
        check_same_graph(parts[0], p);
        const Tensor& v = p.value();
        if (v.rank() != 2 || v.dim(0) != batch) dim_error("concat", parts[0].value().shape(), v.shape());
        widths.push_back(v.dim(1));
        ids.push_back(p.id);
        total += v.dim(1);
        rg = rg || g.requires_grad(p.id);
    }
    Tensor y(Shape{batch, total});
    int offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (int b = 0; b < batch; ++b)
            std::copy_n(v.data() + static_cast<std::size_t>(b) * widths[k], widths[k],
                        y.data() + static_cast<std::size_t>(b) * total + offset);
        offset += widths[k];
    }
    return g.make(std::move(y), rg, [ids, widths, batch, total](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        int off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (gr.requires_grad(ids[k])) {
                Tensor& dx = gr.grad_ref(ids[k]);
                for (int b = 0; b < batch; ++b)
                    axpy(1.0, dy.data() + static_cast<std::size_t>(b) * total + off,
                         dx.data() + static_cast<std::size_t>(b) * widths[k], widths[k]);
            }
            off += widths[k];
        }
    });
}

Var flatten(Var x) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    if (xv.rank() < 1) dim_error("flatten", xv.shape());
    const int batch = xv.dim(0);
    const int rest = batch == 0 ? 0 : static_cast<int>(xv.size() / static_cast<std::size_t>(batch));
    const int xi = x.id;
    return g.make(xv.reshaped(Shape{batch, rest}), g.requires_grad(xi), [xi](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        axpy(1.0, dy.data(), gr.grad_ref(xi).data(), static_cast<int>(dy.size()));
    });
}

Var slice(Var x, int start, int length) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || start < 0 || length < 0 || start + length > xv.dim(1))
        throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") of " +
                             shape_str(xv.shape()));
    const int batch = xv.dim(0), width = xv.dim(1);
    Tensor y(Shape{batch, length});
    for (int b = 0; b < batch; ++b)
        std::copy_n(xv.data() + static_cast<std::size_t>(b) * width + start, length,
                    y.data() + static_cast<std::size_t>(b) * length);
    const int xi = x.id;
    return g.make(std::move(y), g.requires_grad(xi), [xi, batch, width, start, length](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        Tensor& dx = gr.grad_ref(xi);
        for (int b = 0; b < batch; ++b)
            axpy(1.0, dy.data() + static_cast<std::size_t>(b) * length,
                 dx.data() + static_cast<std::size_t>(b) * width + start, length);
    });
}

Var l2_norm(Var x) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    if (xv.rank() < 1) dim_error("l2_norm", xv.shape());
    auto [rows, cols] = rows_cols(xv.shape());
    Shape out_shape(xv.shape().begin(), xv.shape().end() - 1);
    Tensor y(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * cols;
        y[r] = std::sqrt(dot(row, row, cols));
    }
    const int xi = x.id;
    const int c = cols;
    const std::size_t nrows = rows;
    return g.make(std::move(y), g.requires_grad(xi), [xi, c, nrows](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        const Tensor& yv = gr.value(self);
        const Tensor& xv2 = gr.value(xi);
        Tensor& dx = gr.grad_ref(xi);
        for (std::size_t r = 0; r < nrows; ++r) {
            // Subgradient 0 at the origin.
            if (yv[r] == 0.0) continue;
            axpy(dy[r] / yv[r], xv2.data() + r * c, dx.data() + r * c, c);
        }
    });
}

Var sum(Var x) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    double s = 0.0;
    for (double v : xv.values()) s += v;
    const int xi = x.id;
    return g.make(Tensor::scalar(s), g.requires_grad(xi), [xi](Graph& gr, int self) {
        const double d = gr.upstream(self)[0];
        for (double& v : gr.grad_ref(xi).values()) v += d;
    });
}

Var mean(Var x) {
    const std::size_t n = x.value().size();
    if (n == 0) throw UsageError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_squares(Var x) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    const double s = dot(xv.data(), xv.data(), static_cast<int>(xv.size()));
    const int xi = x.id;
    return g.make(Tensor::scalar(s), g.requires_grad(xi), [xi](Graph& gr, int self) {
        const double d = gr.upstream(self)[0];
        const Tensor& xv2 = gr.value(xi);
        axpy(2.0 * d, xv2.data(), gr.grad_ref(xi).data(), static_cast<int>(xv2.size()));
    });
}

Var mse(Var a, Var b) { return mean(square(sub(a, b))); }

Var softmax(Var x) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    if (xv.rank() < 1) dim_error("softmax", xv.shape());
    auto [rows, cols] = rows_cols(xv.shape());
    Tensor y(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * cols;
        double* out = y.data() + r * cols;
        const double m = *std::max_element(in, in + cols);
        double z = 0.0;
        for (int k = 0; k < cols; ++k) z += (out[k] = std::exp(in[k] - m));
        for (int k = 0; k < cols; ++k) out[k] /= z;
    }
    const int xi = x.id;
    const int c = cols;
    const std::size_t nrows = rows;
    return g.make(std::move(y), g.requires_grad(xi), [xi, c, nrows](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        const Tensor& yv = gr.value(self);
        Tensor& dx = gr.grad_ref(xi);
        for (std::size_t r = 0; r < nrows; ++r) {
            const double s = dot(dy.data() + r * c, yv.data() + r * c, c);
            for (int k = 0; k < c; ++k) dx[r * c + k] += yv[r * c + k] * (dy[r * c + k] - s);
        }
    });
}

Var log_softmax(Var x, const std::vector<bool>& mask) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    if (xv.rank() < 1) dim_error("log_softmax", xv.shape());
    auto [rows, cols] = rows_cols(xv.shape());
    const bool per_row = mask.size() == rows * static_cast<std::size_t>(cols);
    if (!mask.empty() && !per_row && mask.size() != static_cast<std::size_t>(cols))
        throw DimensionError("log_softmax: mask of length " + std::to_string(mask.size()) + " for shape " +
                             shape_str(xv.shape()));
    auto legal = [&mask, per_row, cols](std::size_t r, int k) {
        if (mask.empty()) return true;
        return per_row ? static_cast<bool>(mask[r * cols + k]) : static_cast<bool>(mask[k]);
    };
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    Tensor y(xv.shape());
    std::vector<char> valid(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * cols;
        double m = kNegInf;
        for (int k = 0; k < cols; ++k) {
            valid[r * cols + k] = legal(r, k);
            if (valid[r * cols + k]) m = std::max(m, in[k]);
        }
        if (m == kNegInf) throw UsageError("log_softmax: every entry of a row is masked");
        double z = 0.0;
        for (int k = 0; k < cols; ++k)
            if (valid[r * cols + k]) z += std::exp(in[k] - m);
        const double lse = m + std::log(z);
        for (int k = 0; k < cols; ++k) y[r * cols + k] = valid[r * cols + k] ? in[k] - lse : kNegInf;
    }
    const int xi = x.id;
    const int c = cols;
    const std::size_t nrows = rows;
    return g.make(std::move(y), g.requires_grad(xi), [xi, c, nrows, valid = std::move(valid)](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        const Tensor& yv = gr.value(self);
        Tensor& dx = gr.grad_ref(xi);
        for (std::size_t r = 0; r < nrows; ++r) {
            double s = 0.0;
            for (int k = 0; k < c; ++k)
                if (valid[r * c + k]) s += dy[r * c + k];
            for (int k = 0; k < c; ++k)
                if (valid[r * c + k]) dx[r * c + k] += dy[r * c + k] - std::exp(yv[r * c + k]) * s;
        }
    });
}

Var pick(Var x, std::span<const int> index) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || static_cast<std::size_t>(xv.dim(0)) != index.size())
        throw DimensionError("pick: " + std::to_string(index.size()) + " indices for shape " + shape_str(xv.shape()));
    const int rows = xv.dim(0), cols = xv.dim(1);
    Tensor y(Shape{rows});
    for (int r = 0; r < rows; ++r) {
        if (index[r] < 0 || index[r] >= cols) throw DimensionError("pick: index out of range");
        y[static_cast<std::size_t>(r)] = xv[static_cast<std::size_t>(r) * cols + index[r]];
    }
    const int xi = x.id;
    std::vector<int> idv(index.begin(), index.end());
    return g.make(std::move(y), g.requires_grad(xi), [xi, cols, idv = std::move(idv)](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        Tensor& dx = gr.grad_ref(xi);
        for (std::size_t r = 0; r < idv.size(); ++r) dx[r * cols + idv[r]] += dy[r];
    });
}

Var entropy_from_log_probs(Var log_probs) {
    Graph& g = *log_probs.graph;
    const Tensor& lv = log_probs.value();
    if (lv.rank() != 2) dim_error("entropy", lv.shape());
    const int rows = lv.dim(0), cols = lv.dim(1);
    Tensor y(Shape{rows});
    for (int r = 0; r < rows; ++r) {
        double h = 0.0;
        for (int k = 0; k < cols; ++k) {
            const double l = lv[static_cast<std::size_t>(r) * cols + k];
            if (std::isfinite(l)) h -= std::exp(l) * l;
        }
        y[static_cast<std::size_t>(r)] = h;
    }
    const int li = log_probs.id;
    return g.make(std::move(y), g.requires_grad(li), [li, rows, cols](Graph& gr, int self) {
        const Tensor& dy = gr.upstream(self);
        const Tensor& lv2 = gr.value(li);
        Tensor& dl = gr.grad_ref(li);
        for (int r = 0; r < rows; ++r)
            for (int k = 0; k < cols; ++k) {
                const std::size_t i = static_cast<std::size_t>(r) * cols + k;
                if (std::isfinite(lv2[i])) dl[i] -= dy[static_cast<std::size_t>(r)] * std::exp(lv2[i]) * (lv2[i] + 1.0);
            }
    });
}

Var embedding_lookup(Var table, std::span<const int> ids) { return gather_impl("embedding_lookup", table, ids); }

Var gather_rows(Var x, std::span<const int> rows) { return gather_impl("gather_rows", x, rows); }

// ---- gradient checking ------------------------------------------------------

double grad_check(const std::function<Var(Graph&)>& build, ParamStore& params, double epsilon) {
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) throw UsageError("grad_check epsilon must lie in [1e-6, 1e-3]");
    std::vector<Tensor> analytic;
    {
        Graph g;
        Var out = build(g);
        if (out.value().size() != 1)
            throw UsageError("grad_check needs a scalar output, got shape " + shape_str(out.value().shape()));
        params.zero_grad();
        g.backward(out);
        for (const auto& p : params.params()) analytic.push_back(p.grad);
        params.zero_grad();
    }
    auto eval = [&build]() {
        Graph g;
        return build(g).value().item();
    };
    double worst = 0.0;
    for (int k = 0; k < params.size(); ++k) {
        Param& p = params.at(k);
        if (!p.trainable) continue;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value[i];
            p.value[i] = orig + epsilon;
            const double up = eval();
            p.value[i] = orig - epsilon;
            const double down = eval();
            p.value[i] = orig;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = analytic[static_cast<std::size_t>(k)][i];
            const double err = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-7);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace groundrl::ad
