#pragma once

// Reverse-mode differentiation over a linear tape of tensor operations.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "meanflow/tensor.hpp"

namespace meanflow {

class Tape;

// Handle to a tape node. Cheap to copy; valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var leaf(Tensor v) { return push(std::move(v), true, nullptr); }

  // Constant input; gradients never flow into or through it.
  Var constant(Tensor v) { return push(std::move(v), false, nullptr); }

  Var record(Tensor v, std::span<const Var> inputs, Backward bw) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(std::move(v), needs, needs ? std::move(bw) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Adds g into the gradient slot of node id (no-op for constants).
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty())
      n.grad = g;
    else
      kernels::add_inplace(n.grad, g);
  }

  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

  // Seeds d(out)/d(out) = 1 and sweeps the tape backwards.
  void backward(Var out) {
    if (nodes_[out.id].value.size() != 1)
      throw ShapeError("backward: output must be scalar, got shape " +
                       shape_str(nodes_[out.id].value.shape()));
    for (Node& n : nodes_) n.grad = Tensor{};
    accumulate(out.id, Tensor(nodes_[out.id].value.shape(), 1.0));
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  // Gradient of the last backward() w.r.t. v; zeros if nothing reached it.
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor v, bool requires_grad, Backward bw) {
    nodes_.push_back(Node{std::move(v), Tensor{}, requires_grad, std::move(bw)});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace rev {

// Value-identical node that blocks gradient flow.
inline Var detach(Var x) { return x.tape->constant(x.value()); }

inline Var add(Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape->record(kernels::add(a.value(), b.value()), in,
                        [a, b](Tape& tp, std::size_t self) {
                          const Tensor& g = tp.upstream(self);
                          tp.accumulate(a.id, g);
                          tp.accumulate(b.id, g);
                        });
}

inline Var sub(Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape->record(kernels::sub(a.value(), b.value()), in,
                        [a, b](Tape& tp, std::size_t self) {
                          const Tensor& g = tp.upstream(self);
                          tp.accumulate(a.id, g);
                          if (tp.requires_grad(b.id)) tp.accumulate(b.id, kernels::neg(g));
                        });
}

inline Var mul(Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape->record(kernels::mul(a.value(), b.value()), in,
                        [a, b](Tape& tp, std::size_t self) {
                          const Tensor& g = tp.upstream(self);
                          if (tp.requires_grad(a.id)) tp.accumulate(a.id, kernels::mul(g, b.value()));
                          if (tp.requires_grad(b.id)) tp.accumulate(b.id, kernels::mul(g, a.value()));
                        });
}

inline Var scale(Var a, double s) {
  const Var in[] = {a};
  return a.tape->record(kernels::scale(a.value(), s), in, [a, s](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, kernels::scale(tp.upstream(self), s));
  });
}

inline Var matmul(Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape->record(kernels::matmul(a.value(), b.value()), in,
                        [a, b](Tape& tp, std::size_t self) {
                          const Tensor& g = tp.upstream(self);
                          if (tp.requires_grad(a.id)) tp.accumulate(a.id, kernels::matmul_nt(g, b.value()));
                          if (tp.requires_grad(b.id)) tp.accumulate(b.id, kernels::matmul_tn(a.value(), g));
                        });
}

inline Var add_row(Var a, Var row) {
  const Var in[] = {a, row};
  return a.tape->record(kernels::add_row(a.value(), row.value()), in,
                        [a, row](Tape& tp, std::size_t self) {
                          const Tensor& g = tp.upstream(self);
                          tp.accumulate(a.id, g);
                          if (tp.requires_grad(row.id))
                            tp.accumulate(row.id, kernels::sum_rows(g, row.value().shape()));
                        });
}

inline Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

template <class F, class G>
inline Var pointwise(Var a, F&& f, G slope) {
  const Var in[] = {a};
  return a.tape->record(kernels::map(a.value(), f), in, [a, slope](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& x = a.value();
    Tensor d(x.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * slope(x[i]);
    tp.accumulate(a.id, d);
  });
}

inline Var silu(Var a) {
  return pointwise(a, [](double x) { return kernels::silu(x); },
                   [](double x) { return kernels::silu_grad(x); });
}
inline Var gelu(Var a) {
  return pointwise(a, [](double x) { return kernels::gelu(x); },
                   [](double x) { return kernels::gelu_grad(x); });
}
inline Var sin(Var a) {
  return pointwise(a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}
inline Var cos(Var a) {
  return pointwise(a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

inline Var sum(Var a) {
  const Var in[] = {a};
  return a.tape->record(Tensor::scalar(kernels::sum_all(a.value())), in,
                        [a](Tape& tp, std::size_t self) {
                          tp.accumulate(a.id, Tensor(a.value().shape(), tp.upstream(self).item()));
                        });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  const Var in[] = {a};
  return a.tape->record(Tensor::scalar(kernels::sum_all(a.value()) / n), in,
                        [a, n](Tape& tp, std::size_t self) {
                          tp.accumulate(a.id, Tensor(a.value().shape(), tp.upstream(self).item() / n));
                        });
}

inline Var row_sum(Var a) {
  const Var in[] = {a};
  return a.tape->record(kernels::row_sum(a.value()), in, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, kernels::broadcast_col(tp.upstream(self), a.value().cols()));
  });
}

inline Var mul_col(Var a, Var col) {
  const Var in[] = {a, col};
  return a.tape->record(kernels::mul_col(a.value(), col.value()), in,
                        [a, col](Tape& tp, std::size_t self) {
                          const Tensor& g = tp.upstream(self);
                          if (tp.requires_grad(a.id)) tp.accumulate(a.id, kernels::mul_col(g, col.value()));
                          if (tp.requires_grad(col.id))
                            tp.accumulate(col.id, kernels::row_sum(kernels::mul(g, a.value()))
                                                      .reshaped(col.value().shape()));
                        });
}

inline Var concat_cols(std::span<const Var> parts) {
  std::vector<const Tensor*> ps;
  for (const Var& v : parts) ps.push_back(&v.value());
  std::vector<Var> ins(parts.begin(), parts.end());
  Tape* tape = parts.front().tape;
  return tape->record(kernels::concat_cols(ps), ins, [ins](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    std::size_t off = 0;
    for (const Var& v : ins) {
      const std::size_t w = v.value().cols();
      if (tp.requires_grad(v.id)) tp.accumulate(v.id, kernels::slice_cols(g, off, w));
      off += w;
    }
  });
}

inline Var gather_rows(Var table, std::span<const std::size_t> idx) {
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  const Var in[] = {table};
  return table.tape->record(kernels::gather_rows(table.value(), idx), in,
                            [table, rows](Tape& tp, std::size_t self) {
                              tp.accumulate(table.id, kernels::scatter_add_rows(
                                                          tp.upstream(self), rows, table.value().shape()));
                            });
}

inline Var sinusoid(Var x, std::span<const double> freqs) {
  std::vector<double> f(freqs.begin(), freqs.end());
  const Var in[] = {x};
  return x.tape->record(kernels::sinusoid(x.value(), freqs), in, [x, f](Tape& tp, std::size_t self) {
    Tensor d = kernels::row_sum(kernels::mul(tp.upstream(self), kernels::sinusoid_slope(x.value(), f)));
    tp.accumulate(x.id, d.reshaped(x.value().shape()));
  });
}

}  // namespace rev

// d loss / d params for a scalar loss built on a fresh tape. loss_fn receives
// the tape and one leaf per parameter tensor, in order.
using ParamGrads = std::vector<Tensor>;

template <class LossFn>
ParamGrads grad_params(LossFn&& loss_fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  Var loss = loss_fn(tape, std::span<const Var>(leaves));
  if (loss.value().size() != 1)
    throw ShapeError("grad_params: loss must be scalar, got shape " + shape_str(loss.shape()));
  tape.backward(loss);
  ParamGrads grads;
  grads.reserve(leaves.size());
  for (const Var& v : leaves) grads.push_back(tape.grad(v));
  return grads;
}

// Plain-tensor stop-gradient: a value copy, carrying no differentiation state.
inline Tensor detach(const Tensor& x) { return x; }

}  // namespace meanflow
