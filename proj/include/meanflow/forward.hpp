#pragma once

// Forward-mode differentiation: every value carries one tangent lane.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "meanflow/tensor.hpp"

namespace meanflow {

// Primal value plus directional derivative. An empty tangent means the
// derivative is structurally zero (parameters, constants), which lets the
// kernels skip work without changing any primal result.
struct Dual {
  Tensor primal;
  Tensor tangent;

  Dual() = default;
  explicit Dual(Tensor p) : primal(std::move(p)) {}
  Dual(Tensor p, Tensor t) : primal(std::move(p)), tangent(std::move(t)) {
    if (!tangent.empty()) require_same_shape(primal, tangent, "dual");
  }

  bool has_tangent() const noexcept { return !tangent.empty(); }
  const Shape& shape() const noexcept { return primal.shape(); }
  Tensor tangent_or_zero() const { return has_tangent() ? tangent : Tensor::zeros_like(primal); }
};

struct JvpOutput {
  Tensor primal;
  Tensor tangent;
};

namespace fwd {

namespace detail {
// a + b where either side may be structurally zero
inline Tensor add_opt(Tensor a, const Tensor& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  kernels::add_inplace(a, b);
  return a;
}
}  // namespace detail

inline Dual constant(Tensor v) { return Dual(std::move(v)); }

inline Dual add(const Dual& a, const Dual& b) {
  return {kernels::add(a.primal, b.primal), detail::add_opt(a.tangent, b.tangent)};
}

inline Dual sub(const Dual& a, const Dual& b) {
  Tensor t;
  if (a.has_tangent() && b.has_tangent())
    t = kernels::sub(a.tangent, b.tangent);
  else if (a.has_tangent())
    t = a.tangent;
  else if (b.has_tangent())
    t = kernels::neg(b.tangent);
  return {kernels::sub(a.primal, b.primal), std::move(t)};
}

inline Dual mul(const Dual& a, const Dual& b) {
  Tensor t;
  if (a.has_tangent()) t = kernels::mul(a.tangent, b.primal);
  if (b.has_tangent()) t = detail::add_opt(std::move(t), kernels::mul(a.primal, b.tangent));
  return {kernels::mul(a.primal, b.primal), std::move(t)};
}

inline Dual scale(const Dual& a, double s) {
  return {kernels::scale(a.primal, s), a.has_tangent() ? kernels::scale(a.tangent, s) : Tensor{}};
}

inline Dual matmul(const Dual& a, const Dual& b) {
  Tensor t;
  if (a.has_tangent()) t = kernels::matmul(a.tangent, b.primal);
  if (b.has_tangent()) t = detail::add_opt(std::move(t), kernels::matmul(a.primal, b.tangent));
  return {kernels::matmul(a.primal, b.primal), std::move(t)};
}

inline Dual add_row(const Dual& a, const Dual& row) {
  Tensor t = a.tangent;
  if (row.has_tangent()) {
    Tensor bt = kernels::add_row(Tensor(a.shape()), row.tangent);
    t = detail::add_opt(std::move(t), bt);
  }
  return {kernels::add_row(a.primal, row.primal), std::move(t)};
}

// x W + b
inline Dual affine(const Dual& x, const Dual& w, const Dual& b) {
  return add_row(matmul(x, w), b);
}

template <class F, class G>
inline Dual pointwise(const Dual& a, F&& f, G&& slope) {
  Tensor p = kernels::map(a.primal, f);
  if (!a.has_tangent()) return Dual(std::move(p));
  Tensor t(a.shape());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = slope(a.primal[i]) * a.tangent[i];
  return {std::move(p), std::move(t)};
}

inline Dual silu(const Dual& a) {
  return pointwise(a, [](double x) { return kernels::silu(x); },
                   [](double x) { return kernels::silu_grad(x); });
}
inline Dual gelu(const Dual& a) {
  return pointwise(a, [](double x) { return kernels::gelu(x); },
                   [](double x) { return kernels::gelu_grad(x); });
}
inline Dual sin(const Dual& a) {
  return pointwise(a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}
inline Dual cos(const Dual& a) {
  return pointwise(a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

inline Dual sum(const Dual& a) {
  return {Tensor::scalar(kernels::sum_all(a.primal)),
          a.has_tangent() ? Tensor::scalar(kernels::sum_all(a.tangent)) : Tensor{}};
}

inline Dual mean(const Dual& a) {
  const double n = static_cast<double>(a.primal.size());
  return {Tensor::scalar(kernels::sum_all(a.primal) / n),
          a.has_tangent() ? Tensor::scalar(kernels::sum_all(a.tangent) / n) : Tensor{}};
}

inline Dual row_sum(const Dual& a) {
  return {kernels::row_sum(a.primal), a.has_tangent() ? kernels::row_sum(a.tangent) : Tensor{}};
}

inline Dual mul_col(const Dual& a, const Dual& col) {
  Tensor t;
  if (a.has_tangent()) t = kernels::mul_col(a.tangent, col.primal);
  if (col.has_tangent()) t = detail::add_opt(std::move(t), kernels::mul_col(a.primal, col.tangent));
  return {kernels::mul_col(a.primal, col.primal), std::move(t)};
}

inline Dual concat_cols(std::span<const Dual> parts) {
  std::vector<const Tensor*> ps;
  bool any = false;
  for (const Dual& d : parts) {
    ps.push_back(&d.primal);
    any = any || d.has_tangent();
  }
  Tensor p = kernels::concat_cols(ps);
  if (!any) return Dual(std::move(p));
  std::vector<Tensor> zeros;
  zeros.reserve(parts.size());
  std::vector<const Tensor*> ts;
  for (const Dual& d : parts) {
    if (d.has_tangent()) {
      ts.push_back(&d.tangent);
    } else {
      zeros.emplace_back(d.shape());
      ts.push_back(&zeros.back());
    }
  }
  return {std::move(p), kernels::concat_cols(ts)};
}

inline Dual gather_rows(const Dual& table, std::span<const std::size_t> idx) {
  return {kernels::gather_rows(table.primal, idx),
          table.has_tangent() ? kernels::gather_rows(table.tangent, idx) : Tensor{}};
}

inline Dual sinusoid(const Dual& x, std::span<const double> freqs) {
  Tensor p = kernels::sinusoid(x.primal, freqs);
  if (!x.has_tangent()) return Dual(std::move(p));
  return {std::move(p), kernels::mul_col(kernels::sinusoid_slope(x.primal, freqs), x.tangent)};
}

}  // namespace fwd

// Evaluates fn at (z, r, t) and its directional derivative along (dz, dr, dt)
// in a single forward pass. fn maps three Duals to a Dual; parameters it
// closes over are treated as constants.
template <class Fn>
JvpOutput jvp(Fn&& fn, const Tensor& z, const Tensor& r, const Tensor& t, const Tensor& dz,
              const Tensor& dr, const Tensor& dt) {
  auto check = [](const Tensor& p, const Tensor& d, const char* name) {
    if (p.shape() != d.shape())
      throw ShapeError(std::string("jvp: tangent component '") + name + "' has shape " +
                       shape_str(d.shape()) + " but point has " + shape_str(p.shape()));
  };
  check(z, dz, "z");
  check(r, dr, "r");
  check(t, dt, "t");
  Dual out = fn(Dual(z, dz), Dual(r, dr), Dual(t, dt));
  Tensor tangent = out.tangent_or_zero();
  return {std::move(out.primal), std::move(tangent)};
}

// Scalar-time convenience: r and t are shared by every row of z.
template <class Fn>
JvpOutput jvp(Fn&& fn, const Tensor& z, double r, double t, const Tensor& dz, double dr, double dt) {
  const std::size_t b = z.rank() == 0 ? 1 : z.dim(0);
  return jvp(std::forward<Fn>(fn), z, Tensor(Shape{b, 1}, r), Tensor(Shape{b, 1}, t), dz,
             Tensor(Shape{b, 1}, dr), Tensor(Shape{b, 1}, dt));
}

}  // namespace meanflow
