#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace meanflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major array of doubles. Rank 0 holds one element.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
  static Tensor column(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n, 1}, std::move(v));
  }
  static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * shape_[1], shape_[1]};
  }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Exact bit-pattern equality, distinguishing -0.0 from 0.0.
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](double x, double y) {
                      return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
                    });
}

inline bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double x) { return std::isfinite(x); });
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double norm2(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return std::sqrt(s);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline void require_rank2(const Tensor& a, const char* what) {
  if (a.rank() != 2)
    throw ShapeError(std::string(what) + ": expected rank-2 tensor, got " + shape_str(a.shape()));
}

// ---------------------------------------------------------------------------
// Kernels. Every differentiation mode calls these, so primal values agree
// bitwise across plain, forward and reverse evaluation.
// ---------------------------------------------------------------------------
namespace kernels {

// [m,k] x [k,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor out(Shape{m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// a^T b : [k,m]^T x [k,n] -> [m,n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul_tn: leading extents differ");
  Tensor out(Shape{m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = pa[p * m + i];
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// a b^T : [m,k] x [n,k]^T -> [m,n]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw ShapeError("matmul_nt: trailing extents differ");
  Tensor out(Shape{m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      po[i * n + j] = s;
    }
  }
  return out;
}

template <class F>
inline Tensor map(const Tensor& a, F&& f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
inline Tensor zip(const Tensor& a, const Tensor& b, const char* what, F&& f) {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Tensor scale(const Tensor& a, double s) {
  return map(a, [s](double x) { return s * x; });
}
inline Tensor neg(const Tensor& a) {
  return map(a, [](double x) { return -x; });
}

inline void add_inplace(Tensor& acc, const Tensor& b) {
  require_same_shape(acc, b, "accumulate");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += b[i];
}

// [m,n] + broadcast row of n entries
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank2(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n)
    throw ShapeError("add_row: bias of shape " + shape_str(row.shape()) + " for width " +
                     std::to_string(n));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + row[j];
  return out;
}

// column sums, shaped like the bias row
inline Tensor sum_rows(const Tensor& a, const Shape& row_shape) {
  require_rank2(a, "sum_rows");
  Tensor out(row_shape);
  const std::size_t m = a.rows(), n = a.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a[i * n + j];
  return out;
}

// per-row sum: [m,n] -> [m,1]
inline Tensor row_sum(const Tensor& a) {
  require_rank2(a, "row_sum");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out(Shape{m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a[i * n + j];
    out[i] = s;
  }
  return out;
}

// [m,n] * broadcast column [m,1]
inline Tensor mul_col(const Tensor& a, const Tensor& col) {
  require_rank2(a, "mul_col");
  const std::size_t m = a.rows(), n = a.cols();
  if (col.size() != m) throw ShapeError("mul_col: column length does not match rows");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] * col[i];
  return out;
}

// [m,n] -> [m,1] broadcast back: out[i,j] = col[i]
inline Tensor broadcast_col(const Tensor& col, std::size_t n) {
  const std::size_t m = col.size();
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = col[i];
  return out;
}

inline double sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return s;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline Tensor concat_cols(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0]->rows();
  std::size_t n = 0;
  for (const Tensor* p : parts) {
    require_rank2(*p, "concat_cols");
    if (p->rows() != m) throw ShapeError("concat_cols: row counts differ");
    n += p->cols();
  }
  Tensor out(Shape{m, n});
  std::size_t off = 0;
  for (const Tensor* p : parts) {
    const std::size_t w = p->cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + off + j] = p->at(i, j);
    off += w;
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t width) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out(Shape{m, width});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = a[i * n + begin + j];
  return out;
}

inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> idx) {
  require_rank2(table, "gather_rows");
  const std::size_t n = table.cols();
  Tensor out(Shape{idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= table.rows()) throw ShapeError("gather_rows: row index out of range");
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = table.at(idx[i], j);
  }
  return out;
}

inline Tensor scatter_add_rows(const Tensor& g, std::span<const std::size_t> idx,
                               const Shape& table_shape) {
  Tensor out(table_shape);
  const std::size_t n = table_shape[1];
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) out[idx[i] * n + j] += g[i * n + j];
  return out;
}

// [m,1] -> [m, 2F] laid out as (sin f0 x, cos f0 x, sin f1 x, cos f1 x, ...)
inline Tensor sinusoid(const Tensor& x, std::span<const double> freqs) {
  const std::size_t m = x.size(), f = freqs.size();
  Tensor out(Shape{m, 2 * f});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < f; ++k) {
      const double a = freqs[k] * x[i];
      out[i * 2 * f + 2 * k] = std::sin(a);
      out[i * 2 * f + 2 * k + 1] = std::cos(a);
    }
  return out;
}

// d sinusoid / dx as a [m,2F] matrix of per-feature slopes
inline Tensor sinusoid_slope(const Tensor& x, std::span<const double> freqs) {
  const std::size_t m = x.size(), f = freqs.size();
  Tensor out(Shape{m, 2 * f});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < f; ++k) {
      const double a = freqs[k] * x[i];
      out[i * 2 * f + 2 * k] = freqs[k] * std::cos(a);
      out[i * 2 * f + 2 * k + 1] = -freqs[k] * std::sin(a);
    }
  return out;
}

}  // namespace kernels
}  // namespace meanflow
