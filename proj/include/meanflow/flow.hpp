#pragma once

// Interpolation paths, conditional velocities and samplers. Time runs from
// t = 1 (prior) to t = 0 (data).

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "meanflow/tensor.hpp"

namespace meanflow {

// z_t = a(t) x + b(t) eps
class Schedule {
 public:
  virtual ~Schedule() = default;
  virtual double a(double t) const = 0;
  virtual double b(double t) const = 0;
  virtual double da(double t) const = 0;
  virtual double db(double t) const = 0;
};

class LinearSchedule final : public Schedule {
 public:
  double a(double t) const override { return 1.0 - t; }
  double b(double t) const override { return t; }
  double da(double) const override { return -1.0; }
  double db(double) const override { return 1.0; }
};

inline const Schedule& default_schedule() {
  static const LinearSchedule s;
  return s;
}

inline Tensor interpolate(const Tensor& x, const Tensor& eps, double t,
                          const Schedule& s = default_schedule()) {
  require_same_shape(x, eps, "interpolate");
  const double a = s.a(t), b = s.b(t);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + b * eps[i];
  return z;
}

// Row-wise times: t is [B,1], x and eps are [B,d].
inline Tensor interpolate(const Tensor& x, const Tensor& eps, const Tensor& t,
                          const Schedule& s = default_schedule()) {
  require_same_shape(x, eps, "interpolate");
  require_rank2(x, "interpolate");
  if (t.size() != x.rows()) throw ShapeError("interpolate: one time per row required");
  Tensor z(x.shape());
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double a = s.a(t[i]), b = s.b(t[i]);
    for (std::size_t j = 0; j < d; ++j) z[i * d + j] = a * x[i * d + j] + b * eps[i * d + j];
  }
  return z;
}

// a'(t) x + b'(t) eps; eps - x under the linear schedule.
inline Tensor conditional_velocity(const Tensor& x, const Tensor& eps, double t,
                                   const Schedule& s = default_schedule()) {
  require_same_shape(x, eps, "conditional_velocity");
  const double da = s.da(t), db = s.db(t);
  Tensor v(x.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = da * x[i] + db * eps[i];
  return v;
}

// Linear-schedule fast path, independent of t.
inline Tensor conditional_velocity(const Tensor& x, const Tensor& eps) { return kernels::sub(eps, x); }

// x = eps - u(eps, 0, 1). UFn: (const Tensor& z, double r, double t) -> Tensor.
template <class UFn>
Tensor one_step_sample(UFn&& u_fn, const Tensor& eps) {
  return kernels::sub(eps, u_fn(eps, 0.0, 1.0));
}

inline void check_time_grid(std::span<const double> grid) {
  if (grid.size() < 2) throw ValueError("time grid needs at least two points");
  if (grid.front() != 1.0 || grid.back() != 0.0) throw ValueError("time grid must start at 1 and end at 0");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] < grid[i - 1])) throw ValueError("time grid must be strictly descending");
}

inline std::vector<double> uniform_time_grid(std::size_t steps) {
  if (steps == 0) throw ValueError("sampling needs at least one step");
  std::vector<double> g(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) g[i] = 1.0 - static_cast<double>(i) / static_cast<double>(steps);
  g.back() = 0.0;
  return g;
}

// z_r = z_t - (t - r) u(z_t, r, t) along a descending grid.
template <class UFn>
Tensor multi_step_sample(UFn&& u_fn, const Tensor& eps, std::span<const double> grid) {
  check_time_grid(grid);
  Tensor z = eps;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double t = grid[i], r = grid[i + 1];
    const Tensor u = u_fn(z, r, t);
    require_same_shape(z, u, "multi_step_sample");
    for (std::size_t j = 0; j < z.size(); ++j) z[j] -= (t - r) * u[j];
  }
  return z;
}

enum class OdeMethod { Euler, Midpoint };

// Integrates dz/dt = v(z, t) from t = 1 down to 0 in n equal steps.
// VFn: (const Tensor& z, double t) -> Tensor.
template <class VFn>
Tensor euler_fm_sample(VFn&& v_fn, const Tensor& eps, std::size_t n_steps, OdeMethod method = OdeMethod::Euler) {
  if (n_steps == 0) throw ValueError("euler_fm_sample: n_steps must be >= 1");
  Tensor z = eps;
  const double h = 1.0 / static_cast<double>(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) * h;
    Tensor v = v_fn(z, t);
    if (method == OdeMethod::Midpoint) {
      Tensor mid = z;
      for (std::size_t j = 0; j < z.size(); ++j) mid[j] -= 0.5 * h * v[j];
      v = v_fn(mid, t - 0.5 * h);
    }
    for (std::size_t j = 0; j < z.size(); ++j) z[j] -= h * v[j];
  }
  return z;
}

}  // namespace meanflow
