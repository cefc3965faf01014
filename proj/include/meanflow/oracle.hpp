#pragma once

// Ground-truth fields for Gaussian-mixture data under z_t = (1 - t) x + t eps.
//
// Per component k with x ~ N(mu_k, s_k I) and eps ~ N(0, I), (z_t, eps - x)
// is jointly Gaussian:
//   z_t ~ N((1 - t) mu_k, sigma_k^2 I),   sigma_k^2 = (1 - t)^2 s_k + t^2
//   Cov(eps - x, z_t) = (t - (1 - t) s_k) I
// so E[eps - x | z_t = z, k] = -mu_k + (t - (1 - t) s_k) / sigma_k^2 (z - (1 - t) mu_k),
// and the marginal velocity mixes these with posterior responsibilities.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "meanflow/tensor.hpp"

namespace meanflow {

class SingularityError : public Error {
 public:
  using Error::Error;
};

struct GmmComponent {
  double weight = 1.0;
  std::vector<double> mean;
  double variance = 0.0;  // isotropic; 0 is a point mass

  bool operator==(const GmmComponent&) const = default;
};

struct GmmSpec {
  std::vector<GmmComponent> components;

  bool operator==(const GmmSpec&) const = default;

  std::size_t dim() const { return components.empty() ? 0 : components.front().mean.size(); }

  void validate() const {
    if (components.empty()) throw ValueError("gmm: at least one component required");
    double total = 0.0;
    for (const auto& c : components) {
      if (!(c.weight > 0.0)) throw ValueError("gmm: component weights must be positive");
      if (!(c.variance >= 0.0)) throw ValueError("gmm: component variances must be non-negative");
      if (c.mean.size() != dim() || c.mean.empty()) throw ValueError("gmm: component means must share one dimension");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ValueError("gmm: weights must sum to 1");
  }

  bool has_point_mass() const {
    return std::any_of(components.begin(), components.end(), [](const auto& c) { return c.variance == 0.0; });
  }
  bool is_single_point_mass() const { return components.size() == 1 && components[0].variance == 0.0; }

  std::vector<double> mean() const {
    std::vector<double> m(dim(), 0.0);
    for (const auto& c : components)
      for (std::size_t j = 0; j < m.size(); ++j) m[j] += c.weight * c.mean[j];
    return m;
  }

  // Row-major d x d mixture covariance.
  std::vector<double> covariance() const {
    const std::size_t d = dim();
    const auto mu = mean();
    std::vector<double> cov(d * d, 0.0);
    for (const auto& c : components)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          cov[i * d + j] += c.weight * ((i == j ? c.variance : 0.0) + (c.mean[i] - mu[i]) * (c.mean[j] - mu[j]));
    return cov;
  }

  static GmmSpec point_mass(std::vector<double> x0) { return {{{1.0, std::move(x0), 0.0}}}; }
  static GmmSpec gaussian(std::vector<double> mean, double variance) {
    return {{{1.0, std::move(mean), variance}}};
  }
  // k equal-weight components on a circle of the given radius in 2D.
  static GmmSpec ring(std::size_t k, double radius, double variance) {
    GmmSpec g;
    for (std::size_t j = 0; j < k; ++j) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(k);
      g.components.push_back({1.0 / static_cast<double>(k), {radius * std::cos(a), radius * std::sin(a)}, variance});
    }
    return g;
  }
};

namespace detail {

// Writes E[eps - x | z_t = z] into out without allocating for small mixtures.
inline void marginal_velocity_into(const GmmSpec& gmm, std::span<const double> z, double t, std::span<double> out) {
  const std::size_t d = z.size();
  const double a = 1.0 - t;
  const std::size_t k = gmm.components.size();
  double small[16];
  std::vector<double> large;
  double* logw = small;
  if (k > 16) {
    large.resize(k);
    logw = large.data();
  }
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const auto& comp = gmm.components[c];
    const double var = a * a * comp.variance + t * t;
    if (!(var > 0.0))
      throw SingularityError("marginal_velocity: degenerate marginal at t = " + std::to_string(t) +
                             " for zero-variance data");
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dev = z[j] - a * comp.mean[j];
      sq += dev * dev;
    }
    logw[c] = std::log(comp.weight) - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * var) -
              0.5 * sq / var;
    best = std::max(best, logw[c]);
  }
  double norm = 0.0;
  for (std::size_t c = 0; c < k; ++c) norm += (logw[c] = std::exp(logw[c] - best));
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    const auto& comp = gmm.components[c];
    const double var = a * a * comp.variance + t * t;
    const double gain = (t - a * comp.variance) / var;
    const double w = logw[c] / norm;
    for (std::size_t j = 0; j < d; ++j) out[j] += w * (-comp.mean[j] + gain * (z[j] - a * comp.mean[j]));
  }
}

}  // namespace detail

// E[eps - x | z_t = z].
inline std::vector<double> marginal_velocity(const GmmSpec& gmm, std::span<const double> z, double t) {
  if (z.size() != gmm.dim())
    throw ShapeError("marginal_velocity: z has dimension " + std::to_string(z.size()) + ", data has " +
                     std::to_string(gmm.dim()));
  std::vector<double> v(z.size());
  detail::marginal_velocity_into(gmm, z, t, v);
  return v;
}

// Row-wise over z [B, d] with one time for all rows.
inline Tensor marginal_velocity(const GmmSpec& gmm, const Tensor& z, double t) {
  require_rank2(z, "marginal_velocity");
  Tensor v(z.shape());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto row = marginal_velocity(gmm, z.row(i), t);
    std::copy(row.begin(), row.end(), v.row(i).begin());
  }
  return v;
}

inline constexpr double kDefaultOracleStep = 1e-4;
// Integration stops this close to t = 0 when some component is a point mass.
inline constexpr double kPointMassFloor = 1e-6;

// Solves dz/dtau = v(z, tau) from tau = t down to tau = r with classical RK4.
// r may dip slightly below 0 (finite-difference probes); the field stays
// smooth there for data with positive variance.
inline std::vector<double> integrate_trajectory(const GmmSpec& gmm, std::span<const double> z_t, double t, double r,
                                                double h = kDefaultOracleStep) {
  if (!(r <= t)) throw ValueError("integrate_trajectory: need r <= t");
  if (z_t.size() != gmm.dim()) throw ShapeError("integrate_trajectory: z dimension does not match the data");
  if (!(h > 0.0)) throw ValueError("integrate_trajectory: step must be positive");
  std::vector<double> z(z_t.begin(), z_t.end());
  if (r == t) return z;
  if (gmm.is_single_point_mass()) {
    const auto& x0 = gmm.components[0].mean;
    if (t == 0.0) throw SingularityError("integrate_trajectory: t = 0 on point-mass data");
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = x0[j] + (r / t) * (z_t[j] - x0[j]);
    return z;
  }
  const double lower = gmm.has_point_mass() ? std::max(r, kPointMassFloor) : r;
  if (t <= lower) throw SingularityError("integrate_trajectory: interval lies below the point-mass floor");
  const auto n = static_cast<std::size_t>(std::ceil((t - lower) / h - 1e-9));
  const double step = (t - lower) / static_cast<double>(std::max<std::size_t>(n, 1));
  const std::size_t d = z.size();
  std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d);
  auto shifted = [&](const std::vector<double>& k, double s) -> std::span<const double> {
    for (std::size_t j = 0; j < d; ++j) tmp[j] = z[j] - s * k[j];
    return tmp;
  };
  for (std::size_t i = 0; i < std::max<std::size_t>(n, 1); ++i) {
    const double tau = t - static_cast<double>(i) * step;
    detail::marginal_velocity_into(gmm, z, tau, k1);
    detail::marginal_velocity_into(gmm, shifted(k1, 0.5 * step), tau - 0.5 * step, k2);
    detail::marginal_velocity_into(gmm, shifted(k2, 0.5 * step), tau - 0.5 * step, k3);
    detail::marginal_velocity_into(gmm, shifted(k3, step), tau - step, k4);
    for (std::size_t j = 0; j < d; ++j) z[j] -= step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
  }
  if (r < lower) {
    const auto v = marginal_velocity(gmm, z, lower);
    for (std::size_t j = 0; j < d; ++j) z[j] -= (lower - r) * v[j];
  }
  return z;
}

// (z_t - z_r) / (t - r) along the exact flow.
inline std::vector<double> average_velocity(const GmmSpec& gmm, std::span<const double> z_t, double r, double t,
                                            double h = kDefaultOracleStep) {
  if (!(r < t)) throw ValueError("average_velocity: requires r < t; use marginal_velocity at r == t");
  // Straight trajectories: u is v itself for every r.
  if (gmm.is_single_point_mass()) return marginal_velocity(gmm, z_t, t);
  const auto z_r = integrate_trajectory(gmm, z_t, t, r, h);
  std::vector<double> u(z_r.size());
  for (std::size_t j = 0; j < u.size(); ++j) u[j] = (z_t[j] - z_r[j]) / (t - r);
  return u;
}

inline Tensor average_velocity(const GmmSpec& gmm, const Tensor& z, double r, double t,
                               double h = kDefaultOracleStep) {
  require_rank2(z, "average_velocity");
  Tensor u(z.shape());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto row = average_velocity(gmm, z.row(i), r, t, h);
    std::copy(row.begin(), row.end(), u.row(i).begin());
  }
  return u;
}

// Oracle average-velocity field that falls back to v on the diagonal r == t.
struct OracleField {
  const GmmSpec& gmm;
  double h = kDefaultOracleStep;

  std::vector<double> operator()(std::span<const double> z, double r, double t) const {
    return r == t ? marginal_velocity(gmm, z, t) : average_velocity(gmm, z, r, t, h);
  }
};

// Direction along which du/dt is taken: (z_scale * v, r_rate, t_rate).
// The total derivative of the identity is (1, 0, 1).
struct TangentMode {
  double z_scale = 1.0;
  double r_rate = 0.0;
  double t_rate = 1.0;

  bool operator==(const TangentMode&) const = default;
};

inline TangentMode parse_tangent_mode(const std::string& s) {
  TangentMode m;
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      parts.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  parts.push_back(cur);
  if (parts.size() != 3) throw ValueError("tangent mode must have three entries, e.g. v,0,1");
  auto num = [&](const std::string& p) {
    try {
      std::size_t used = 0;
      const double x = std::stod(p, &used);
      if (used != p.size()) throw ValueError("");
      return x;
    } catch (const std::exception&) {
      throw ValueError("tangent mode entry '" + p + "' is not a number");
    }
  };
  if (parts[0] == "v")
    m.z_scale = 1.0;
  else if (parts[0] == "0")
    m.z_scale = 0.0;
  else
    m.z_scale = num(parts[0]);
  m.r_rate = num(parts[1]);
  m.t_rate = num(parts[2]);
  return m;
}

// || u - (v - (t - r) du/dt) || with du/dt by central differences along the
// tangent (v, 0, 1) (or a deliberately different TangentMode).
template <class UField>
double identity_residual(UField&& u_field, const GmmSpec& gmm, std::span<const double> z, double r, double t,
                         double fd_step = 1e-4, TangentMode mode = {}) {
  if (!(r <= t)) throw ValueError("identity_residual: requires r <= t");
  const auto v = marginal_velocity(gmm, z, t);
  const std::vector<double> u = u_field(z, r, t);
  const std::size_t d = v.size();
  std::vector<double> target = v;
  if (r != t) {
    std::vector<double> zp(d), zm(d);
    for (std::size_t j = 0; j < d; ++j) {
      zp[j] = z[j] + fd_step * mode.z_scale * v[j];
      zm[j] = z[j] - fd_step * mode.z_scale * v[j];
    }
    const std::vector<double> up = u_field(zp, r + fd_step * mode.r_rate, t + fd_step * mode.t_rate);
    const std::vector<double> um = u_field(zm, r - fd_step * mode.r_rate, t - fd_step * mode.t_rate);
    for (std::size_t j = 0; j < d; ++j) target[j] -= (t - r) * (up[j] - um[j]) / (2.0 * fd_step);
  }
  double sq = 0.0;
  for (std::size_t j = 0; j < d; ++j) sq += (u[j] - target[j]) * (u[j] - target[j]);
  return std::sqrt(sq);
}

// One row of a field export: (z..., r, t, u..., v..., residual).
struct FieldRow {
  std::vector<double> z;
  double r = 0.0;
  double t = 0.0;
  std::vector<double> u;
  std::vector<double> v;
  double residual = 0.0;
  std::vector<double> u_net;  // optional network column block
};

inline void write_field_header(std::ostream& os, std::size_t d, bool with_net) {
  for (std::size_t j = 0; j < d; ++j) os << 'z' << j << ',';
  os << "r,t";
  for (std::size_t j = 0; j < d; ++j) os << ",u" << j;
  for (std::size_t j = 0; j < d; ++j) os << ",v" << j;
  os << ",residual";
  if (with_net)
    for (std::size_t j = 0; j < d; ++j) os << ",u_net" << j;
  os << '\n';
}

inline void write_field_row(std::ostream& os, const FieldRow& row) {
  auto put = [&os](double x) { os << x; };
  const auto prec = os.precision(17);
  for (double x : row.z) {
    put(x);
    os << ',';
  }
  put(row.r);
  os << ',';
  put(row.t);
  for (double x : row.u) os << ',' << x;
  for (double x : row.v) os << ',' << x;
  os << ',' << row.residual;
  for (double x : row.u_net) os << ',' << x;
  os << '\n';
  os.precision(prec);
}

}  // namespace meanflow
