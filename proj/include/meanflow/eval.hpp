#pragma once

// Sample-quality metrics: kernel MMD, 1D Wasserstein-1, and moment errors.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "meanflow/oracle.hpp"
#include "meanflow/tensor.hpp"

namespace meanflow {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

// Median pairwise Euclidean distance over the rows of a and b together.
inline double median_pairwise_distance(const Tensor& a, const Tensor& b) {
  std::vector<std::span<const double>> rows;
  for (std::size_t i = 0; i < a.rows(); ++i) rows.push_back(a.row(i));
  for (std::size_t i = 0; i < b.rows(); ++i) rows.push_back(b.row(i));
  std::vector<double> d;
  d.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) d.push_back(std::sqrt(squared_distance(rows[i], rows[j])));
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
  return med;
}

// Unbiased squared MMD with k(x, y) = exp(-||x - y||^2 / (2 bw^2)).
// bandwidth == nullopt selects the median heuristic on the pooled sample.
// Equal sample sizes use the paired U-statistic, which is exactly 0 for a == b.
inline double mmd_rbf(const Tensor& a, const Tensor& b, std::optional<double> bandwidth = std::nullopt) {
  require_rank2(a, "mmd_rbf");
  require_rank2(b, "mmd_rbf");
  if (a.cols() != b.cols()) throw ShapeError("mmd_rbf: sample dimensions differ");
  const std::size_t n = a.rows(), m = b.rows();
  if (n < 2 || m < 2) throw ValueError("mmd_rbf: need at least two samples per set");
  double bw;
  if (bandwidth) {
    bw = *bandwidth;
    if (!(bw > 0.0)) throw ValueError("mmd_rbf: bandwidth must be positive");
  } else {
    bw = median_pairwise_distance(a, b);
    if (!(bw > 0.0)) throw ValueError("mmd_rbf: median bandwidth is zero (all pooled points identical)");
  }
  const double gamma = 1.0 / (2.0 * bw * bw);
  auto k = [gamma](std::span<const double> x, std::span<const double> y) {
    return std::exp(-gamma * squared_distance(x, y));
  };
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) xx += 2.0 * k(a.row(i), a.row(j));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) yy += 2.0 * k(b.row(i), b.row(j));
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  if (n == m) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) xy += k(a.row(i), b.row(j));
    // sum_{i != j} [k(a_i,a_j) + k(b_i,b_j) - k(a_i,b_j) - k(a_j,b_i)] / (n (n - 1))
    return (xx + yy - 2.0 * xy) / (nn * (nn - 1.0));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) xy += k(a.row(i), b.row(j));
  return xx / (nn * (nn - 1.0)) + yy / (mm * (mm - 1.0)) - 2.0 * xy / (nn * mm);
}

// Empirical W1 between equal-size 1D samples: mean |a_(i) - b_(i)|.
inline double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size()) throw ValueError("wasserstein_1d: sample counts differ");
  if (a.empty()) throw ValueError("wasserstein_1d: empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline std::vector<double> column(const Tensor& x, std::size_t j) {
  std::vector<double> c(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) c[i] = x.at(i, j);
  return c;
}

struct Moments {
  std::vector<double> mean;
  std::vector<double> cov;  // row-major d x d
};

// Sample mean and (population) covariance of the rows.
inline Moments sample_moments(const Tensor& x) {
  require_rank2(x, "sample_moments");
  const std::size_t n = x.rows(), d = x.cols();
  Moments mo{std::vector<double>(d, 0.0), std::vector<double>(d * d, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mo.mean[j] += x.at(i, j);
  for (double& m : mo.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t l = 0; l < d; ++l)
        mo.cov[j * d + l] += (x.at(i, j) - mo.mean[j]) * (x.at(i, l) - mo.mean[l]);
  for (double& c : mo.cov) c /= static_cast<double>(n);
  return mo;
}

inline Moments gmm_moments(const GmmSpec& g) { return {g.mean(), g.covariance()}; }

struct MomentReport {
  double mean_error = 0.0;        // ||mean - mean_ref||
  double cov_error = 0.0;         // ||cov - cov_ref||_F
  double mean_rel_error = 0.0;    // mean_error / ||mean_ref||
  double cov_rel_error = 0.0;     // cov_error / ||cov_ref||_F
  std::vector<double> std_rel_error;  // per-axis |sd - sd_ref| / sd_ref
  Moments samples;
  Moments reference;
};

inline MomentReport moment_report(const Tensor& samples, const Moments& ref) {
  MomentReport rep;
  rep.samples = sample_moments(samples);
  rep.reference = ref;
  const std::size_t d = ref.mean.size();
  if (rep.samples.mean.size() != d) throw ShapeError("moment_report: dimension mismatch");
  double me = 0.0, mr = 0.0, ce = 0.0, cr = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    me += std::pow(rep.samples.mean[j] - ref.mean[j], 2);
    mr += ref.mean[j] * ref.mean[j];
  }
  for (std::size_t j = 0; j < d * d; ++j) {
    ce += std::pow(rep.samples.cov[j] - ref.cov[j], 2);
    cr += ref.cov[j] * ref.cov[j];
  }
  rep.mean_error = std::sqrt(me);
  rep.cov_error = std::sqrt(ce);
  rep.mean_rel_error = mr > 0.0 ? rep.mean_error / std::sqrt(mr) : rep.mean_error;
  rep.cov_rel_error = cr > 0.0 ? rep.cov_error / std::sqrt(cr) : rep.cov_error;
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(rep.samples.cov[j * d + j]);
    const double sd_ref = std::sqrt(ref.cov[j * d + j]);
    rep.std_rel_error.push_back(sd_ref > 0.0 ? std::abs(sd - sd_ref) / sd_ref : std::abs(sd));
  }
  return rep;
}

inline MomentReport moment_report(const Tensor& samples, const GmmSpec& g) { return moment_report(samples, gmm_moments(g)); }
inline MomentReport moment_report(const Tensor& samples, const Tensor& reference) {
  return moment_report(samples, sample_moments(reference));
}

}  // namespace meanflow
