#pragma once

// Synthetic datasets and CSV ingestion.

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "meanflow/oracle.hpp"
#include "meanflow/rng.hpp"
#include "meanflow/tensor.hpp"

namespace meanflow {

class FormatError : public Error {
 public:
  using Error::Error;
};

struct Dataset {
  Tensor points;                     // [n, d]
  std::optional<std::vector<int>> labels;
  std::optional<GmmSpec> spec;       // set when the density is known in closed form
  std::size_t num_classes = 0;

  std::size_t size() const { return points.rank() == 2 ? points.rows() : 0; }
  std::size_t dim() const { return points.rank() == 2 ? points.cols() : 0; }
};

// n draws from a mixture; labels are the component indices.
inline Dataset sample_gmm(const GmmSpec& gmm, std::size_t n, Philox& rng, bool with_labels = true) {
  gmm.validate();
  const std::size_t d = gmm.dim();
  Dataset ds;
  ds.points = Tensor(Shape{n, d});
  std::vector<int> labels(n);
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto& c : gmm.components) cdf.push_back(acc += c.weight);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    std::size_t k = 0;
    while (k + 1 < cdf.size() && u >= cdf[k]) ++k;
    const auto& comp = gmm.components[k];
    const double sd = std::sqrt(comp.variance);
    for (std::size_t j = 0; j < d; ++j) ds.points.at(i, j) = comp.mean[j] + sd * rng.normal();
    labels[i] = static_cast<int>(k);
  }
  if (with_labels) {
    ds.labels = std::move(labels);
    ds.num_classes = gmm.components.size();
  }
  ds.spec = gmm;
  return ds;
}

inline Dataset make_point_mass(std::vector<double> x0, std::size_t n) {
  Philox unused(0);
  return sample_gmm(GmmSpec::point_mass(std::move(x0)), n, unused, false);
}

inline Dataset make_gaussian(std::vector<double> mean, double variance, std::size_t n, Philox& rng) {
  return sample_gmm(GmmSpec::gaussian(std::move(mean), variance), n, rng, false);
}

// k equal-weight isotropic Gaussians on a circle; label = component index.
inline Dataset make_gmm_ring(std::size_t k, double radius, double variance, std::size_t n, Philox& rng) {
  if (k == 0) throw ValueError("make_gmm_ring: k must be >= 1");
  return sample_gmm(GmmSpec::ring(k, radius, variance), n, rng, true);
}

// Two interleaving half circles; label = moon index.
inline Dataset make_moons(std::size_t n, double noise, Philox& rng) {
  Dataset ds;
  ds.points = Tensor(Shape{n, 2});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int moon = static_cast<int>(rng.below(2));
    const double a = std::numbers::pi * rng.uniform();
    double x = std::cos(a), y = std::sin(a);
    if (moon == 1) {
      x = 1.0 - x;
      y = 0.5 - y;
    }
    ds.points.at(i, 0) = x + noise * rng.normal();
    ds.points.at(i, 1) = y + noise * rng.normal();
    labels[i] = moon;
  }
  ds.labels = std::move(labels);
  ds.num_classes = 2;
  return ds;
}

// 4x4 board on [-2, 2]^2; points occupy cells whose integer corners sum to an even number.
inline bool checkerboard_cell_valid(double x, double y) {
  const auto cx = static_cast<long>(std::floor(x));
  const auto cy = static_cast<long>(std::floor(y));
  return x >= -2.0 && x < 2.0 && y >= -2.0 && y < 2.0 && (cx + cy) % 2 == 0;
}

inline Dataset make_checkerboard(std::size_t n, double noise, Philox& rng) {
  Dataset ds;
  ds.points = Tensor(Shape{n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    double x, y;
    do {
      x = 4.0 * rng.uniform() - 2.0;
      y = 4.0 * rng.uniform() - 2.0;
    } while (!checkerboard_cell_valid(x, y));
    ds.points.at(i, 0) = x + noise * rng.normal();
    ds.points.at(i, 1) = y + noise * rng.normal();
  }
  return ds;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i)
    if (i == line.size() || line[i] == ',') {
      cells.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline bool looks_integer(std::string_view s) {
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) s.remove_prefix(1);
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

// Shortest round-trip text that always reads back as a real (never as a label).
inline std::string format_real(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  std::string s(buf, ptr);
  if (s.find_first_of(".eEni") == std::string::npos) s += ".0";
  return s;
}

}  // namespace detail

// Rows of d reals, optionally followed by an integer label. A trailing column
// holding integer literals on every row (and at least one real column before
// it) is read as the label. A first row that is not numeric is a header.
inline Dataset parse_csv(std::string_view text, const std::string& source = "<csv>") {
  std::vector<std::vector<std::string_view>> rows;
  std::vector<std::size_t> line_no;
  std::size_t line_index = 0, pos = 0;
  bool header_checked = false;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = detail::trim(text.substr(pos, end - pos));
    ++line_index;
    pos = end + 1;
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    auto cells = detail::split_commas(line);
    if (!header_checked) {
      header_checked = true;
      if (!detail::parse_double(cells.front())) continue;
    }
    rows.push_back(std::move(cells));
    line_no.push_back(line_index);
    if (end == text.size()) break;
  }
  if (rows.empty()) throw FormatError(source + ": no data rows");
  const std::size_t width = rows.front().size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != width)
      throw FormatError(source + ":" + std::to_string(line_no[i]) + ": expected " + std::to_string(width) +
                        " columns, found " + std::to_string(rows[i].size()));
    for (auto cell : rows[i])
      if (!detail::parse_double(cell))
        throw FormatError(source + ":" + std::to_string(line_no[i]) + ": non-numeric cell '" + std::string(cell) +
                          "'");
  }
  bool labeled = width >= 2;
  for (const auto& r : rows) labeled = labeled && detail::looks_integer(r.back());
  const std::size_t d = labeled ? width - 1 : width;
  Dataset ds;
  ds.points = Tensor(Shape{rows.size(), d});
  std::vector<int> labels;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.points.at(i, j) = *detail::parse_double(rows[i][j]);
    if (labeled) {
      const int lab = static_cast<int>(*detail::parse_double(rows[i].back()));
      if (lab < 0) throw FormatError(source + ":" + std::to_string(line_no[i]) + ": negative label");
      labels.push_back(lab);
      ds.num_classes = std::max<std::size_t>(ds.num_classes, static_cast<std::size_t>(lab) + 1);
    }
  }
  if (labeled) ds.labels = std::move(labels);
  return ds;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path);
}

inline void write_csv(std::ostream& os, const Tensor& points, const std::vector<int>* labels = nullptr) {
  require_rank2(points, "write_csv");
  const std::size_t d = points.cols();
  for (std::size_t j = 0; j < d; ++j) os << (j ? "," : "") << 'x' << j;
  if (labels) os << ",label";
  os << '\n';
  for (std::size_t i = 0; i < points.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) os << (j ? "," : "") << detail::format_real(points.at(i, j));
    if (labels) os << ',' << (*labels)[i];
    os << '\n';
  }
}

inline void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  write_csv(out, ds.points, ds.labels ? &*ds.labels : nullptr);
}

}  // namespace meanflow
