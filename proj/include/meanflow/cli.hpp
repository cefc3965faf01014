#pragma once

// Command-line surface: train, sample, verify, eval, export-field.
// run() is callable in-process; tools/meanflow.cpp only forwards argv.
//
// Exit codes: 0 ok, 1 I/O or other runtime error, 2 config or usage error,
// 3 divergence, 4 verification failure.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meanflow/checkpoint.hpp"
#include "meanflow/config.hpp"
#include "meanflow/datagen.hpp"
#include "meanflow/eval.hpp"
#include "meanflow/flow.hpp"
#include "meanflow/network.hpp"
#include "meanflow/oracle.hpp"
#include "meanflow/parallel.hpp"
#include "meanflow/training.hpp"

namespace meanflow {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2, kExitDivergence = 3, kExitVerify = 4 };

// Philox streams used by the commands, kept apart from training (stream 1)
// and data generation (stream 2).
inline constexpr std::uint64_t kInitStream = 3;
inline constexpr std::uint64_t kNoiseStream = 4;
inline constexpr std::uint64_t kReferenceStream = 5;

inline Tensor gaussian_noise(std::size_t n, std::size_t d, std::uint64_t seed, std::uint64_t stream = kNoiseStream) {
  Philox rng(seed, stream);
  Tensor eps(Shape{n, d});
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  return eps;
}

// Model samples from noise with one class row per sample. steps == 1 is the
// one-step sampler; otherwise a uniform descending grid.
inline Tensor generate(const NetworkConfig& net, const ParamTable& table, const Tensor& eps, std::size_t steps,
                       const std::vector<std::size_t>& classes) {
  check_class_rows(net, classes);
  auto u = [&](const Tensor& z, double r, double t) {
    const std::size_t b = z.rows();
    return u_theta(net, table, z, Tensor(Shape{b, 1}, r), Tensor(Shape{b, 1}, t), classes);
  };
  if (steps == 1) return one_step_sample(u, eps);
  const auto grid = uniform_time_grid(steps);
  return multi_step_sample(u, eps, grid);
}

// Integrates u(z, t, t) as an instantaneous velocity with Euler steps.
inline Tensor generate_fm(const NetworkConfig& net, const ParamTable& table, const Tensor& eps, std::size_t steps,
                          const std::vector<std::size_t>& classes) {
  check_class_rows(net, classes);
  auto v = [&](const Tensor& z, double t) {
    const std::size_t b = z.rows();
    const Tensor tt(Shape{b, 1}, t);
    return u_theta(net, table, z, tt, tt, classes);
  };
  return euler_fm_sample(v, eps, steps);
}

// Training set plus a network config resolved against it (input_dim == 0
// takes the data dimension).
struct PreparedRun {
  RunConfig config;
  Dataset data;
};

inline PreparedRun prepare_run(RunConfig rc) {
  PreparedRun run{rc, make_dataset(rc.data, rc.training.seed)};
  NetworkConfig& net = run.config.network;
  if (net.input_dim == 0) net.input_dim = run.data.dim();
  if (net.input_dim != run.data.dim())
    throw ConfigError("input_dim", "config key 'input_dim' = " + std::to_string(net.input_dim) +
                                       " does not match the data dimension " + std::to_string(run.data.dim()));
  if (net.num_classes > 0) {
    if (!run.data.labels)
      throw ConfigError("num_classes", "config key 'num_classes' needs labeled data (set labeled = true)");
    if (run.data.num_classes > net.num_classes)
      throw ConfigError("num_classes", "config key 'num_classes' = " + std::to_string(net.num_classes) +
                                           " but the data has " + std::to_string(run.data.num_classes) + " classes");
  }
  try {
    net.validate();
  } catch (const ValueError& e) {
    throw ConfigError("network", std::string("[network] ") + e.what());
  }
  try {
    run.config.training.validate();
  } catch (const ValueError& e) {
    throw ConfigError("training", std::string("[training] ") + e.what());
  }
  return run;
}

struct TrainOutcome {
  std::vector<MetricsRecord> metrics;
  NetworkParams params;
  std::string config_text;
};

inline void write_metrics_header(std::ostream& os) {
  os << "iteration,weighted_loss,raw_sq_error_mean,fraction_r_eq_t\n";
}

inline void write_metrics_row(std::ostream& os, const MetricsRecord& m) {
  os << m.iteration << ',' << detail::fmt_real(m.weighted_loss) << ',' << detail::fmt_real(m.raw_sq_error_mean) << ','
     << detail::fmt_real(m.fraction_r_eq_t) << '\n';
}

// Full training run. With out_dir set, metrics.csv and checkpoint.mfck are
// written there as training proceeds.
inline TrainOutcome run_training(const RunConfig& rc, const std::optional<std::filesystem::path>& out_dir = {}) {
  PreparedRun run = prepare_run(rc);
  TrainOutcome res;
  res.config_text = to_text(run.config);
  Philox init_rng(run.config.training.seed, kInitStream);
  res.params = init_params(run.config.network, init_rng);

  std::ofstream metrics;
  TrainHooks hooks;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    metrics.open(*out_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics) throw Error("cannot write '" + (*out_dir / "metrics.csv").string() + "'");
    write_metrics_header(metrics);
    metrics.flush();
    hooks.on_metrics = [&metrics](const MetricsRecord& m) {
      write_metrics_row(metrics, m);
      metrics.flush();
    };
    const std::string ck_path = (*out_dir / "checkpoint.mfck").string();
    hooks.on_checkpoint = [&res, ck_path](std::size_t, const NetworkParams& p) {
      save_checkpoint(ck_path, Checkpoint{res.config_text, p});
    };
  }
  res.metrics = train(run.config.network, res.params, run.data, run.config.training, hooks);
  return res;
}

struct LoadedModel {
  RunConfig config;
  Checkpoint checkpoint;

  const ParamTable& table(bool live) const { return live ? checkpoint.params.live : checkpoint.params.ema; }
};

inline LoadedModel load_model(const std::string& path) {
  LoadedModel m;
  m.checkpoint = load_checkpoint(path);
  m.config = parse_run_config(m.checkpoint.config_text);
  check_table(m.config.network, m.checkpoint.params.live);
  check_table(m.config.network, m.checkpoint.params.ema);
  return m;
}

// "z=LO:HI:N,r=N,t=N". z spans every axis (product lattice); t runs over
// linspace(t_min, 1, N) and r over t * j / N for j = 0..N-1.
struct GridSpec {
  double z_lo = -2.0;
  double z_hi = 2.0;
  std::size_t z_n = 10;
  std::size_t r_n = 10;
  std::size_t t_n = 10;
  double t_min = 0.1;
};

namespace detail {

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  if (n > 1) v.back() = hi;
  return v;
}

inline std::size_t grid_count(const std::string& what, std::string_view s) {
  const auto v = parse_double(trim(s));
  if (!v || *v < 1.0 || *v != std::floor(*v)) throw ValueError("grid spec: " + what + " count must be a positive integer");
  return static_cast<std::size_t>(*v);
}

inline void parse_z_range(std::string_view s, double& lo, double& hi, std::size_t& n) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i)
    if (i == s.size() || s[i] == ':') {
      parts.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  if (parts.size() != 3) throw ValueError("grid spec: z range must be LO:HI:N");
  const auto a = parse_double(parts[0]), b = parse_double(parts[1]);
  if (!a || !b || !(*a <= *b)) throw ValueError("grid spec: z range needs numbers LO <= HI");
  lo = *a;
  hi = *b;
  n = grid_count("z", parts[2]);
}

// Every point of an axis-aligned lattice with n points per axis.
inline std::vector<std::vector<double>> z_lattice(double lo, double hi, std::size_t n, std::size_t d) {
  const auto axis = linspace(lo, hi, n);
  std::size_t total = 1;
  for (std::size_t j = 0; j < d; ++j) total *= n;
  std::vector<std::vector<double>> pts(total, std::vector<double>(d));
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rem = i;
    for (std::size_t j = d; j-- > 0;) {
      pts[i][j] = axis[rem % n];
      rem /= n;
    }
  }
  return pts;
}

inline std::vector<double> parse_real_list(std::string_view s, const std::string& what) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (auto cell : split_commas(s)) {
    const auto v = parse_double(cell);
    if (!v) throw ValueError(what + ": '" + std::string(cell) + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

inline GmmSpec parse_data_spec(const std::string& s) {
  try {
    return parse_gmm_spec(s);
  } catch (const ValueError& e) {
    throw ConfigError("data", std::string("--data: ") + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::ofstream open_output(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

}  // namespace detail

inline GridSpec parse_grid_spec(std::string_view s) {
  GridSpec g;
  for (auto cell : detail::split_commas(s)) {
    const auto eq = cell.find('=');
    if (eq == std::string_view::npos) throw ValueError("grid spec: expected key=value, got '" + std::string(cell) + "'");
    const std::string key(detail::trim(cell.substr(0, eq)));
    const std::string_view value = detail::trim(cell.substr(eq + 1));
    if (key == "z")
      detail::parse_z_range(value, g.z_lo, g.z_hi, g.z_n);
    else if (key == "r")
      g.r_n = detail::grid_count("r", value);
    else if (key == "t")
      g.t_n = detail::grid_count("t", value);
    else if (key == "tmin") {
      const auto v = detail::parse_double(value);
      if (!v || !(*v > 0.0 && *v <= 1.0)) throw ValueError("grid spec: tmin must lie in (0, 1]");
      g.t_min = *v;
    } else {
      throw ValueError("grid spec: unknown key '" + key + "'");
    }
  }
  return g;
}

struct TimePoint {
  double r;
  double t;
};

// (r, t) lattice of a grid spec, all with r < t.
inline std::vector<TimePoint> grid_times(const GridSpec& g) {
  std::vector<TimePoint> out;
  for (double t : detail::linspace(g.t_min, 1.0, g.t_n))
    for (std::size_t j = 0; j < g.r_n; ++j) out.push_back({t * static_cast<double>(j) / static_cast<double>(g.r_n), t});
  return out;
}

struct VerifyOptions {
  GridSpec grid;
  TangentMode tangent;
  double fd_step = 1e-4;
  double oracle_step = kDefaultOracleStep;
  double tol_residual = 1e-4;
  double tol_additivity = 1e-6;
  double tol_limit = 1e-4;
  double limit_gap = 1e-6;
};

struct VerifyReport {
  std::vector<FieldRow> rows;
  std::vector<double> additivity;  // per row
  std::vector<double> limit;       // per row
  double max_residual = 0.0;
  double max_additivity = 0.0;
  double max_limit = 0.0;
  std::optional<double> net_rmse;          // u_theta vs oracle u
  std::optional<double> net_mean_residual;  // identity residual of u_theta via its JVP
  bool passed = true;
};

// || (t - r) u(z, r, t) - [(s - r) u(z_s, r, s) + (t - s) u(z, s, t)] ||, s the midpoint.
inline double additivity_error(const GmmSpec& gmm, std::span<const double> z, double r, double t, double h) {
  const double s = 0.5 * (r + t);
  const auto z_r = integrate_trajectory(gmm, z, t, r, h);
  const auto z_s = integrate_trajectory(gmm, z, t, s, h);
  const auto z_r2 = integrate_trajectory(gmm, z_s, s, r, h);
  double sq = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double one = z[j] - z_r[j];
    const double two = (z_s[j] - z_r2[j]) + (z[j] - z_s[j]);
    sq += (one - two) * (one - two);
  }
  return std::sqrt(sq);
}

// || u(z, t - gap, t) - v(z, t) ||.
inline double limit_error(const GmmSpec& gmm, std::span<const double> z, double t, double gap, double h) {
  const auto u = average_velocity(gmm, z, t - gap, t, h);
  const auto v = marginal_velocity(gmm, z, t);
  double sq = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) sq += (u[j] - v[j]) * (u[j] - v[j]);
  return std::sqrt(sq);
}

inline VerifyReport verify_oracle(const GmmSpec& gmm, const VerifyOptions& opt, const LoadedModel* model = nullptr,
                                  bool live = false) {
  gmm.validate();
  const std::size_t d = gmm.dim();
  const auto zs = detail::z_lattice(opt.grid.z_lo, opt.grid.z_hi, opt.grid.z_n, d);
  const auto times = grid_times(opt.grid);
  const OracleField field{gmm, opt.oracle_step};
  VerifyReport rep;
  const std::size_t n = zs.size() * times.size();
  rep.rows.resize(n);
  rep.additivity.resize(n);
  rep.limit.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const TimePoint tp = times[i / zs.size()];
    const auto& z = zs[i % zs.size()];
    FieldRow& row = rep.rows[i];
    row.z = z;
    row.r = tp.r;
    row.t = tp.t;
    row.u = field(z, tp.r, tp.t);
    row.v = marginal_velocity(gmm, z, tp.t);
    row.residual = identity_residual(field, gmm, z, tp.r, tp.t, opt.fd_step, opt.tangent);
    rep.additivity[i] = additivity_error(gmm, z, tp.r, tp.t, opt.oracle_step);
    rep.limit[i] = limit_error(gmm, z, tp.t, opt.limit_gap, opt.oracle_step);
  });
  for (std::size_t i = 0; i < n; ++i) {
    rep.max_residual = std::max(rep.max_residual, rep.rows[i].residual);
    rep.max_additivity = std::max(rep.max_additivity, rep.additivity[i]);
    rep.max_limit = std::max(rep.max_limit, rep.limit[i]);
  }
  rep.passed = rep.max_residual <= opt.tol_residual && rep.max_additivity <= opt.tol_additivity &&
               rep.max_limit <= opt.tol_limit;

  if (model) {
    const NetworkConfig& net = model->config.network;
    if (net.input_dim != d) throw ValueError("verify: checkpoint dimension does not match --data");
    const ParamTable& table = model->table(live);
    const std::vector<std::size_t> classes(zs.size(), net.null_class());
    Tensor z(Shape{zs.size(), d});
    for (std::size_t i = 0; i < zs.size(); ++i) std::copy(zs[i].begin(), zs[i].end(), z.row(i).begin());
    double sq = 0.0, res_sum = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      const Tensor r(Shape{zs.size(), 1}, times[k].r), t(Shape{zs.size(), 1}, times[k].t);
      Tensor dz(z.shape());
      for (std::size_t i = 0; i < zs.size(); ++i) {
        const FieldRow& row = rep.rows[k * zs.size() + i];
        for (std::size_t j = 0; j < d; ++j) dz.at(i, j) = opt.tangent.z_scale * row.v[j];
      }
      const JvpOutput out = u_theta_jvp(net, table, z, r, t, classes, dz, Tensor(r.shape(), opt.tangent.r_rate),
                                        Tensor(t.shape(), opt.tangent.t_rate));
      for (std::size_t i = 0; i < zs.size(); ++i) {
        FieldRow& row = rep.rows[k * zs.size() + i];
        row.u_net.assign(out.primal.row(i).begin(), out.primal.row(i).end());
        double rs = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          sq += std::pow(row.u_net[j] - row.u[j], 2);
          const double target = row.v[j] - (times[k].t - times[k].r) * out.tangent.at(i, j);
          rs += std::pow(row.u_net[j] - target, 2);
        }
        res_sum += std::sqrt(rs);
      }
    }
    rep.net_rmse = std::sqrt(sq / static_cast<double>(n * d));
    rep.net_mean_residual = res_sum / static_cast<double>(n);
  }
  return rep;
}

struct FieldExportOptions {
  std::vector<double> times;
  double z_lo = -3.0;
  double z_hi = 3.0;
  std::size_t z_n = 41;
  std::size_t r_n = 11;
  bool residual = false;
  double oracle_step = kDefaultOracleStep;
};

// Oracle (and optionally network) u over a z x r lattice for each listed t;
// r runs over linspace(0, t, r_n) so the last row of each block has r == t.
inline std::vector<FieldRow> export_field(const GmmSpec& gmm, const FieldExportOptions& opt,
                                          const LoadedModel* model = nullptr, bool live = false) {
  gmm.validate();
  const std::size_t d = gmm.dim();
  if (d > 2) throw ValueError("export-field: data dimension " + std::to_string(d) + " > 2 is not supported");
  if (opt.times.empty()) throw ValueError("export-field: the t list is empty");
  if (opt.r_n < 2) throw ValueError("export-field: need at least two r values");
  for (double t : opt.times)
    if (!(t > 0.0 && t <= 1.0)) throw ValueError("export-field: every t must lie in (0, 1]");
  const auto zs = detail::z_lattice(opt.z_lo, opt.z_hi, opt.z_n, d);
  std::vector<TimePoint> times;
  for (double t : opt.times)
    for (double r : detail::linspace(0.0, t, opt.r_n)) times.push_back({r, t});
  const OracleField field{gmm, opt.oracle_step};
  std::vector<FieldRow> rows(times.size() * zs.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const TimePoint tp = times[i / zs.size()];
    FieldRow& row = rows[i];
    row.z = zs[i % zs.size()];
    row.r = tp.r;
    row.t = tp.t;
    row.u = field(row.z, tp.r, tp.t);
    row.v = marginal_velocity(gmm, row.z, tp.t);
    row.residual = opt.residual ? identity_residual(field, gmm, row.z, tp.r, tp.t) : std::nan("");
  });
  if (model) {
    const NetworkConfig& net = model->config.network;
    if (net.input_dim != d) throw ValueError("export-field: checkpoint dimension does not match --data");
    Tensor z(Shape{zs.size(), d});
    for (std::size_t i = 0; i < zs.size(); ++i) std::copy(zs[i].begin(), zs[i].end(), z.row(i).begin());
    for (std::size_t k = 0; k < times.size(); ++k) {
      const Tensor u = u_theta(net, model->table(live), z, times[k].r, times[k].t);
      for (std::size_t i = 0; i < zs.size(); ++i)
        rows[k * zs.size() + i].u_net.assign(u.row(i).begin(), u.row(i).end());
    }
  }
  return rows;
}

struct EvalOptions {
  std::string metric = "mmd";
  std::size_t n = 2000;
  std::size_t steps = 1;
  std::size_t baseline_steps = 100;
  std::uint64_t seed = 0;
  bool live = false;
  std::optional<double> bandwidth;  // MMD kernel width; unset: median heuristic
};

struct EvalLine {
  std::string metric;
  std::string model;
  double value;
};

// Reference points for eval: a mixture spec ("ring:k=8,...") or "csv:PATH".
inline Dataset eval_reference(const std::string& data, std::size_t n, std::uint64_t seed) {
  if (data.rfind("csv:", 0) == 0) {
    Dataset ds = load_csv(data.substr(4));
    if (ds.size() > n) {
      Dataset cut;
      cut.points = Tensor(Shape{n, ds.dim()});
      std::copy_n(ds.points.data().begin(), n * ds.dim(), cut.points.data().begin());
      if (ds.labels) cut.labels = std::vector<int>(ds.labels->begin(), ds.labels->begin() + static_cast<long>(n));
      cut.num_classes = ds.num_classes;
      return cut;
    }
    return ds;
  }
  Philox rng(seed, kReferenceStream);
  return sample_gmm(detail::parse_data_spec(data), n, rng, true);
}

// Conditioning rows for eval: reference labels on a conditional model, else the null row.
inline std::vector<std::size_t> eval_classes(const NetworkConfig& net, const Dataset& ref) {
  std::vector<std::size_t> rows(ref.size(), net.null_class());
  if (net.num_classes == 0 || !ref.labels) return rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int lab = (*ref.labels)[i];
    if (lab >= 0 && static_cast<std::size_t>(lab) < net.num_classes) rows[i] = static_cast<std::size_t>(lab);
  }
  return rows;
}

inline std::vector<EvalLine> metric_lines(const std::string& metric, const std::string& name, const Tensor& samples,
                                          const Dataset& ref, std::optional<double>& bandwidth) {
  std::vector<EvalLine> out;
  if (metric == "mmd") {
    if (!bandwidth) bandwidth = median_pairwise_distance(samples, ref.points);
    out.push_back({"mmd", name, mmd_rbf(samples, ref.points, *bandwidth)});
  } else if (metric == "w1") {
    double total = 0.0;
    for (std::size_t j = 0; j < samples.cols(); ++j) {
      const double w = wasserstein_1d(column(samples, j), column(ref.points, j));
      if (samples.cols() > 1) out.push_back({"w1_axis" + std::to_string(j), name, w});
      total += w;
    }
    out.push_back({"w1", name, total / static_cast<double>(samples.cols())});
  } else if (metric == "moments") {
    const MomentReport rep = ref.spec ? moment_report(samples, *ref.spec) : moment_report(samples, ref.points);
    out.push_back({"mean_error", name, rep.mean_error});
    out.push_back({"cov_error", name, rep.cov_error});
    out.push_back({"mean_rel_error", name, rep.mean_rel_error});
    out.push_back({"cov_rel_error", name, rep.cov_rel_error});
    for (std::size_t j = 0; j < rep.std_rel_error.size(); ++j)
      out.push_back({"std_rel_error" + std::to_string(j), name, rep.std_rel_error[j]});
  } else {
    throw ValueError("unknown metric '" + metric + "' (expected mmd, w1 or moments)");
  }
  return out;
}

// Model samples (and an optional Euler baseline on the same noise) scored
// against the reference. The MMD bandwidth is fixed by the first comparison.
inline std::vector<EvalLine> evaluate(const LoadedModel& model, const Dataset& ref, const EvalOptions& opt,
                                      const LoadedModel* baseline = nullptr) {
  const NetworkConfig& net = model.config.network;
  if (ref.dim() != net.input_dim) throw ValueError("eval: reference dimension does not match the checkpoint");
  const Tensor eps = gaussian_noise(ref.size(), ref.dim(), opt.seed);
  const Tensor samples = generate(net, model.table(opt.live), eps, opt.steps, eval_classes(net, ref));
  std::optional<double> bw = opt.bandwidth;
  auto lines = metric_lines(opt.metric, opt.steps == 1 ? "meanflow_1nfe" : "meanflow_" + std::to_string(opt.steps) + "step",
                            samples, ref, bw);
  if (baseline) {
    const NetworkConfig& bnet = baseline->config.network;
    if (bnet.input_dim != net.input_dim) throw ValueError("eval: baseline dimension does not match the checkpoint");
    const Tensor base = generate_fm(bnet, baseline->table(opt.live), eps, opt.baseline_steps, eval_classes(bnet, ref));
    auto more = metric_lines(opt.metric, "baseline_euler_" + std::to_string(opt.baseline_steps), base, ref, bw);
    lines.insert(lines.end(), more.begin(), more.end());
  }
  return lines;
}

namespace cli {

inline void print_verify(std::ostream& out, const VerifyReport& rep, const VerifyOptions& opt) {
  out << "points " << rep.rows.size() << '\n'
      << "max identity residual " << detail::fmt_real(rep.max_residual) << " (tol " << opt.tol_residual << ")\n"
      << "max additivity error " << detail::fmt_real(rep.max_additivity) << " (tol " << opt.tol_additivity << ")\n"
      << "max limit error " << detail::fmt_real(rep.max_limit) << " (tol " << opt.tol_limit << ")\n";
  if (rep.net_rmse) {
    out << "network rmse vs oracle u " << detail::fmt_real(*rep.net_rmse) << '\n'
        << "network mean identity residual " << detail::fmt_real(*rep.net_mean_residual) << '\n';
  }
  out << (rep.passed ? "oracle checks passed\n" : "oracle checks FAILED\n");
}

inline void write_field_csv(const std::string& path, const std::vector<FieldRow>& rows) {
  auto os = detail::open_output(path);
  const std::size_t d = rows.empty() ? 0 : rows.front().z.size();
  write_field_header(os, d, !rows.empty() && !rows.front().u_net.empty());
  for (const auto& row : rows) write_field_row(os, row);
}

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"meanflow: one-step generative modeling with average velocity fields"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, data_spec, class_str, grid_str = "z=-2:2:10,r=10,t=10",
                                                                       tangent_str = "v,0,1", t_list, baseline_path,
                                                                       z_range = "-3:3:41";
  std::optional<std::uint64_t> seed;
  std::uint64_t sample_seed = 0;
  std::size_t n = 1000, steps = 1, r_count = 11;
  bool live = false, residual = false;
  VerifyOptions vopt;
  EvalOptions eopt;
  std::optional<std::size_t> eval_n;

  auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
  train_cmd->add_option("--config", config_path, "Run config file")->required();
  train_cmd->add_option("--seed", seed, "Override [training] seed");
  train_cmd->add_option("--out", out_path, "Output directory")->required();

  auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a checkpoint");
  sample_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  sample_cmd->add_option("--n", n, "Number of samples");
  sample_cmd->add_option("--steps", steps, "Sampling steps (1 = one network evaluation)")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--class", class_str, "Class id for conditional models");
  sample_cmd->add_option("--seed", sample_seed, "Noise seed");
  sample_cmd->add_option("--out", out_path, "Output CSV")->required();
  sample_cmd->add_flag("--live", live, "Use live weights instead of EMA");

  auto* verify_cmd = app.add_subcommand("verify", "Check the oracle field (and optionally a model) on a grid");
  verify_cmd->add_option("--ckpt", ckpt_path, "Checkpoint to compare against the oracle");
  verify_cmd->add_option("--grid", grid_str, "z=LO:HI:N,r=N,t=N[,tmin=X]");
  verify_cmd->add_option("--data", data_spec, "Mixture spec, e.g. normal:mean=1,var=0.25")->required();
  verify_cmd->add_option("--out", out_path, "Per-point CSV");
  verify_cmd->add_option("--jvp-tangent", tangent_str, "Tangent used for du/dt (debug), default v,0,1");
  verify_cmd->add_option("--tol", vopt.tol_residual, "Identity residual tolerance");
  verify_cmd->add_option("--tol-additivity", vopt.tol_additivity, "Additivity tolerance");
  verify_cmd->add_option("--tol-limit", vopt.tol_limit, "r -> t limit tolerance");
  verify_cmd->add_option("--fd-step", vopt.fd_step, "Finite-difference step");
  verify_cmd->add_option("--oracle-step", vopt.oracle_step, "Oracle RK4 step");
  verify_cmd->add_flag("--live", live, "Use live weights instead of EMA");

  auto* eval_cmd = app.add_subcommand("eval", "Score model samples against reference data");
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval_cmd->add_option("--data", data_spec, "Mixture spec or csv:PATH")->required();
  eval_cmd->add_option("--metric", eopt.metric, "mmd | w1 | moments")->check(CLI::IsMember({"mmd", "w1", "moments"}));
  eval_cmd->add_option("--n", eval_n, "Number of samples (default [eval] n of the checkpoint config)");
  eval_cmd->add_option("--steps", eopt.steps, "Model sampling steps")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--baseline", baseline_path, "Flow-matching checkpoint sampled with Euler steps");
  eval_cmd->add_option("--baseline-steps", eopt.baseline_steps, "Euler steps for the baseline")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eopt.seed, "Noise and reference seed");
  eval_cmd->add_option("--bandwidth", eopt.bandwidth, "Fixed MMD kernel width (default: median heuristic)")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", out_path, "Report CSV");
  eval_cmd->add_flag("--live", eopt.live, "Use live weights instead of EMA");

  auto* field_cmd = app.add_subcommand("export-field", "Write u over a z x r lattice for each t");
  field_cmd->add_option("--ckpt", ckpt_path, "Checkpoint for the u_net columns");
  field_cmd->add_option("--data", data_spec, "Mixture spec (1D or 2D)")->required();
  field_cmd->add_option("--t", t_list, "Comma-separated times, e.g. 0.5,0.7,1.0")->required();
  field_cmd->add_option("--z", z_range, "LO:HI:N per axis");
  field_cmd->add_option("--nr", r_count, "r values per t (linspace(0, t, N))");
  field_cmd->add_option("--out", out_path, "Output CSV")->required();
  field_cmd->add_flag("--residual", residual, "Also compute the oracle identity residual");
  field_cmd->add_flag("--live", live, "Use live weights instead of EMA");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) {
      RunConfig rc = parse_run_config(detail::read_text_file(config_path));
      if (seed) rc.training.seed = *seed;
      try {
        const TrainOutcome res = run_training(rc, std::filesystem::path(out_path));
        const MetricsRecord& last = res.metrics.back();
        out << "trained " << last.iteration << " iterations; weighted_loss " << detail::fmt_real(last.weighted_loss)
            << "; checkpoint " << (std::filesystem::path(out_path) / "checkpoint.mfck").string() << '\n';
      } catch (const DivergenceError& e) {
        err << "error: " << e.what() << "; the last checkpoint (if any) is kept\n";
        return kExitDivergence;
      }
      return kExitOk;
    }

    if (*sample_cmd) {
      const LoadedModel model = load_model(ckpt_path);
      const NetworkConfig& net = model.config.network;
      std::optional<std::size_t> cls;
      if (!class_str.empty()) {
        const auto v = detail::parse_double(class_str);
        if (!v || *v < 0.0 || *v != std::floor(*v)) throw ValueError("--class must be a non-negative integer");
        cls = static_cast<std::size_t>(*v);
      }
      const auto classes = class_rows(net, n, cls);
      const Tensor eps = gaussian_noise(n, net.input_dim, sample_seed);
      const Tensor x = generate(net, model.table(live), eps, steps, classes);
      auto os = detail::open_output(out_path);
      write_csv(os, x);
      out << "wrote " << n << " samples (" << steps << " step" << (steps == 1 ? "" : "s") << ") to " << out_path << '\n';
      return kExitOk;
    }

    if (*verify_cmd) {
      vopt.grid = parse_grid_spec(grid_str);
      vopt.tangent = parse_tangent_mode(tangent_str);
      const GmmSpec gmm = detail::parse_data_spec(data_spec);
      std::optional<LoadedModel> model;
      if (!ckpt_path.empty()) model = load_model(ckpt_path);
      const VerifyReport rep = verify_oracle(gmm, vopt, model ? &*model : nullptr, live);
      if (!out_path.empty()) write_field_csv(out_path, rep.rows);
      print_verify(out, rep, vopt);
      return rep.passed ? kExitOk : kExitVerify;
    }

    if (*eval_cmd) {
      const LoadedModel model = load_model(ckpt_path);
      eopt.n = eval_n.value_or(model.config.eval.n);
      std::optional<LoadedModel> baseline;
      if (!baseline_path.empty()) baseline = load_model(baseline_path);
      const Dataset ref = eval_reference(data_spec, eopt.n, eopt.seed);
      const auto lines = evaluate(model, ref, eopt, baseline ? &*baseline : nullptr);
      if (!out_path.empty()) {
        auto os = detail::open_output(out_path);
        os << "metric,model,value\n";
        for (const auto& l : lines) os << l.metric << ',' << l.model << ',' << detail::fmt_real(l.value) << '\n';
      }
      for (const auto& l : lines) out << l.model << ' ' << l.metric << ' ' << detail::fmt_real(l.value) << '\n';
      return kExitOk;
    }

    if (*field_cmd) {
      FieldExportOptions fopt;
      fopt.times = detail::parse_real_list(t_list, "--t");
      detail::parse_z_range(z_range, fopt.z_lo, fopt.z_hi, fopt.z_n);
      fopt.r_n = r_count;
      fopt.residual = residual;
      const GmmSpec gmm = detail::parse_data_spec(data_spec);
      std::optional<LoadedModel> model;
      if (!ckpt_path.empty()) model = load_model(ckpt_path);
      const auto rows = export_field(gmm, fopt, model ? &*model : nullptr, live);
      write_field_csv(out_path, rows);
      out << "wrote " << rows.size() << " rows for " << fopt.times.size() << " times to " << out_path << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValueError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace cli
}  // namespace meanflow
