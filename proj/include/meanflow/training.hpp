#pragma once

// MeanFlow objective: regress u_theta(z_t, r, t) onto the gradient-stopped
// target v - (t - r) du/dt, where du/dt is the JVP along (v, 0, 1).

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "meanflow/datagen.hpp"
#include "meanflow/flow.hpp"
#include "meanflow/forward.hpp"
#include "meanflow/network.hpp"
#include "meanflow/reverse.hpp"
#include "meanflow/rng.hpp"
#include "meanflow/tensor.hpp"

namespace meanflow {

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t iteration, const std::string& what)
      : Error("diverged at iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

enum class TimeSampler { Uniform, LogNormal };

struct TrainConfig {
  double ratio_r_neq_t = 0.25;
  TimeSampler sampler = TimeSampler::LogNormal;
  double sampler_mu = -0.4;
  double sampler_sigma = 1.0;
  double p = 1.0;   // adaptive-weight power
  double c = 1e-3;  // adaptive-weight offset
  bool cfg = false;
  double omega = 1.0;
  double kappa = 0.0;
  double class_drop_prob = 0.1;
  double cfg_t_lo = 0.0;
  double cfg_t_hi = 1.0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::size_t batch_size = 256;
  double ema_decay = 0.9999;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  double effective_omega() const { return omega / (1.0 - kappa); }

  void validate() const {
    auto frac = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!frac(ratio_r_neq_t)) throw ValueError("train: ratio must lie in [0, 1]");
    if (!(sampler_sigma > 0.0)) throw ValueError("train: sampler sigma must be positive");
    if (!(p >= 0.0)) throw ValueError("train: p must be >= 0");
    if (!(c > 0.0)) throw ValueError("train: c must be > 0");
    if (!(kappa >= 0.0 && kappa < 1.0)) throw ValueError("train: kappa must lie in [0, 1)");
    if (!std::isfinite(effective_omega())) throw ValueError("train: effective guidance scale is not finite");
    if (!frac(class_drop_prob)) throw ValueError("train: class_drop_prob must lie in [0, 1]");
    if (!(frac(cfg_t_lo) && frac(cfg_t_hi) && cfg_t_lo <= cfg_t_hi))
      throw ValueError("train: cfg interval must satisfy 0 <= lo <= hi <= 1");
    if (!(lr >= 0.0)) throw ValueError("train: lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ValueError("train: betas must lie in [0, 1)");
    if (batch_size == 0) throw ValueError("train: batch_size must be positive");
    if (!frac(ema_decay)) throw ValueError("train: ema_decay must lie in [0, 1]");
  }
};

struct TimePair {
  double r = 0.0;
  double t = 0.0;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double sample_time(Philox& rng, const TrainConfig& cfg) {
  return cfg.sampler == TimeSampler::Uniform ? rng.uniform() : logistic(rng.normal(cfg.sampler_mu, cfg.sampler_sigma));
}

// Two independent draws, larger one is t; then r := t with probability 1 - ratio.
inline TimePair sample_time_pair(Philox& rng, const TrainConfig& cfg) {
  const double a = sample_time(rng, cfg);
  const double b = sample_time(rng, cfg);
  TimePair tp{std::min(a, b), std::max(a, b)};
  if (!rng.bernoulli(cfg.ratio_r_neq_t)) tp.r = tp.t;
  return tp;
}

// v - (t - r) du/dt, scalar times.
inline Tensor meanflow_target(const Tensor& v, const Tensor& du_dt, double r, double t) {
  require_same_shape(v, du_dt, "meanflow_target");
  Tensor out(v.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] - (t - r) * du_dt[i];
  return out;
}

// Row-wise times: v, du_dt [B, d]; r, t [B, 1].
inline Tensor meanflow_target(const Tensor& v, const Tensor& du_dt, const Tensor& r, const Tensor& t) {
  require_same_shape(v, du_dt, "meanflow_target");
  require_rank2(v, "meanflow_target");
  if (r.size() != v.rows() || t.size() != v.rows()) throw ShapeError("meanflow_target: one (r, t) per row required");
  const std::size_t d = v.cols();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = v[i * d + j] - (t[i] - r[i]) * du_dt[i * d + j];
  return out;
}

// w = 1 / (||delta||^2 + c)^p per row, as a [B, 1] column.
inline Tensor adaptive_weight(const Tensor& delta, double p, double c) {
  if (!(c > 0.0)) throw ValueError("adaptive_weight: c must be > 0");
  const Tensor sq = kernels::row_sum(kernels::mul(delta, delta));
  Tensor w(sq.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = p == 0.0 ? 1.0 : 1.0 / std::pow(sq[i] + c, p);
  return w;
}

// omega v_cond + kappa u_cond + (1 - omega - kappa) u_uncond
inline Tensor cfg_velocity_tilde(const Tensor& v_cond, const Tensor& u_uncond, const Tensor& u_cond, double omega,
                                 double kappa) {
  require_same_shape(v_cond, u_uncond, "cfg_velocity_tilde");
  require_same_shape(v_cond, u_cond, "cfg_velocity_tilde");
  const double rest = 1.0 - omega - kappa;
  Tensor out(v_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = omega * v_cond[i] + kappa * u_cond[i] + rest * u_uncond[i];
  return out;
}

struct Batch {
  Tensor x;                 // [B, d]
  std::vector<int> labels;  // empty when unlabeled
};

// Per-step randomness, drawn in a fixed order so alternative objectives can
// replay exactly the same noise.
struct StepNoise {
  Tensor eps;                // [B, d]
  Tensor r, t;               // [B, 1]
  std::vector<bool> dropped; // class condition dropped
};

inline StepNoise draw_step_noise(Philox& rng, std::size_t batch, std::size_t dim, const TrainConfig& cfg) {
  StepNoise n{Tensor(Shape{batch, dim}), Tensor(Shape{batch, 1}), Tensor(Shape{batch, 1}), std::vector<bool>(batch)};
  for (std::size_t i = 0; i < batch; ++i) {
    const TimePair tp = sample_time_pair(rng, cfg);
    n.r[i] = tp.r;
    n.t[i] = tp.t;
    for (std::size_t j = 0; j < dim; ++j) n.eps.at(i, j) = rng.normal();
    n.dropped[i] = rng.bernoulli(cfg.class_drop_prob);
  }
  return n;
}

struct LossBreakdown {
  Tensor raw_sq_error;  // [B, 1] ||delta||^2
  Tensor weight;        // [B, 1] gradient-stopped w
  double weighted_loss = 0.0;
  double fraction_r_eq_t = 0.0;

  double raw_sq_error_mean() const { return kernels::sum_all(raw_sq_error) / static_cast<double>(raw_sq_error.size()); }
};

struct StepResult {
  LossBreakdown loss;
  ParamGrads grads;
};

// Class-table rows after label dropout.
inline std::vector<std::size_t> training_class_rows(const NetworkConfig& net, const Batch& batch,
                                                    const std::vector<bool>& dropped) {
  const std::size_t b = batch.x.rows();
  std::vector<std::size_t> rows(b, net.null_class());
  if (net.num_classes == 0 || batch.labels.empty()) return rows;
  if (batch.labels.size() != b) throw ShapeError("training_step: label count does not match batch");
  for (std::size_t i = 0; i < b; ++i) {
    const int lab = batch.labels[i];
    if (lab < 0 || static_cast<std::size_t>(lab) >= net.num_classes)
      throw ValueError("training_step: label " + std::to_string(lab) + " out of range");
    if (!dropped[i]) rows[i] = static_cast<std::size_t>(lab);
  }
  return rows;
}

// Velocity used as tangent and target: v_t, or the guided mixture when CFG is
// on and t falls inside the trigger interval. Bootstrap terms use the live
// weights at (z, t, t) and carry no gradient.
inline Tensor guided_velocity(const NetworkConfig& net, const ParamTable& live, const Tensor& z, const Tensor& v,
                              const Tensor& t, std::span<const std::size_t> classes, const TrainConfig& cfg) {
  if (!cfg.cfg) return v;
  if (net.num_classes == 0) throw ValueError("training_step: cfg requires a class-conditional network");
  const std::size_t b = z.rows(), d = z.cols();
  const Tensor u_cond = u_theta(net, live, z, t, t, classes);
  const std::vector<std::size_t> null_rows(b, net.null_class());
  const Tensor u_uncond = u_theta(net, live, z, t, t, null_rows);
  const Tensor guided = cfg_velocity_tilde(v, u_uncond, u_cond, cfg.omega, cfg.kappa);
  Tensor out = v;
  for (std::size_t i = 0; i < b; ++i)
    if (t[i] >= cfg.cfg_t_lo && t[i] <= cfg.cfg_t_hi)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = guided[i * d + j];
  return out;
}

// mean(sg(w) * ||u_theta(z, r, t) - sg(target)||^2) and its parameter gradient.
inline StepResult regress_onto(const NetworkConfig& net, const ParamTable& live, const Tensor& z, const Tensor& r,
                               const Tensor& t, std::span<const std::size_t> classes, const Tensor& target,
                               const TrainConfig& cfg) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(live.size());
  for (const auto& p : live) leaves.push_back(tape.leaf(p.value));
  const Var u = forward(net, VarBinder{leaves}, tape.constant(z), tape.constant(r), tape.constant(t), classes);
  const Var delta = rev::sub(u, rev::detach(tape.constant(target)));
  const Var sq = rev::row_sum(rev::mul(delta, delta));
  const Tensor w = adaptive_weight(delta.value(), cfg.p, cfg.c);
  const Var loss = rev::mean(rev::mul(sq, tape.constant(w)));
  tape.backward(loss);
  StepResult res;
  res.loss.raw_sq_error = sq.value();
  res.loss.weight = w;
  res.loss.weighted_loss = loss.value().item();
  res.grads.reserve(leaves.size());
  for (const Var& l : leaves) res.grads.push_back(tape.grad(l));
  return res;
}

// One MeanFlow step on a batch: draws noise and (r, t), builds the target with
// a forward-mode JVP, then differentiates the regression loss.
inline StepResult training_step(const NetworkConfig& net, const NetworkParams& params, const Batch& batch, Philox& rng,
                                const TrainConfig& cfg, std::size_t iteration = 0) {
  require_rank2(batch.x, "training_step");
  if (batch.x.rows() == 0) throw ValueError("training_step: empty batch");
  const std::size_t b = batch.x.rows(), d = batch.x.cols();
  const StepNoise noise = draw_step_noise(rng, b, d, cfg);
  const Tensor z = interpolate(batch.x, noise.eps, noise.t);
  const Tensor v = conditional_velocity(batch.x, noise.eps);
  const std::vector<std::size_t> classes = training_class_rows(net, batch, noise.dropped);

  const Tensor v_tilde = guided_velocity(net, params.live, z, v, noise.t, classes, cfg);
  const JvpOutput ju = u_theta_jvp(net, params.live, z, noise.r, noise.t, classes, v_tilde,
                                   Tensor(Shape{b, 1}, 0.0), Tensor(Shape{b, 1}, 1.0));
  const Tensor u_tgt = meanflow_target(v_tilde, ju.tangent, noise.r, noise.t);

  StepResult res = regress_onto(net, params.live, z, noise.r, noise.t, classes, u_tgt, cfg);
  std::size_t same = 0;
  for (std::size_t i = 0; i < b; ++i) same += noise.r[i] == noise.t[i];
  res.loss.fraction_r_eq_t = static_cast<double>(same) / static_cast<double>(b);
  if (!std::isfinite(res.loss.weighted_loss)) throw DivergenceError(iteration, "loss is not finite");
  for (const Tensor& g : res.grads)
    if (!all_finite(g)) throw DivergenceError(iteration, "gradient is not finite");
  return res;
}

// Adam with constant learning rate and bias correction, no weight decay.
struct AdamState {
  std::vector<Tensor> m, v;
  std::size_t step = 0;
};

inline void adam_step(ParamTable& params, const ParamGrads& grads, AdamState& st, const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count mismatch");
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.value.shape());
      st.v.emplace_back(p.value.shape());
    }
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].value;
    const Tensor& g = grads[i];
    require_same_shape(p, g, "adam_step");
    Tensor& m = st.m[i];
    Tensor& v = st.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      p[j] -= cfg.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
    }
  }
}

struct MetricsRecord {
  std::size_t iteration = 0;
  double weighted_loss = 0.0;
  double raw_sq_error_mean = 0.0;
  double fraction_r_eq_t = 0.0;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(std::size_t iteration, const NetworkParams&)> on_checkpoint;
};

inline constexpr std::uint64_t kTrainStream = 1;

inline Batch draw_batch(const Dataset& data, std::size_t batch_size, Philox& rng) {
  const std::size_t n = data.size(), d = data.dim();
  Batch b{Tensor(Shape{batch_size, d}), {}};
  if (data.labels) b.labels.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto k = static_cast<std::size_t>(rng.below(n));
    for (std::size_t j = 0; j < d; ++j) b.x.at(i, j) = data.points.at(k, j);
    if (data.labels) b.labels[i] = (*data.labels)[k];
  }
  return b;
}

// Adam + EMA over `iterations` steps. On divergence the parameters keep their
// last finite values and DivergenceError propagates.
inline std::vector<MetricsRecord> train(const NetworkConfig& net, NetworkParams& params, const Dataset& data,
                                        const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  net.validate();
  check_table(net, params.live);
  if (data.size() == 0) throw ValueError("train: dataset is empty");
  if (data.dim() != net.input_dim)
    throw ShapeError("train: data dimension " + std::to_string(data.dim()) + " does not match network input " +
                     std::to_string(net.input_dim));
  Philox rng(cfg.seed, kTrainStream);
  AdamState adam;
  std::vector<MetricsRecord> log;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const Batch batch = draw_batch(data, cfg.batch_size, rng);
    const StepResult step = training_step(net, params, batch, rng, cfg, it);
    adam_step(params.live, step.grads, adam, cfg);
    ema_update(params, cfg.ema_decay);
    if ((cfg.log_every && it % cfg.log_every == 0) || it == cfg.iterations) {
      MetricsRecord rec{it, step.loss.weighted_loss, step.loss.raw_sq_error_mean(), step.loss.fraction_r_eq_t};
      log.push_back(rec);
      if (hooks.on_metrics) hooks.on_metrics(rec);
    }
    if (hooks.on_checkpoint && ((cfg.checkpoint_every && it % cfg.checkpoint_every == 0) || it == cfg.iterations))
      hooks.on_checkpoint(it, params);
  }
  return log;
}

}  // namespace meanflow
