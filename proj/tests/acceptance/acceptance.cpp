// Acceptance suite: one pass/fail line per criterion.
//
//   meanflow_acceptance            run everything
//   meanflow_acceptance --only 4   run one criterion (repeatable)

#include <unistd.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "meanflow/meanflow.hpp"

using namespace meanflow;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? " ok" : " FAILED");
  }
};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

bool same_bits(const Tensor& a, const Tensor& b) { return bitwise_equal(a, b); }

bool same_bits(const ParamGrads& a, const ParamGrads& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bitwise_equal(a[i], b[i])) return false;
  return true;
}

NetworkConfig small_net(std::size_t dim, std::size_t classes = 0) {
  NetworkConfig n;
  n.input_dim = dim;
  n.hidden_dim = 32;
  n.depth = 3;
  n.embed_dim = 16;
  n.num_classes = classes;
  return n;
}

Batch random_batch(std::size_t b, std::size_t d, Philox& rng, std::size_t classes = 0) {
  Batch batch{Tensor(Shape{b, d}), {}};
  for (double& x : batch.x.data()) x = rng.normal(1.0, 0.7);
  if (classes)
    for (std::size_t i = 0; i < b; ++i) batch.labels.push_back(static_cast<int>(rng.below(classes)));
  return batch;
}

// Plain flow-matching step on the same noise: regress u(z, t, t) onto eps - x.
StepResult flow_matching_step(const NetworkConfig& net, const ParamTable& live, const Batch& batch, Philox& rng,
                              const TrainConfig& cfg) {
  const std::size_t b = batch.x.rows(), d = batch.x.cols();
  const StepNoise noise = draw_step_noise(rng, b, d, cfg);
  Tensor z(batch.x.shape()), v(batch.x.shape());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double t = noise.t[i], x = batch.x.at(i, j), e = noise.eps.at(i, j);
      z.at(i, j) = (1.0 - t) * x + t * e;
      v.at(i, j) = e - x;
    }
  const auto classes = training_class_rows(net, batch, noise.dropped);
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& p : live) leaves.push_back(tape.leaf(p.value));
  const Var u = forward(net, VarBinder{leaves}, tape.constant(z), tape.constant(noise.t), tape.constant(noise.t), classes);
  const Var delta = rev::sub(u, tape.constant(v));
  const Var sq = rev::row_sum(rev::mul(delta, delta));
  Tensor w(sq.value().shape(), 1.0);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += delta.value().at(i, j) * delta.value().at(i, j);
    if (cfg.p != 0.0) w[i] = 1.0 / std::pow(s + cfg.c, cfg.p);
  }
  const Var loss = rev::mean(rev::mul(sq, tape.constant(w)));
  tape.backward(loss);
  StepResult res;
  res.loss.weighted_loss = loss.value().item();
  for (const Var& l : leaves) res.grads.push_back(tape.grad(l));
  return res;
}

// ---------------------------------------------------------------------------

Outcome fm_degeneracy() {
  Outcome out;
  bool loss_ok = true, grad_ok = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (std::size_t classes : {std::size_t{0}, std::size_t{4}}) {
      const NetworkConfig net = small_net(2, classes);
      Philox init(seed, 10);
      const NetworkParams params = init_params(net, init, false);
      TrainConfig cfg;
      cfg.ratio_r_neq_t = 0.0;
      Philox data_rng(seed, 11);
      const Batch batch = random_batch(64, 2, data_rng, classes);
      Philox a(seed, 12), b(seed, 12);
      const StepResult mf = training_step(net, params, batch, a, cfg);
      const StepResult fm = flow_matching_step(net, params.live, batch, b, cfg);
      loss_ok = loss_ok && std::bit_cast<std::uint64_t>(mf.loss.weighted_loss) ==
                               std::bit_cast<std::uint64_t>(fm.loss.weighted_loss);
      grad_ok = grad_ok && same_bits(mf.grads, fm.grads) && mf.loss.fraction_r_eq_t == 1.0;
    }
  }
  out.require(loss_ok, "loss bitwise");
  out.require(grad_ok, "gradients bitwise");
  return out;
}

Outcome jvp_correctness() {
  Outcome out;
  const TimeCond modes[] = {TimeCond::T_R, TimeCond::T_DT, TimeCond::T_R_DT, TimeCond::DT_ONLY};
  double worst = 0.0;
  const double h = 1e-5;
  for (std::uint64_t k = 0; k < 100; ++k) {
    Philox rng(k, 20);
    NetworkConfig net = small_net(1 + k % 3);
    net.time_cond = modes[k % 4];
    net.activation = k % 2 ? Activation::GELU : Activation::SiLU;
    const NetworkParams p = init_params(net, rng, false);
    const std::size_t b = 8, d = net.input_dim;
    Tensor z(Shape{b, d}), v(Shape{b, d}), r(Shape{b, 1}), t(Shape{b, 1});
    for (double& x : z.data()) x = rng.normal();
    for (double& x : v.data()) x = rng.normal();
    for (std::size_t i = 0; i < b; ++i) {
      t[i] = 0.05 + 0.9 * rng.uniform();
      r[i] = t[i] * rng.uniform();
    }
    const std::vector<std::size_t> cls(b, net.null_class());
    const JvpOutput j = u_theta_jvp(net, p.live, z, r, t, cls, v, Tensor(r.shape(), 0.0), Tensor(t.shape(), 1.0));
    Tensor zp = z, zm = z, tp = t, tm = t;
    for (std::size_t i = 0; i < z.size(); ++i) {
      zp[i] += h * v[i];
      zm[i] -= h * v[i];
    }
    for (std::size_t i = 0; i < b; ++i) {
      tp[i] += h;
      tm[i] -= h;
    }
    const Tensor up = u_theta(net, p.live, zp, r, tp, cls), um = u_theta(net, p.live, zm, r, tm, cls);
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double fd = (up[i] - um[i]) / (2.0 * h);
      diff += std::pow(j.tangent[i] - fd, 2);
      ref += fd * fd;
    }
    worst = std::max(worst, std::sqrt(diff / ref));
  }
  out.require(worst <= 1e-5, "JVP vs central differences max rel " + num(worst));

  const GmmSpec gmm = GmmSpec::gaussian({1.0}, 0.25);
  const OracleField field{gmm};
  auto rms_residual = [&](TangentMode mode) {
    double sq = 0.0;
    std::size_t n = 0;
    for (int ti = 1; ti <= 5; ++ti) {
      const double t = 0.2 * ti;
      for (int rj = 0; rj < 5; ++rj) {
        const double r = t * rj / 5.0;
        for (int zi = 0; zi < 10; ++zi) {
          const double z[] = {-2.0 + 4.0 * zi / 9.0};
          sq += std::pow(identity_residual(field, gmm, z, r, t, 1e-4, mode), 2);
          ++n;
        }
      }
    }
    return std::sqrt(sq / static_cast<double>(n));
  };
  const double good = rms_residual({1.0, 0.0, 1.0});
  for (const char* bad : {"v,0,0", "v,1,0", "v,1,1"}) {
    const double r = rms_residual(parse_tangent_mode(bad));
    out.require(r >= 100.0 * good, std::string("(") + bad + ") residual " + num(r) + " vs " + num(good));
  }
  return out;
}

// Affine flow map of Gaussian data: z_r = m_r + (s_r / s_t) (z_t - m_t).
double gaussian_flow_map(double z, double r, double t, double mean, double var) {
  auto m = [&](double s) { return (1.0 - s) * mean; };
  auto sd = [&](double s) { return std::sqrt((1.0 - s) * (1.0 - s) * var + s * s); };
  return m(r) + sd(r) / sd(t) * (z - m(t));
}

Outcome identity_on_oracle() {
  Outcome out;
  const GmmSpec gmm = GmmSpec::gaussian({1.0}, 0.25);
  VerifyOptions opt;  // 10 z x 10 r x 10 t
  const VerifyReport rep = verify_oracle(gmm, opt);
  out.require(rep.rows.size() == 1000, "grid of " + std::to_string(rep.rows.size()));
  out.require(rep.max_residual <= 1e-4, "identity residual max " + num(rep.max_residual));
  out.require(rep.max_additivity <= 1e-6, "additivity max " + num(rep.max_additivity));
  double flow_err = 0.0;
  for (const FieldRow& row : rep.rows) {
    const double z_r = gaussian_flow_map(row.z[0], row.r, row.t, 1.0, 0.25);
    flow_err = std::max(flow_err, std::abs(row.u[0] - (row.z[0] - z_r) / (row.t - row.r)));
  }
  out.require(flow_err <= 1e-6, "u vs affine flow map max " + num(flow_err));
  return out;
}

// 1D Dirac at x0 = 1. A low top frequency in the time embedding and uniform
// time sampling matter most at this budget.
RunConfig point_mass_config() {
  RunConfig rc;
  rc.network = small_net(1);
  rc.network.hidden_dim = 64;
  rc.network.embed_dim = 32;
  rc.network.max_freq = 1.0;
  rc.data.source = "gmm";
  rc.data.gmm = "point:x0=1";
  rc.data.n = 1000;
  rc.training.sampler = TimeSampler::Uniform;
  rc.training.iterations = 2000;
  rc.training.batch_size = 256;
  rc.training.lr = 2e-3;
  rc.training.ema_decay = 0.99;
  rc.training.log_every = 0;
  rc.training.seed = 7;
  return rc;
}

Outcome point_mass_exactness() {
  Outcome out;
  const GmmSpec gmm = GmmSpec::point_mass({1.0, -0.5});
  bool exact = true;
  double via_flow = 0.0;
  for (double t : {0.1, 0.4, 0.7, 1.0})
    for (double rf : {0.0, 0.3, 0.6, 0.9})
      for (double a = -2.0; a <= 2.0; a += 0.5) {
        const double z[] = {a, 0.5 * a - 1.0};
        const double r = rf * t;
        const auto u = OracleField{gmm}(z, r, t);
        const auto v = marginal_velocity(gmm, z, t);
        exact = exact && u == v;
        const auto z_r = integrate_trajectory(gmm, z, t, r);
        for (std::size_t j = 0; j < 2; ++j) via_flow = std::max(via_flow, std::abs((z[j] - z_r[j]) / (t - r) - v[j]));
      }
  out.require(exact, "oracle u == v");
  out.require(via_flow <= 1e-12, "displacement / (t - r) vs v max " + num(via_flow));

  const RunConfig rc = point_mass_config();
  const TrainOutcome trained = run_training(rc);
  const NetworkConfig& net = rc.network;
  const Tensor eps = gaussian_noise(4096, 1, 99);
  const Tensor x = generate(net, trained.params.ema, eps, 1, class_rows(net, eps.rows(), std::nullopt));
  double sq = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) sq += std::pow(x.at(i, 0) - 1.0, 2);
  const double rms = std::sqrt(sq / static_cast<double>(x.rows()));
  out.require(rms <= 1e-2, "1-NFE RMS distance to x0 " + num(rms));
  return out;
}

// Grid RMSE of the EMA network against the oracle u on the default verify
// grid, frozen from the first run of gaussian_config(). Training is bitwise
// deterministic, so the only slack is the rounding of the recorded value.
constexpr double kGaussianGoldenRmse = 0.1418;

RunConfig gaussian_config() {
  RunConfig rc;
  rc.network = small_net(1);
  rc.network.hidden_dim = 64;
  rc.network.embed_dim = 32;
  rc.network.max_freq = 1.0;
  rc.data.source = "gmm";
  rc.data.gmm = "normal:mean=1,var=0.25";
  rc.data.n = 10000;
  rc.training.sampler = TimeSampler::Uniform;
  rc.training.ratio_r_neq_t = 0.75;
  rc.training.p = 0.0;
  rc.training.iterations = 10000;
  rc.training.batch_size = 512;
  rc.training.lr = 1e-3;
  rc.training.ema_decay = 0.9995;
  rc.training.log_every = 0;
  rc.training.seed = 7;
  return rc;
}

Outcome gaussian_end_to_end() {
  Outcome out;
  const RunConfig rc = gaussian_config();
  const TrainOutcome trained = run_training(rc);
  const NetworkConfig& net = rc.network;
  const Tensor eps = gaussian_noise(50000, 1, 99);
  const Tensor x = generate(net, trained.params.ema, eps, 1, class_rows(net, eps.rows(), std::nullopt));
  const Moments m = sample_moments(x);
  const double mean_rel = std::abs(m.mean[0] - 1.0) / 1.0;
  const double std_rel = std::abs(std::sqrt(m.cov[0]) - 0.5) / 0.5;
  out.require(mean_rel <= 0.05, "mean " + num(m.mean[0]) + " (rel err " + num(mean_rel) + ")");
  out.require(std_rel <= 0.05, "std " + num(std::sqrt(m.cov[0])) + " (rel err " + num(std_rel) + ")");

  const LoadedModel model{rc, Checkpoint{to_text(rc), trained.params}};
  const VerifyReport rep = verify_oracle(GmmSpec::gaussian({1.0}, 0.25), VerifyOptions{}, &model);
  const double rmse = rep.net_rmse.value_or(INFINITY);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f (golden %.4f)", rmse, kGaussianGoldenRmse);
  out.require(rmse <= kGaussianGoldenRmse, std::string("u_theta vs oracle grid RMSE ") + buf);
  return out;
}

// Labelled 8-component ring. Both models share every setting except ratio;
// the shared ones follow criteria 4 and 5 (uniform times) or the defaults.
RunConfig ring_config(double ratio) {
  RunConfig rc;
  rc.network = small_net(2, 8);
  rc.network.hidden_dim = 64;
  rc.network.embed_dim = 32;
  rc.network.max_freq = 1.0;
  rc.data.source = "gmm";
  rc.data.gmm = "ring:k=8,radius=2,var=0.02";
  rc.data.labeled = true;
  rc.data.n = 20000;
  rc.training.sampler = TimeSampler::Uniform;
  rc.training.ratio_r_neq_t = ratio;
  rc.training.iterations = 8000;
  rc.training.batch_size = 256;
  rc.training.lr = 2e-3;
  rc.training.ema_decay = 0.999;
  rc.training.log_every = 0;
  rc.training.seed = 7;
  return rc;
}

// The median heuristic lands near the ring diameter, where the kernel cannot
// see mode sharpness and both models sit at the estimator's noise floor. Two
// component standard deviations keeps the kernel at the scale of one mode.
constexpr double kRingBandwidth = 0.283;

Outcome ring_mmd_and_classes() {
  Outcome out;
  const RunConfig mf_rc = ring_config(1.0);
  const RunConfig fm_rc = ring_config(0.0);
  const LoadedModel mf{mf_rc, Checkpoint{to_text(mf_rc), run_training(mf_rc).params}};
  const LoadedModel fm{fm_rc, Checkpoint{to_text(fm_rc), run_training(fm_rc).params}};

  EvalOptions opt;
  opt.n = 8000;
  opt.steps = 1;
  opt.baseline_steps = 100;
  opt.bandwidth = kRingBandwidth;
  const Dataset ref = eval_reference(mf_rc.data.gmm, opt.n, opt.seed);
  const auto lines = evaluate(mf, ref, opt, &fm);
  const double mmd_mf = lines.at(0).value, mmd_fm = lines.at(1).value;
  Philox other(opt.seed + 1, kReferenceStream);
  const double unpaired = mmd_rbf(sample_gmm(*ref.spec, opt.n, other, false).points, ref.points, kRingBandwidth);
  out.require(mmd_mf <= 2.0 * mmd_fm, "MMD 1-NFE " + num(mmd_mf) + " vs 100-step Euler baseline " + num(mmd_fm) +
                                          " (fresh unlabelled data draw " + num(unpaired) + ")");

  const NetworkConfig& net = mf_rc.network;
  std::size_t hits = 0, total = 0;
  for (std::size_t c = 0; c < net.num_classes; ++c) {
    const Tensor eps = gaussian_noise(1000, 2, 100 + c);
    const Tensor x = generate(net, mf.table(false), eps, 1, class_rows(net, eps.rows(), c));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      std::size_t best = 0;
      double best_d = INFINITY;
      for (std::size_t k = 0; k < ref.spec->components.size(); ++k) {
        const double d = squared_distance(x.row(i), ref.spec->components[k].mean);
        if (d < best_d) best_d = d, best = k;
      }
      hits += best == c;
      ++total;
    }
  }
  const double frac = static_cast<double>(hits) / static_cast<double>(total);
  out.require(frac >= 0.95, "class-conditional samples nearest their mean " + num(100.0 * frac) + "%");
  return out;
}

// Replays the step noise and rebuilds the regression target and weights.
struct Replay {
  Tensor z, r, t, target, weight;
  std::vector<std::size_t> classes;
};

Replay replay_step(const NetworkConfig& net, const ParamTable& live, const Batch& batch, Philox& rng,
                   const TrainConfig& cfg) {
  const std::size_t b = batch.x.rows(), d = batch.x.cols();
  const StepNoise noise = draw_step_noise(rng, b, d, cfg);
  Replay rp{Tensor(batch.x.shape()), noise.r, noise.t, {}, Tensor(Shape{b, 1}), {}};
  Tensor v(batch.x.shape());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double t = noise.t[i], x = batch.x.at(i, j), e = noise.eps.at(i, j);
      rp.z.at(i, j) = (1.0 - t) * x + t * e;
      v.at(i, j) = e - x;
    }
  rp.classes = training_class_rows(net, batch, noise.dropped);
  const Tensor v_tilde = guided_velocity(net, live, rp.z, v, rp.t, rp.classes, cfg);
  const JvpOutput ju = u_theta_jvp(net, live, rp.z, rp.r, rp.t, rp.classes, v_tilde, Tensor(rp.r.shape(), 0.0),
                                   Tensor(rp.t.shape(), 1.0));
  rp.target = Tensor(v.shape());
  for (std::size_t i = 0; i < b; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      rp.target.at(i, j) = v_tilde.at(i, j) - (rp.t[i] - rp.r[i]) * ju.tangent.at(i, j);
      sq += std::pow(ju.primal.at(i, j) - rp.target.at(i, j), 2);
    }
    rp.weight[i] = cfg.p == 0.0 ? 1.0 : 1.0 / std::pow(sq + cfg.c, cfg.p);
  }
  return rp;
}

Outcome cfg_degeneracy() {
  Outcome out;
  bool grads_equal = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const NetworkConfig net = small_net(2, 4);
    Philox init(seed, 30);
    const NetworkParams params = init_params(net, init, false);
    Philox data_rng(seed, 31);
    const Batch batch = random_batch(64, 2, data_rng, 4);
    TrainConfig plain;
    TrainConfig guided = plain;
    guided.cfg = true;
    guided.omega = 1.0;
    guided.kappa = 0.0;
    Philox a(seed, 32), b(seed, 32);
    const StepResult x = training_step(net, params, batch, a, plain);
    const StepResult y = training_step(net, params, batch, b, guided);
    grads_equal = grads_equal && same_bits(x.grads, y.grads) &&
                  std::bit_cast<std::uint64_t>(x.loss.weighted_loss) == std::bit_cast<std::uint64_t>(y.loss.weighted_loss);
  }
  out.require(grads_equal, "omega=1 kappa=0 gradients equal plain training bitwise");

  TrainConfig p1, p2;
  p1.omega = 0.2, p1.kappa = 0.9;
  p2.omega = 2.0, p2.kappa = 0.0;
  out.require(std::abs(p1.effective_omega() - p2.effective_omega()) <= 1e-12,
              "effective scales " + num(p1.effective_omega()) + " and " + num(p2.effective_omega()));

  Philox rng(33);
  Tensor v(Shape{256, 2}), u(Shape{256, 2});
  for (double& x : v.data()) x = rng.normal();
  for (double& x : u.data()) x = rng.normal();
  // Bootstrap terms coincide: u_cond == u_uncond == u.
  const Tensor a = cfg_velocity_tilde(v, u, u, p1.omega, p1.kappa);
  const Tensor b = cfg_velocity_tilde(v, u, u, p2.omega, p2.kappa);
  const double coincide = max_abs_diff(a, b);
  out.require(coincide <= 1e-12, "(0.2, 0.9) vs (2, 0) with u_cond == u_uncond max diff " + num(coincide));

  // Self-consistent case: the conditional term already equals the guided
  // field, u_cond = w' v + (1 - w') u_uncond.
  Tensor fixed(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) fixed[i] = 2.0 * v[i] - u[i];
  const double at_fixed = std::max(max_abs_diff(cfg_velocity_tilde(v, u, fixed, p1.omega, p1.kappa), fixed),
                                   max_abs_diff(cfg_velocity_tilde(v, u, fixed, p2.omega, p2.kappa), fixed));
  out.require(at_fixed <= 1e-12, "with u_cond at the guided field both give it back, max diff " + num(at_fixed));
  return out;
}

Outcome stop_gradient_contract() {
  Outcome out;
  double worst = 0.0, largest = 0.0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const std::size_t classes = seed % 2 ? 3 : 0;
    NetworkConfig net = small_net(1 + seed % 2, classes);
    net.time_cond = seed % 3 == 0 ? TimeCond::T_R : TimeCond::T_DT;
    Philox init(seed, 40);
    const NetworkParams params = init_params(net, init, false);
    Philox data_rng(seed, 41);
    const Batch batch = random_batch(48, net.input_dim, data_rng, classes);
    TrainConfig cfg;
    cfg.ratio_r_neq_t = 0.5;
    cfg.p = 0.5 * static_cast<double>(seed % 3);
    cfg.cfg = classes != 0;
    cfg.omega = 1.5;
    cfg.kappa = 0.3;
    Philox a(seed, 42), b(seed, 42);
    const StepResult step = training_step(net, params, batch, a, cfg);

    // Pass 1: frozen target and weights. Pass 2: dL/du = 2 w (u - C) / B pulled
    // back through the network alone.
    const Replay rp = replay_step(net, params.live, batch, b, cfg);
    const Tensor u = u_theta(net, params.live, rp.z, rp.r, rp.t, rp.classes);
    Tensor g(u.shape());
    const double bsz = static_cast<double>(u.rows());
    for (std::size_t i = 0; i < u.rows(); ++i)
      for (std::size_t j = 0; j < u.cols(); ++j)
        g.at(i, j) = 2.0 * rp.weight[i] * (u.at(i, j) - rp.target.at(i, j)) / bsz;
    std::vector<Tensor> values;
    for (const auto& e : params.live) values.push_back(e.value);
    const ParamGrads two_pass = grad_params(
        [&](Tape& tape, std::span<const Var> leaves) {
          const Var uu = forward(net, VarBinder{leaves}, tape.constant(rp.z), tape.constant(rp.r),
                                 tape.constant(rp.t), rp.classes);
          return rev::sum(rev::mul(uu, tape.constant(g)));
        },
        values);
    for (std::size_t k = 0; k < two_pass.size(); ++k) {
      worst = std::max(worst, max_abs_diff(step.grads[k], two_pass[k]));
      for (double x : two_pass[k].data()) largest = std::max(largest, std::abs(x));
    }
  }
  out.require(worst <= 1e-10, "max gradient difference " + num(worst) + " (largest entry " + num(largest) + ")");
  return out;
}

Outcome adaptive_weight_behavior() {
  Outcome out;
  bool bitwise = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const NetworkConfig net = small_net(2);
    Philox init(seed, 50);
    const NetworkParams params = init_params(net, init, false);
    Philox data_rng(seed, 51);
    const Batch batch = random_batch(64, 2, data_rng);
    TrainConfig cfg;
    cfg.p = 0.0;
    Philox a(seed, 52), b(seed, 52);
    const StepResult step = training_step(net, params, batch, a, cfg);
    const Replay rp = replay_step(net, params.live, batch, b, cfg);
    const Tensor u = u_theta(net, params.live, rp.z, rp.r, rp.t, rp.classes);
    double total = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < u.cols(); ++j) sq += (u.at(i, j) - rp.target.at(i, j)) * (u.at(i, j) - rp.target.at(i, j));
      total += sq;
    }
    const double unweighted = total / static_cast<double>(u.rows());
    bitwise = bitwise && std::bit_cast<std::uint64_t>(unweighted) == std::bit_cast<std::uint64_t>(step.loss.weighted_loss);
  }
  out.require(bitwise, "p=0 loss equals the unweighted squared loss bitwise");

  Philox rng(53);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 1 + rng.below(16), d = 1 + rng.below(4);
    Tensor delta(Shape{b, d});
    for (double& x : delta.data()) x = rng.normal() * std::pow(10.0, 2.0 * rng.uniform() - 1.0);
    const double p = 2.0 * rng.uniform(), c = std::pow(10.0, -4.0 + 3.0 * rng.uniform());
    const Tensor w = adaptive_weight(delta, p, c);
    for (std::size_t i = 0; i < b; ++i) {
      long double sq = 0.0L;
      for (std::size_t j = 0; j < d; ++j) sq += static_cast<long double>(delta.at(i, j)) * delta.at(i, j);
      const long double ref = 1.0L / std::pow(sq + c, static_cast<long double>(p));
      worst = std::max(worst, static_cast<double>(std::abs((w[i] - ref) / ref)));
    }
  }
  out.require(worst <= 1e-13, "w vs closed formula max rel " + num(worst));
  return out;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism_and_persistence() {
  Outcome out;
  RunConfig rc;
  rc.network = small_net(2, 3);
  rc.data.gmm = "ring:k=3,radius=2,var=0.05";
  rc.data.labeled = true;
  rc.data.n = 500;
  rc.training.iterations = 60;
  rc.training.batch_size = 64;
  rc.training.log_every = 5;
  rc.training.checkpoint_every = 20;
  rc.training.lr = 1e-3;
  rc.training.cfg = true;
  rc.training.omega = 1.5;
  rc.training.seed = 11;
  const auto base = std::filesystem::temp_directory_path() / ("meanflow_acceptance_" + std::to_string(::getpid()));
  std::filesystem::remove_all(base);
  run_training(rc, base / "a");
  run_training(rc, base / "b");
  const std::string ma = read_bytes(base / "a" / "metrics.csv"), mb = read_bytes(base / "b" / "metrics.csv");
  out.require(!ma.empty() && ma == mb, "metrics CSV identical (" + std::to_string(ma.size()) + " bytes)");
  const std::string ca = read_bytes(base / "a" / "checkpoint.mfck");
  out.require(!ca.empty() && ca == read_bytes(base / "b" / "checkpoint.mfck"), "checkpoint files identical");

  const Checkpoint loaded = load_checkpoint((base / "a" / "checkpoint.mfck").string());
  const auto bytes = encode_checkpoint(loaded);
  out.require(std::string(bytes.begin(), bytes.end()) == ca, "encode(load(file)) == file");
  save_checkpoint((base / "copy.mfck").string(), loaded);
  out.require(load_checkpoint((base / "copy.mfck").string()) == loaded, "load(save(x)) == x");
  out.require(parse_run_config(loaded.config_text).training.seed == 11, "config echo readable");
  std::filesystem::remove_all(base);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    int id;
    const char* title;
    std::function<Outcome()> run;
  };
  const std::vector<Entry> all = {
      {1, "flow-matching degeneracy", fm_degeneracy},
      {2, "JVP correctness", jvp_correctness},
      {3, "average-velocity identity on the oracle", identity_on_oracle},
      {4, "point-mass exactness", point_mass_exactness},
      {5, "1D Gaussian end to end", gaussian_end_to_end},
      {6, "8-component ring", ring_mmd_and_classes},
      {7, "CFG degeneracy and scale algebra", cfg_degeneracy},
      {8, "stop-gradient contract", stop_gradient_contract},
      {9, "adaptive-weight behavior", adaptive_weight_behavior},
      {10, "determinism and persistence", determinism_and_persistence},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only.insert(std::stoi(argv[++i]));
    } else {
      std::cerr << "usage: " << argv[0] << " [--only N]...\n";
      return 2;
    }
  }
  int failures = 0;
  for (const auto& e : all) {
    if (!only.empty() && !only.count(e.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::cout << "criterion " << e.id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << e.title << ": " << o.detail
              << " [" << num(secs) << " s]" << std::endl;
  }
  return failures ? 1 : 0;
}
