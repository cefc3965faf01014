#pragma once

// Velocity network u(z, r, t | c): MLP trunk with sinusoidal time embeddings
// and an additive class embedding. One forward template serves plain,
// forward-mode (Dual) and reverse-mode (Var) evaluation.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "meanflow/forward.hpp"
#include "meanflow/reverse.hpp"
#include "meanflow/rng.hpp"
#include "meanflow/tensor.hpp"

namespace meanflow {

// Which time variables the network sees; u(., r, t) := net(., vars...).
enum class TimeCond { T_R, T_DT, T_R_DT, DT_ONLY };
enum class Activation { SiLU, GELU };

inline std::string_view to_string(TimeCond m) {
  switch (m) {
    case TimeCond::T_R: return "t_r";
    case TimeCond::T_DT: return "t_dt";
    case TimeCond::T_R_DT: return "t_r_dt";
    case TimeCond::DT_ONLY: return "dt_only";
  }
  return "?";
}

inline std::optional<TimeCond> parse_time_cond(std::string_view s) {
  for (TimeCond m : {TimeCond::T_R, TimeCond::T_DT, TimeCond::T_R_DT, TimeCond::DT_ONLY})
    if (s == to_string(m)) return m;
  return std::nullopt;
}

inline std::size_t time_variable_count(TimeCond m) {
  switch (m) {
    case TimeCond::T_R:
    case TimeCond::T_DT: return 2;
    case TimeCond::T_R_DT: return 3;
    case TimeCond::DT_ONLY: return 1;
  }
  return 0;
}

struct NetworkConfig {
  std::size_t input_dim = 2;
  std::size_t hidden_dim = 256;
  std::size_t depth = 4;  // hidden layers, including the input projection
  std::size_t embed_dim = 128;
  TimeCond time_cond = TimeCond::T_DT;
  std::size_t num_classes = 0;  // 0 = unconditional
  Activation activation = Activation::SiLU;
  double max_freq = 100.0;  // top of the geometric frequency ladder (bottom is 1)

  void validate() const {
    if (input_dim == 0) throw ValueError("network: input_dim must be positive");
    if (hidden_dim == 0) throw ValueError("network: hidden_dim must be positive");
    if (depth == 0) throw ValueError("network: depth must be >= 1");
    if (embed_dim == 0 || embed_dim % 2 != 0)
      throw ValueError("network: embed_dim must be positive and even");
    if (!(max_freq >= 1.0)) throw ValueError("network: max_freq must be >= 1");
  }

  std::size_t null_class() const noexcept { return num_classes; }
};

struct NamedTensor {
  std::string name;
  Tensor value;

  bool operator==(const NamedTensor&) const = default;
};

using ParamTable = std::vector<NamedTensor>;

struct NetworkParams {
  ParamTable live;
  ParamTable ema;  // same names and shapes as live
};

// Indices of each parameter tensor in a ParamTable.
struct ParamLayout {
  struct Linear {
    std::size_t w, b;
  };
  struct TimeMlp {
    Linear fc1, fc2;
  };
  Linear input;
  std::vector<TimeMlp> time;
  std::size_t class_table;
  std::vector<Linear> hidden;
  Linear output;
};

namespace detail {

struct LayoutBuilder {
  std::vector<std::pair<std::string, Shape>> entries;
  ParamLayout::Linear linear(const std::string& name, std::size_t in, std::size_t out) {
    entries.emplace_back(name + ".w", Shape{in, out});
    entries.emplace_back(name + ".b", Shape{out});
    return {entries.size() - 2, entries.size() - 1};
  }
};

inline ParamLayout build_layout(const NetworkConfig& cfg,
                                std::vector<std::pair<std::string, Shape>>* shapes) {
  LayoutBuilder b;
  ParamLayout l;
  const std::size_t h = cfg.hidden_dim;
  l.input = b.linear("in", cfg.input_dim, h);
  for (std::size_t k = 0; k < time_variable_count(cfg.time_cond); ++k) {
    const std::string p = "time" + std::to_string(k);
    ParamLayout::TimeMlp m;
    m.fc1 = b.linear(p + ".fc1", cfg.embed_dim, h);
    m.fc2 = b.linear(p + ".fc2", h, h);
    l.time.push_back(m);
  }
  b.entries.emplace_back("class_table", Shape{cfg.num_classes + 1, h});
  l.class_table = b.entries.size() - 1;
  for (std::size_t i = 1; i < cfg.depth; ++i) l.hidden.push_back(b.linear("hidden" + std::to_string(i), h, h));
  l.output = b.linear("out", h, cfg.input_dim);
  if (shapes) *shapes = std::move(b.entries);
  return l;
}

}  // namespace detail

inline ParamLayout param_layout(const NetworkConfig& cfg) { return detail::build_layout(cfg, nullptr); }

inline std::vector<std::pair<std::string, Shape>> param_shapes(const NetworkConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> s;
  detail::build_layout(cfg, &s);
  return s;
}

// Checks that a table matches the layout the config implies.
inline void check_table(const NetworkConfig& cfg, const ParamTable& table) {
  const auto shapes = param_shapes(cfg);
  if (shapes.size() != table.size())
    throw ShapeError("parameter table has " + std::to_string(table.size()) + " tensors, config implies " +
                     std::to_string(shapes.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (table[i].name != shapes[i].first)
      throw ShapeError("parameter " + std::to_string(i) + " is '" + table[i].name + "', expected '" +
                       shapes[i].first + "'");
    if (table[i].value.shape() != shapes[i].second)
      throw ShapeError("parameter '" + table[i].name + "' has shape " + shape_str(table[i].value.shape()) +
                       ", expected " + shape_str(shapes[i].second));
  }
}

// Angular frequencies 1 .. max_freq, geometrically spaced, embed_dim/2 of them.
inline std::vector<double> embedding_frequencies(std::size_t embed_dim, double max_freq) {
  const std::size_t n = embed_dim / 2;
  std::vector<double> f(n, 1.0);
  for (std::size_t k = 1; k < n; ++k)
    f[k] = std::pow(max_freq, static_cast<double>(k) / static_cast<double>(n - 1));
  return f;
}

// Uniform fan-in init; the output layer starts at zero so u == 0 initially.
inline NetworkParams init_params(const NetworkConfig& cfg, Philox& rng, bool zero_output = true) {
  cfg.validate();
  const ParamLayout layout = param_layout(cfg);
  NetworkParams p;
  for (auto& [name, shape] : param_shapes(cfg)) p.live.push_back({name, Tensor(shape)});
  auto fill_linear = [&](ParamLayout::Linear lin) {
    Tensor& w = p.live[lin.w].value;
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.dim(0)));
    for (double& x : w.data()) x = bound * (2.0 * rng.uniform() - 1.0);
  };
  fill_linear(layout.input);
  for (const auto& m : layout.time) {
    fill_linear(m.fc1);
    fill_linear(m.fc2);
  }
  for (double& x : p.live[layout.class_table].value.data()) x = 0.5 * rng.normal();
  for (const auto& lin : layout.hidden) fill_linear(lin);
  if (!zero_output) {
    fill_linear(layout.output);
    for (double& x : p.live[layout.output.b].value.data()) x = 0.1 * rng.normal();
  }
  p.ema = p.live;
  return p;
}

// ema <- decay * ema + (1 - decay) * live
inline void ema_update(NetworkParams& p, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ValueError("ema_update: decay must lie in [0, 1]");
  if (p.ema.size() != p.live.size()) throw ShapeError("ema_update: ema table does not mirror live table");
  for (std::size_t i = 0; i < p.live.size(); ++i) {
    Tensor& e = p.ema[i].value;
    const Tensor& l = p.live[i].value;
    require_same_shape(e, l, "ema_update");
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = decay * e[j] + (1.0 - decay) * l[j];
  }
}

// ---------------------------------------------------------------------------
// Mode-generic primitives. Plain tensors go through the kernels directly.
// ---------------------------------------------------------------------------
namespace ops {

inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  return kernels::add_row(kernels::matmul(x, w), b);
}
inline Tensor add(const Tensor& a, const Tensor& b) { return kernels::add(a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return kernels::sub(a, b); }
inline Tensor silu(const Tensor& a) { return kernels::map(a, [](double x) { return kernels::silu(x); }); }
inline Tensor gelu(const Tensor& a) { return kernels::map(a, [](double x) { return kernels::gelu(x); }); }
inline Tensor sinusoid(const Tensor& x, std::span<const double> f) { return kernels::sinusoid(x, f); }
inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  return kernels::gather_rows(t, idx);
}

using fwd::add;
using fwd::affine;
using fwd::gather_rows;
using fwd::gelu;
using fwd::silu;
using fwd::sinusoid;
using fwd::sub;
using rev::add;
using rev::affine;
using rev::gather_rows;
using rev::gelu;
using rev::silu;
using rev::sinusoid;
using rev::sub;

template <class V>
V activate(Activation a, const V& x) {
  return a == Activation::GELU ? gelu(x) : silu(x);
}

}  // namespace ops

// Parameter binders: map a table index to the value type of the active mode.
struct PlainBinder {
  const ParamTable& table;
  const Tensor& operator()(std::size_t i) const { return table[i].value; }
};

struct DualBinder {
  const ParamTable& table;
  Dual operator()(std::size_t i) const { return Dual(table[i].value); }
};

struct VarBinder {
  std::span<const Var> leaves;
  Var operator()(std::size_t i) const { return leaves[i]; }
};

// The mode's time variables in channel order.
template <class V>
std::vector<V> time_variables(TimeCond mode, const V& r, const V& t) {
  using ops::sub;
  switch (mode) {
    case TimeCond::T_R: return {t, r};
    case TimeCond::T_DT: return {t, sub(t, r)};
    case TimeCond::T_R_DT: return {t, r, sub(t, r)};
    case TimeCond::DT_ONLY: return {sub(t, r)};
  }
  return {};
}

// Summed per-variable embeddings: sum_k MLP_k(sinusoid(var_k)), shape [B, hidden].
template <class V, class Bind>
V embed_times(const NetworkConfig& cfg, const ParamLayout& layout, const Bind& bind, const V& r, const V& t) {
  const std::vector<double> freqs = embedding_frequencies(cfg.embed_dim, cfg.max_freq);
  const std::vector<V> vars = time_variables(cfg.time_cond, r, t);
  std::optional<V> acc;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const auto& m = layout.time[k];
    V e = ops::affine(ops::sinusoid(vars[k], freqs), bind(m.fc1.w), bind(m.fc1.b));
    e = ops::activate(cfg.activation, e);
    e = ops::affine(e, bind(m.fc2.w), bind(m.fc2.b));
    acc = acc ? ops::add(*acc, e) : e;
  }
  return *acc;
}

// Network body. z: [B, input_dim]; r, t: [B, 1]; class_rows: B rows of the
// class table (null_class() for unconditional).
template <class V, class Bind>
V forward(const NetworkConfig& cfg, const Bind& bind, const V& z, const V& r, const V& t,
          std::span<const std::size_t> class_rows) {
  const ParamLayout layout = param_layout(cfg);
  V h = ops::affine(z, bind(layout.input.w), bind(layout.input.b));
  h = ops::add(h, embed_times(cfg, layout, bind, r, t));
  h = ops::add(h, ops::gather_rows(bind(layout.class_table), class_rows));
  h = ops::activate(cfg.activation, h);
  for (const auto& lin : layout.hidden) h = ops::activate(cfg.activation, ops::affine(h, bind(lin.w), bind(lin.b)));
  return ops::affine(h, bind(layout.output.w), bind(layout.output.b));
}

// Raw sinusoidal blocks of the mode's variables, concatenated: [B, vars * embed_dim].
inline Tensor sinusoidal_features(const NetworkConfig& cfg, const Tensor& r, const Tensor& t) {
  for (std::size_t i = 0; i < r.size(); ++i)
    if (r[i] > t[i]) throw ValueError("embed_times: r must not exceed t");
  const auto freqs = embedding_frequencies(cfg.embed_dim, cfg.max_freq);
  std::vector<Tensor> blocks;
  for (const Tensor& v : time_variables(cfg.time_cond, r, t)) blocks.push_back(kernels::sinusoid(v, freqs));
  std::vector<const Tensor*> ptrs;
  for (const Tensor& b : blocks) ptrs.push_back(&b);
  return kernels::concat_cols(ptrs);
}

// Time conditioning vector fed to the trunk, [B, hidden].
inline Tensor embed_times(const NetworkConfig& cfg, const ParamTable& table, const Tensor& r, const Tensor& t) {
  for (std::size_t i = 0; i < r.size(); ++i)
    if (r[i] > t[i]) throw ValueError("embed_times: r must not exceed t");
  return embed_times(cfg, param_layout(cfg), PlainBinder{table}, r, t);
}

// Class-table rows for a batch; nullopt selects the null row.
inline std::vector<std::size_t> class_rows(const NetworkConfig& cfg, std::size_t batch,
                                           std::optional<std::size_t> class_id) {
  if (class_id) {
    if (cfg.num_classes == 0) throw ValueError("class id given to an unconditional network");
    if (*class_id >= cfg.num_classes)
      throw ValueError("class id " + std::to_string(*class_id) + " out of range for " +
                       std::to_string(cfg.num_classes) + " classes");
  }
  return std::vector<std::size_t>(batch, class_id.value_or(cfg.null_class()));
}

inline void check_class_rows(const NetworkConfig& cfg, std::span<const std::size_t> rows) {
  for (std::size_t c : rows)
    if (c > cfg.null_class())
      throw ValueError("class id " + std::to_string(c) + " out of range for " + std::to_string(cfg.num_classes) +
                       " classes");
}

inline void check_inputs(const NetworkConfig& cfg, const Tensor& z, const Tensor& r, const Tensor& t,
                         std::size_t n_class_rows) {
  if (z.rank() != 2 || z.cols() != cfg.input_dim)
    throw ShapeError("u_theta: z has shape " + shape_str(z.shape()) + ", expected [B," +
                     std::to_string(cfg.input_dim) + "]");
  const Shape col{z.rows(), 1};
  if (r.shape() != col) throw ShapeError("u_theta: r has shape " + shape_str(r.shape()) + ", expected " + shape_str(col));
  if (t.shape() != col) throw ShapeError("u_theta: t has shape " + shape_str(t.shape()) + ", expected " + shape_str(col));
  if (n_class_rows != z.rows()) throw ShapeError("u_theta: class rows do not match batch size");
}

// u_theta(z, r, t | c) with per-row times and classes.
inline Tensor u_theta(const NetworkConfig& cfg, const ParamTable& table, const Tensor& z, const Tensor& r,
                      const Tensor& t, std::span<const std::size_t> classes) {
  check_inputs(cfg, z, r, t, classes.size());
  check_class_rows(cfg, classes);
  return forward(cfg, PlainBinder{table}, z, r, t, classes);
}

// Shared scalar times and one optional class for the whole batch.
inline Tensor u_theta(const NetworkConfig& cfg, const ParamTable& table, const Tensor& z, double r, double t,
                      std::optional<std::size_t> class_id = std::nullopt) {
  if (z.rank() != 2) throw ShapeError("u_theta: z must be [B, d]");
  const std::size_t b = z.rows();
  return u_theta(cfg, table, z, Tensor(Shape{b, 1}, r), Tensor(Shape{b, 1}, t), class_rows(cfg, b, class_id));
}

// JVP of u_theta along (dz, dr, dt) with parameters held fixed.
inline JvpOutput u_theta_jvp(const NetworkConfig& cfg, const ParamTable& table, const Tensor& z, const Tensor& r,
                             const Tensor& t, std::span<const std::size_t> classes, const Tensor& dz,
                             const Tensor& dr, const Tensor& dt) {
  check_inputs(cfg, z, r, t, classes.size());
  check_class_rows(cfg, classes);
  return jvp([&](const Dual& zz, const Dual& rr, const Dual& tt) {
    return forward(cfg, DualBinder{table}, zz, rr, tt, classes);
  }, z, r, t, dz, dr, dt);
}

// Callable (z, r, t) -> u over one parameter table and class.
inline auto velocity_fn(const NetworkConfig& cfg, const ParamTable& table,
                        std::optional<std::size_t> class_id = std::nullopt) {
  class_rows(cfg, 1, class_id);  // validates the class id up front
  return [&cfg, &table, class_id](const Tensor& z, double r, double t) {
    return u_theta(cfg, table, z, r, t, class_id);
  };
}

}  // namespace meanflow
