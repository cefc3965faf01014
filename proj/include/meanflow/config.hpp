#pragma once

// Run configuration: line-oriented "key = value" text with [section] headers
// and '#' comments. Unknown keys are errors.

#include <charconv>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "meanflow/datagen.hpp"
#include "meanflow/network.hpp"
#include "meanflow/oracle.hpp"
#include "meanflow/training.hpp"

namespace meanflow {

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what) : Error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct DataConfig {
  std::string source = "gmm";  // gmm | moons | checkerboard | csv
  std::string gmm = "normal:mean=1,var=0.25";
  std::size_t n = 10000;
  double noise = 0.05;
  std::string path;
  bool labeled = false;
};

struct EvalConfig {
  std::size_t n = 2000;
  std::string metric = "mmd";
  std::size_t steps = 1;
};

struct RunConfig {
  NetworkConfig network{.input_dim = 0};  // 0: take the data dimension
  TrainConfig training;
  DataConfig data;
  EvalConfig eval;
};

namespace detail {

inline std::string fmt_real(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

inline double to_real(const std::string& key, std::string_view s) {
  if (auto v = parse_double(trim(s))) return *v;
  throw ConfigError(key, "config key '" + key + "': '" + std::string(s) + "' is not a number");
}

inline std::uint64_t to_uint(const std::string& key, std::string_view s) {
  s = trim(s);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(key, "config key '" + key + "': '" + std::string(s) + "' is not a non-negative integer");
  return v;
}

inline bool to_bool(const std::string& key, std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key, "config key '" + key + "': '" + std::string(s) + "' is not a boolean");
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(std::string_view)> set;
  std::function<std::string()> get;
};

inline std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  auto real = [&f](std::string sec, std::string key, double& ref) {
    f.push_back({sec, key, [&ref, key](std::string_view s) { ref = to_real(key, s); },
                 [&ref] { return fmt_real(ref); }});
  };
  auto size = [&f](std::string sec, std::string key, std::size_t& ref) {
    f.push_back({sec, key, [&ref, key](std::string_view s) { ref = static_cast<std::size_t>(to_uint(key, s)); },
                 [&ref] { return std::to_string(ref); }});
  };
  auto text = [&f](std::string sec, std::string key, std::string& ref) {
    f.push_back({sec, key, [&ref](std::string_view s) { ref = std::string(trim(s)); }, [&ref] { return ref; }});
  };
  auto flag = [&f](std::string sec, std::string key, bool& ref) {
    f.push_back({sec, key, [&ref, key](std::string_view s) { ref = to_bool(key, s); },
                 [&ref] { return std::string(ref ? "true" : "false"); }});
  };

  NetworkConfig& n = c.network;
  size("network", "input_dim", n.input_dim);
  size("network", "hidden_dim", n.hidden_dim);
  size("network", "depth", n.depth);
  size("network", "embed_dim", n.embed_dim);
  f.push_back({"network", "time_cond",
               [&n](std::string_view s) {
                 auto m = parse_time_cond(trim(s));
                 if (!m) throw ConfigError("time_cond", "config key 'time_cond': expected t_r, t_dt, t_r_dt or dt_only");
                 n.time_cond = *m;
               },
               [&n] { return std::string(to_string(n.time_cond)); }});
  size("network", "num_classes", n.num_classes);
  f.push_back({"network", "activation",
               [&n](std::string_view s) {
                 s = trim(s);
                 if (s == "silu")
                   n.activation = Activation::SiLU;
                 else if (s == "gelu")
                   n.activation = Activation::GELU;
                 else
                   throw ConfigError("activation", "config key 'activation': expected silu or gelu");
               },
               [&n] { return std::string(n.activation == Activation::GELU ? "gelu" : "silu"); }});
  real("network", "max_freq", n.max_freq);

  TrainConfig& t = c.training;
  real("training", "ratio", t.ratio_r_neq_t);
  f.push_back({"training", "sampler",
               [&t](std::string_view s) {
                 s = trim(s);
                 if (s == "uniform")
                   t.sampler = TimeSampler::Uniform;
                 else if (s == "lognorm")
                   t.sampler = TimeSampler::LogNormal;
                 else
                   throw ConfigError("sampler", "config key 'sampler': expected uniform or lognorm");
               },
               [&t] { return std::string(t.sampler == TimeSampler::Uniform ? "uniform" : "lognorm"); }});
  real("training", "sampler_mu", t.sampler_mu);
  real("training", "sampler_sigma", t.sampler_sigma);
  real("training", "p", t.p);
  real("training", "c", t.c);
  flag("training", "cfg", t.cfg);
  real("training", "omega", t.omega);
  real("training", "kappa", t.kappa);
  real("training", "class_drop_prob", t.class_drop_prob);
  real("training", "cfg_t_lo", t.cfg_t_lo);
  real("training", "cfg_t_hi", t.cfg_t_hi);
  real("training", "lr", t.lr);
  real("training", "beta1", t.beta1);
  real("training", "beta2", t.beta2);
  real("training", "adam_eps", t.adam_eps);
  size("training", "batch_size", t.batch_size);
  real("training", "ema_decay", t.ema_decay);
  size("training", "iterations", t.iterations);
  f.push_back({"training", "seed", [&t](std::string_view s) { t.seed = to_uint("seed", s); },
               [&t] { return std::to_string(t.seed); }});
  size("training", "log_every", t.log_every);
  size("training", "checkpoint_every", t.checkpoint_every);

  DataConfig& d = c.data;
  text("data", "source", d.source);
  text("data", "gmm", d.gmm);
  size("data", "n", d.n);
  real("data", "noise", d.noise);
  text("data", "path", d.path);
  flag("data", "labeled", d.labeled);

  EvalConfig& e = c.eval;
  size("eval", "n", e.n);
  text("eval", "metric", e.metric);
  size("eval", "steps", e.steps);
  return f;
}

}  // namespace detail

inline RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  auto table = detail::fields(cfg);
  std::string section;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (!line.empty()) {
      const std::string where = "line " + std::to_string(line_no);
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(std::string(line), where + ": malformed section header");
        section = std::string(detail::trim(line.substr(1, line.size() - 2)));
        if (section != "network" && section != "training" && section != "data" && section != "eval")
          throw ConfigError(section, where + ": unknown section [" + section + "]");
      } else {
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(std::string(line), where + ": expected key = value");
        const std::string key(detail::trim(line.substr(0, eq)));
        const std::string_view value = detail::trim(line.substr(eq + 1));
        if (section.empty()) throw ConfigError(key, where + ": key '" + key + "' appears before any [section]");
        auto it = std::find_if(table.begin(), table.end(),
                               [&](const detail::Field& f) { return f.section == section && f.key == key; });
        if (it == table.end())
          throw ConfigError(key, where + ": unknown key '" + key + "' in section [" + section + "]");
        it->set(value);
      }
    }
    if (end == text.size()) break;
  }
  return cfg;
}

// Every key with its resolved value; parse_run_config(to_text(c)) == c.
inline std::string to_text(const RunConfig& c) {
  RunConfig copy = c;
  std::string out, section;
  for (const auto& f : detail::fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

// Compact mixture description:
//   point:x0=1            normal:mean=1,var=0.25       ring:k=8,radius=4,var=0.05
//   gmm:w=0.5,mean=-1,var=0.1/w=0.5,mean=1,var=0.1
// Vector entries are separated by ';', e.g. mean=1;2.
inline GmmSpec parse_gmm_spec(std::string_view spec) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) throw ValueError("gmm spec '" + std::string(spec) + "' lacks a 'kind:' prefix");
  const std::string kind(detail::trim(spec.substr(0, colon)));
  std::string_view body = spec.substr(colon + 1);

  auto vec = [](std::string_view s) {
    std::vector<double> v;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i)
      if (i == s.size() || s[i] == ';') {
        auto x = detail::parse_double(detail::trim(s.substr(start, i - start)));
        if (!x) throw ValueError("gmm spec: '" + std::string(s) + "' is not a number list");
        v.push_back(*x);
        start = i + 1;
      }
    return v;
  };
  auto kv = [](std::string_view group) {
    std::vector<std::pair<std::string, std::string_view>> out;
    for (auto cell : detail::split_commas(group)) {
      const auto eq = cell.find('=');
      if (eq == std::string_view::npos) throw ValueError("gmm spec: expected key=value, got '" + std::string(cell) + "'");
      out.emplace_back(std::string(detail::trim(cell.substr(0, eq))), detail::trim(cell.substr(eq + 1)));
    }
    return out;
  };
  auto scalar = [&vec](std::string_view s) {
    const auto v = vec(s);
    if (v.size() != 1) throw ValueError("gmm spec: expected a single number, got '" + std::string(s) + "'");
    return v[0];
  };

  GmmSpec g;
  if (kind == "point") {
    std::vector<double> x0;
    for (auto& [k, v] : kv(body)) {
      if (k != "x0") throw ValueError("gmm spec point: unknown key '" + k + "'");
      x0 = vec(v);
    }
    if (x0.empty()) throw ValueError("gmm spec point: x0 required");
    g = GmmSpec::point_mass(x0);
  } else if (kind == "normal") {
    std::vector<double> mean;
    double var = 1.0;
    for (auto& [k, v] : kv(body)) {
      if (k == "mean")
        mean = vec(v);
      else if (k == "var")
        var = scalar(v);
      else
        throw ValueError("gmm spec normal: unknown key '" + k + "'");
    }
    if (mean.empty()) throw ValueError("gmm spec normal: mean required");
    g = GmmSpec::gaussian(mean, var);
  } else if (kind == "ring") {
    double k_comp = 8, radius = 4, var = 0.05;
    for (auto& [k, v] : kv(body)) {
      if (k == "k")
        k_comp = scalar(v);
      else if (k == "radius")
        radius = scalar(v);
      else if (k == "var")
        var = scalar(v);
      else
        throw ValueError("gmm spec ring: unknown key '" + k + "'");
    }
    if (!(k_comp >= 1.0) || k_comp != std::floor(k_comp)) throw ValueError("gmm spec ring: k must be a positive integer");
    g = GmmSpec::ring(static_cast<std::size_t>(k_comp), radius, var);
  } else if (kind == "gmm") {
    std::size_t start = 0;
    for (std::size_t i = 0; i <= body.size(); ++i)
      if (i == body.size() || body[i] == '/') {
        GmmComponent comp;
        for (auto& [k, v] : kv(body.substr(start, i - start))) {
          if (k == "w")
            comp.weight = scalar(v);
          else if (k == "mean")
            comp.mean = vec(v);
          else if (k == "var")
            comp.variance = scalar(v);
          else
            throw ValueError("gmm spec gmm: unknown key '" + k + "'");
        }
        g.components.push_back(std::move(comp));
        start = i + 1;
      }
  } else {
    throw ValueError("gmm spec: unknown kind '" + kind + "'");
  }
  g.validate();
  return g;
}

// Builds the training set a config describes.
inline Dataset make_dataset(const DataConfig& d, std::uint64_t seed) {
  Philox rng(seed, 2);
  if (d.source == "gmm") {
    const GmmSpec g = parse_gmm_spec(d.gmm);
    return sample_gmm(g, d.n, rng, d.labeled);
  }
  if (d.source == "moons") {
    Dataset ds = make_moons(d.n, d.noise, rng);
    if (!d.labeled) ds.labels.reset(), ds.num_classes = 0;
    return ds;
  }
  if (d.source == "checkerboard") return make_checkerboard(d.n, d.noise, rng);
  if (d.source == "csv") {
    Dataset ds = load_csv(d.path);
    if (!d.labeled) ds.labels.reset(), ds.num_classes = 0;
    return ds;
  }
  throw ConfigError("source", "config key 'source': unknown data source '" + d.source + "'");
}

}  // namespace meanflow
