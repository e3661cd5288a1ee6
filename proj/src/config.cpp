#include "ssmev/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace ssmev {

using json = nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  void allow(std::initializer_list<std::string_view> keys) const {
    for (const auto& [key, value] : j_.items()) {
      bool known = false;
      for (auto k : keys) known = known || key == k;
      if (!known) throw ConfigError(field(key), "unknown field");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string field(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  void read(const char* key, std::size_t& out, std::size_t min = 0) const {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min)) {
      throw ConfigError(field(key), "expected an integer >= " + std::to_string(min));
    }
    out = v.get<std::size_t>();
  }

  void read_seed(const char* key, std::uint64_t& out) const {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(field(key), "expected a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }

  void read(const char* key, double& out) const {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      throw ConfigError(field(key), "expected a finite number");
    }
    out = v.get<double>();
  }

  void read(const char* key, bool& out) const {
    if (!has(key)) return;
    if (!at(key).is_boolean()) throw ConfigError(field(key), "expected true or false");
    out = at(key).get<bool>();
  }

  void read(const char* key, std::string& out) const {
    if (!has(key)) return;
    if (!at(key).is_string()) throw ConfigError(field(key), "expected a string");
    out = at(key).get<std::string>();
  }

  template <typename Parse, typename T>
  void read_enum(const char* key, T& out, Parse parse) const {
    std::string name;
    read(key, name);
    if (name.empty()) return;
    try {
      out = parse(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(field(key), e.what());
    }
  }

 private:
  const json& j_;
  std::string path_;
};

// Re-throws library validation failures as ConfigError under `path`.
template <typename F>
void validated(const std::string& path, F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

cplx read_complex(const json& v, const std::string& path) {
  if (v.is_number()) return {v.get<double>(), 0.0};
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
    return {v[0].get<double>(), v[1].get<double>()};
  }
  throw ConfigError(path, "expected a number or an [re, im] pair");
}

std::vector<cplx> read_complex_vector(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array");
  std::vector<cplx> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(read_complex(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

CMatrix read_complex_matrix(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ConfigError(path, "expected a non-empty array of rows");
  std::vector<cplx> data;
  std::size_t cols = 0;
  for (std::size_t r = 0; r < v.size(); ++r) {
    const auto row = read_complex_vector(v[r], path + "[" + std::to_string(r) + "]");
    if (r == 0) cols = row.size();
    if (row.size() != cols || cols == 0) {
      throw ConfigError(path + "[" + std::to_string(r) + "]", "rows must have equal, non-zero length");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return CMatrix(v.size(), cols, std::move(data));
}

std::vector<double> read_real_vector(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

ContinuousDiagSSM read_system(const json& j, const std::string& path, bool bidirectional) {
  Section s(j, path);
  s.allow({"lambda", "b_tilde", "c_tilde", "d", "log_delta"});
  for (const char* key : {"lambda", "b_tilde", "c_tilde", "d", "log_delta"}) {
    if (!s.has(key)) throw ConfigError(s.field(key), "missing");
  }
  ContinuousDiagSSM ssm;
  ssm.lambda = read_complex_vector(s.at("lambda"), s.field("lambda"));
  ssm.b_tilde = read_complex_matrix(s.at("b_tilde"), s.field("b_tilde"));
  ssm.c_tilde = read_complex_matrix(s.at("c_tilde"), s.field("c_tilde"));
  ssm.d = read_real_vector(s.at("d"), s.field("d"));
  ssm.log_delta = read_real_vector(s.at("log_delta"), s.field("log_delta"));
  validated(path, [&] { ssm.validate(bidirectional); });
  return ssm;
}

}  // namespace

ContinuousDiagSSM Config::build_ssm() const {
  if (system) return *system;
  return init_ssm(ssm_init);
}

Config parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<config>", std::string("invalid JSON: ") + e.what());
  }
  Config cfg;
  Section top(root, "");
  top.allow({"ssm", "bandlimit", "h2", "task", "model", "train"});

  if (top.has("ssm")) {
    Section s(top.at("ssm"), "ssm");
    s.allow({"states", "width", "blocks", "seed", "delta_min", "delta_max", "rule", "bidirectional",
             "system"});
    s.read("states", cfg.ssm_init.states, 1);
    s.read("width", cfg.ssm_init.width, 1);
    s.read("blocks", cfg.ssm_init.blocks, 1);
    s.read_seed("seed", cfg.ssm_init.seed);
    s.read("delta_min", cfg.ssm_init.delta_min);
    s.read("delta_max", cfg.ssm_init.delta_max);
    s.read("bidirectional", cfg.ssm_init.bidirectional);
    s.read_enum("rule", cfg.rule, parse_rule);
    if (cfg.ssm_init.states % cfg.ssm_init.blocks != 0) {
      throw ConfigError("ssm.blocks", "must divide ssm.states");
    }
    if (!(cfg.ssm_init.delta_min > 0.0)) throw ConfigError("ssm.delta_min", "must be > 0");
    if (!(cfg.ssm_init.delta_max > cfg.ssm_init.delta_min)) {
      throw ConfigError("ssm.delta_max", "must exceed ssm.delta_min");
    }
    if (s.has("system")) {
      cfg.system = read_system(s.at("system"), "ssm.system", cfg.ssm_init.bidirectional);
    }
  }

  if (top.has("bandlimit")) {
    Section s(top.at("bandlimit"), "bandlimit");
    s.allow({"enabled", "alpha"});
    s.read("enabled", cfg.bandlimit.enabled);
    s.read("alpha", cfg.bandlimit.alpha);
    if (!(cfg.bandlimit.alpha >= 0.0 && cfg.bandlimit.alpha <= 1.0)) {
      throw ConfigError("bandlimit.alpha", "must lie in [0, 1]");
    }
  }

  if (top.has("h2")) {
    Section s(top.at("h2"), "h2");
    s.allow({"omega_min", "omega_max", "n_points", "weight", "tail_correction", "squared_penalty"});
    H2Config h2;
    s.read("omega_min", h2.omega_min);
    s.read("omega_max", h2.omega_max);
    s.read("n_points", h2.n_points, 2);
    s.read("weight", h2.weight);
    s.read("tail_correction", h2.tail_correction);
    s.read("squared_penalty", h2.squared_penalty);
    if (!(h2.omega_min > 0.0)) throw ConfigError("h2.omega_min", "must be > 0");
    if (!(h2.omega_max > h2.omega_min)) throw ConfigError("h2.omega_max", "must exceed h2.omega_min");
    if (!(h2.weight >= 0.0)) throw ConfigError("h2.weight", "must be >= 0");
    cfg.h2 = h2;
  }

  if (top.has("task")) {
    Section s(top.at("task"), "task");
    s.allow({"kind", "base_rate_hz", "seq_len", "n_classes", "noise_std", "seed", "n_samples",
             "period_s", "period_jitter", "edge_width_s", "smoothing_s"});
    auto& t = cfg.task;
    s.read_enum("kind", t.kind, train::parse_task);
    s.read("base_rate_hz", t.base_rate_hz);
    s.read("seq_len", t.seq_len, 1);
    s.read("n_classes", t.n_classes, 2);
    s.read("noise_std", t.noise_std);
    s.read_seed("seed", t.seed);
    s.read("n_samples", t.n_samples, 1);
    s.read("period_s", t.period_s);
    s.read("period_jitter", t.period_jitter);
    s.read("edge_width_s", t.edge_width_s);
    s.read("smoothing_s", t.smoothing_s);
    validated("task", [&] { t.validate(); });
  }

  if (top.has("model")) {
    Section s(top.at("model"), "model");
    s.allow({"kind", "width", "states", "layers", "blocks", "rule", "delta_min", "delta_max", "seed"});
    auto& m = cfg.model;
    s.read_enum("kind", m.kind, train::parse_model_kind);
    s.read("width", m.width, 1);
    s.read("states", m.states, 1);
    s.read("layers", m.layers, 1);
    s.read("blocks", m.blocks, 1);
    s.read_enum("rule", m.rule, parse_rule);
    s.read("delta_min", m.delta_min);
    s.read("delta_max", m.delta_max);
    s.read_seed("seed", m.seed);
    if (m.states % m.blocks != 0) throw ConfigError("model.blocks", "must divide model.states");
    if (!(m.delta_min > 0.0) || !(m.delta_max > m.delta_min)) {
      throw ConfigError("model.delta_max", "need 0 < delta_min < delta_max");
    }
  }
  cfg.model.bandlimit = cfg.bandlimit;

  if (top.has("train")) {
    Section s(top.at("train"), "train");
    s.allow({"batch", "mixed_fraction", "lr", "steps", "seed", "tbptt_chunks", "grad_clip",
             "warmup_fraction"});
    auto& t = cfg.train;
    s.read("batch", t.batch, 1);
    s.read("mixed_fraction", t.mixed_fraction);
    s.read("lr", t.lr);
    s.read("steps", t.steps, 0);
    s.read_seed("seed", t.seed);
    s.read("tbptt_chunks", t.tbptt_chunks, 1);
    s.read("grad_clip", t.grad_clip);
    s.read("warmup_fraction", t.warmup_fraction);
    if (!(t.mixed_fraction >= 0.0 && t.mixed_fraction <= 1.0)) {
      throw ConfigError("train.mixed_fraction", "must lie in [0, 1]");
    }
    validated("train", [&] { t.validate(); });
  }
  cfg.train.h2 = cfg.h2;
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace ssmev
