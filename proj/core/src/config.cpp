#include "red/config.hpp"

#include <cmath>
#include <set>

#include "json.hpp"
#include "red/error.hpp"

namespace red {

using nlohmann::json;

namespace {

// Consumes keys of one JSON object and rejects leftovers.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    read(*it, out, where(key));
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key \"" + where(key.c_str()) + "\"");
    }
  }

  std::string where(const char* key = nullptr) const {
    if (!key) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  static void read(const json& v, bool& out, const std::string& p) {
    if (!v.is_boolean()) throw ConfigError(p + " must be a boolean");
    out = v.get<bool>();
  }
  static void read(const json& v, std::string& out, const std::string& p) {
    if (!v.is_string()) throw ConfigError(p + " must be a string");
    out = v.get<std::string>();
  }
  static void read(const json& v, double& out, const std::string& p) {
    if (v.is_string() && (v == "inf" || v == "infinity")) {
      out = std::numeric_limits<double>::infinity();
      return;
    }
    if (!v.is_number()) throw ConfigError(p + " must be a number");
    out = v.get<double>();
  }
  static_assert(std::is_same_v<std::size_t, std::uint64_t>);
  static void read(const json& v, std::size_t& out, const std::string& p) {
    if (!v.is_number_unsigned()) throw ConfigError(p + " must be a non-negative integer");
    out = v.get<std::size_t>();
  }
  template <typename T>
  static void read(const json& v, std::vector<T>& out, const std::string& p) {
    if (!v.is_array()) throw ConfigError(p + " must be an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T x{};
      read(v[i], x, p + "[" + std::to_string(i) + "]");
      out.push_back(x);
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

DatasetSource source_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  DatasetSource s;
  s.preset.clear();
  r.get("preset", s.preset);
  r.get("path", s.path);
  if (r.has("seed")) {
    std::uint64_t seed = 0;
    r.get("seed", seed);
    s.seed = seed;
  }
  r.get("n_trajectories", s.n_trajectories);
  r.finish();
  if (s.preset.empty() == s.path.empty()) {
    throw ConfigError(path + " needs exactly one of \"preset\" or \"path\"");
  }
  return s;
}

json source_to_json(const DatasetSource& s) {
  json j = {{"preset", s.preset}, {"path", s.path}, {"n_trajectories", s.n_trajectories}};
  if (s.seed) j["seed"] = *s.seed;
  return j;
}

json number_or_inf(double v) { return std::isinf(v) ? json("inf") : json(v); }

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["root_seed"] = c.root_seed;
  j["dataset"] = source_to_json(c.dataset);
  j["tasks"] = json::array();
  for (const auto& t : c.tasks) j["tasks"].push_back(source_to_json(t));
  const auto& a = c.algo;
  j["algo"] = {{"family", to_string(a.family)},
               {"gamma", a.gamma},
               {"tau_expectile", a.tau_expectile},
               {"beta_awr", a.beta_awr},
               {"w_max", a.w_max},
               {"cql_weight", a.cql_weight},
               {"bc_weight", a.bc_weight},
               {"target_update_period", a.target_update_period},
               {"batch_size", a.batch_size},
               {"total_steps", a.total_steps},
               {"lr", a.lr},
               {"hidden", a.hidden},
               {"activation", nn::to_string(a.activation)}};
  j["sampler"] = {{"mode", to_string(c.sampler.mode)},
                  {"alpha", c.sampler.alpha},
                  {"p_base", c.sampler.p_base},
                  {"fraction", c.sampler.fraction}};
  j["eval"] = {{"eval_every", c.eval.eval_every},
               {"episodes_per_eval", c.eval.episodes_per_eval},
               {"final_k", c.eval.final_k},
               {"seeds", c.eval.seeds}};
  if (c.dered) {
    j["dered"] = {{"stage1_steps", c.dered->stage1_steps},
                  {"stage2_steps", c.dered->stage2_steps},
                  {"backbone_lr_mult", c.dered->backbone_lr_mult},
                  {"freeze_head", c.dered->freeze_head}};
  }
  j["sweep_values"] = json::array();
  for (double v : c.sweep_values) j["sweep_values"].push_back(number_or_inf(v));
  j["jobs"] = c.jobs;
  return j;
}

// Schema document: defaults with every optional section present.
json schema_json() {
  ExperimentConfig c;
  c.dered = DeredConfig{};
  c.dataset.seed = 0;
  json j = config_to_json(c);
  j["tasks"] = json::array({source_to_json(c.dataset)});
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  algo.validate();
  sampler.validate();
  if (eval.eval_every == 0) throw ConfigError("eval.eval_every must be positive");
  if (eval.episodes_per_eval == 0) throw ConfigError("eval.episodes_per_eval must be positive");
  if (eval.final_k == 0) throw ConfigError("eval.final_k must be >= 1");
  if (eval.seeds.empty()) throw ConfigError("eval.seeds must be non-empty");
  if (sweep_values.empty()) throw ConfigError("sweep_values must be non-empty");
  for (double v : sweep_values) {
    if (!(v >= 0.0)) throw ConfigError("sweep_values must be >= 0 (or \"inf\")");
  }
  if (jobs == 0) throw ConfigError("jobs must be positive");
  if (dered) {
    if (!(dered->backbone_lr_mult >= 0.0)) throw ConfigError("dered.backbone_lr_mult must be >= 0");
  }
}

std::vector<DatasetSource> ExperimentConfig::task_list() const {
  return tasks.empty() ? std::vector<DatasetSource>{dataset} : tasks;
}

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader root(j, "");
  root.get("root_seed", c.root_seed);
  if (root.has("dataset")) c.dataset = source_from_json(root.at("dataset"), "dataset");
  if (root.has("tasks")) {
    const auto& t = root.at("tasks");
    if (!t.is_array()) throw ConfigError("tasks must be an array");
    for (std::size_t i = 0; i < t.size(); ++i) {
      c.tasks.push_back(source_from_json(t[i], "tasks[" + std::to_string(i) + "]"));
    }
  }
  if (root.has("algo")) {
    ObjectReader r(root.at("algo"), "algo");
    std::string family = to_string(c.algo.family);
    std::string act = nn::to_string(c.algo.activation);
    r.get("family", family);
    r.get("gamma", c.algo.gamma);
    r.get("tau_expectile", c.algo.tau_expectile);
    r.get("beta_awr", c.algo.beta_awr);
    r.get("w_max", c.algo.w_max);
    r.get("cql_weight", c.algo.cql_weight);
    r.get("bc_weight", c.algo.bc_weight);
    r.get("target_update_period", c.algo.target_update_period);
    r.get("batch_size", c.algo.batch_size);
    r.get("total_steps", c.algo.total_steps);
    r.get("lr", c.algo.lr);
    r.get("hidden", c.algo.hidden);
    r.get("activation", act);
    r.finish();
    c.algo.family = parse_family(family);
    try {
      c.algo.activation = nn::parse_activation(act);
    } catch (const Error& e) {
      throw ConfigError(std::string("algo.activation: ") + e.what());
    }
  }
  if (root.has("sampler")) {
    ObjectReader r(root.at("sampler"), "sampler");
    std::string mode = to_string(c.sampler.mode);
    r.get("mode", mode);
    r.get("alpha", c.sampler.alpha);
    r.get("p_base", c.sampler.p_base);
    r.get("fraction", c.sampler.fraction);
    r.finish();
    c.sampler.mode = parse_sampler_mode(mode);
  }
  if (root.has("eval")) {
    ObjectReader r(root.at("eval"), "eval");
    r.get("eval_every", c.eval.eval_every);
    r.get("episodes_per_eval", c.eval.episodes_per_eval);
    r.get("final_k", c.eval.final_k);
    r.get("seeds", c.eval.seeds);
    r.finish();
  }
  if (root.has("dered")) {
    ObjectReader r(root.at("dered"), "dered");
    DeredConfig d;
    r.get("stage1_steps", d.stage1_steps);
    r.get("stage2_steps", d.stage2_steps);
    r.get("backbone_lr_mult", d.backbone_lr_mult);
    r.get("freeze_head", d.freeze_head);
    r.finish();
    c.dered = d;
  }
  root.get("sweep_values", c.sweep_values);
  root.get("jobs", c.jobs);
  root.finish();
  c.validate();
  return c;
}

std::string experiment_config_json(const ExperimentConfig& cfg, int indent) {
  return config_to_json(cfg).dump(indent);
}

namespace {

bool type_compatible(const json& schema, const json& v) {
  if (schema.is_boolean()) return v.is_boolean();
  if (schema.is_number_unsigned()) return v.is_number_unsigned();
  if (schema.is_number()) return v.is_number();
  if (schema.is_string()) {
    // Numeric fields written as "inf" in the schema accept numbers too.
    return v.is_string() || (schema == "inf" && v.is_number());
  }
  if (schema.is_array()) {
    if (!v.is_array()) return false;
    if (schema.empty()) return true;
    for (const auto& e : v) {
      const bool ok = type_compatible(schema.front(), e) ||
                      (schema.front().is_number() && e == "inf") ||
                      (schema.front().is_number() && e.is_number());
      if (!ok) return false;
    }
    return true;
  }
  if (schema.is_object()) return v.is_object();
  return false;
}

}  // namespace

std::string apply_overrides(std::string_view json_text, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const json schema = schema_json();
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override \"" + ov + "\" must look like key.path=value");
    }
    const std::string path = ov.substr(0, eq);
    const std::string text = ov.substr(eq + 1);
    std::vector<std::string> keys;
    for (std::size_t start = 0;;) {
      const auto dot = path.find('.', start);
      keys.push_back(path.substr(start, dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    const json* node = &schema;
    for (const auto& k : keys) {
      if (!node->is_object() || !node->contains(k)) {
        throw ConfigError("unknown config key \"" + path + "\"");
      }
      node = &(*node)[k];
    }
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    if (!type_compatible(*node, value)) {
      throw ConfigError("override \"" + path + "\" has the wrong type (expected " +
                        std::string(node->type_name()) + ")");
    }
    json* target = &doc;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
      if (!target->contains(keys[i])) (*target)[keys[i]] = json::object();
      target = &(*target)[keys[i]];
    }
    (*target)[keys.back()] = value;
  }
  return doc.dump();
}

std::string describe_source(const DatasetSource& src) {
  return src.preset.empty() ? src.path : src.preset;
}

}  // namespace red
