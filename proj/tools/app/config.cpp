#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "rlab/analysis/analysis.hpp"
#include "rlab/errors.hpp"
#include "rlab/vit/config_json.hpp"

namespace rlab::cli {

namespace {

using nlohmann::json;

// Values built in code arrive as signed integers, parsed text as unsigned.
bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Strict view of one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    try {
      if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!non_negative_integer(v)) throw ConfigError(path(key) + ": expected an integer >= 0");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
      }
      v.get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  void reject(const char* key, const std::string& why) const {
    if (has(key)) throw ConfigError(path(key) + " is not allowed: " + why);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(where_ + ": unknown key \"" + key + "\"");
    }
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

data::DomainSpec parse_domain(const json& j, const std::string& where) {
  Section s(j, where);
  data::DomainSpec d;
  s.get("name", d.name);
  s.get("class_count", d.class_count);
  s.get("images_per_class", d.images_per_class);
  s.get("image_size", d.image_size);
  s.get("palette_rotation_deg", d.palette_rotation_deg);
  s.get("texture_family", d.texture_family);
  s.get("channel_drop", d.channel_drop);
  s.get("invert", d.invert);
  s.get("seed", d.seed);
  s.finish();
  d.validate();
  return d;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

bool has_bank(train::Method m) {
  return m == train::Method::learnable_registers || m == train::Method::random_registers;
}

}  // namespace

std::vector<data::DomainSpec> DataSection::resolved() const {
  return domains.empty() ? data::default_suite(seed) : domains;
}

std::vector<double> AnalysisSection::resolved_sigmas() const {
  return sigmas.empty() ? analysis::geometric_grid(1e-3, 1.0, 7) : sigmas;
}

vit::ViTConfig ExperimentConfig::model_for_training() const {
  vit::ViTConfig base = model;
  if (reap_tau) base.tau_init = *reap_tau;
  return train::model_config_for(method, base, train);
}

std::string ExperimentConfig::train_hash() const {
  json j = to_json(*this);
  j.erase("eval");
  j.erase("analysis");
  j.erase("seeds");
  j.erase("paths");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return std::string(buf, 8);
}

std::string ExperimentConfig::run_name() const { return method_name + "-" + train_hash(); }

ExperimentConfig parse_config(const json& j) {
  Section top(j, "config");
  ExperimentConfig c;

  int version = 0;
  if (!top.has("schema_version")) throw ConfigError("config.schema_version is required");
  top.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config.schema_version " + std::to_string(version) + " is not supported (" +
                      std::to_string(kConfigSchemaVersion) + " expected)");
  }

  top.get("method", c.method_name);
  c.method = train::parse_method(c.method_name);
  const bool bank = has_bank(c.method);
  const bool reap_knobs = train::uses_reap_knobs(c.method);
  const bool perturb = train::is_perturbation(c.method);

  if (top.has("model")) {
    Section m(top.raw("model"), "model");
    m.reject("register_mode", "the method decides the register mode");
    if (!bank) {
      m.reject("register_count", c.method_name + " has no register bank");
      m.reject("register_depth", c.method_name + " has no register bank");
    }
    if (c.method != train::Method::random_registers) {
      m.reject("tau_init", c.method_name + " has no random register bank");
    }
    m.reject("split_tau", "set reap.split_tau instead");
    vit::ViTConfig parsed;
    vit::from_json(top.raw("model"), parsed);
    c.model = parsed;
  }

  if (top.has("reap")) {
    if (!reap_knobs) {
      throw ConfigError("reap knobs are not allowed for method " + c.method_name);
    }
    Section r(top.raw("reap"), "reap");
    r.get("anchor_ratio", c.reap.anchor_ratio);
    r.get("drop_ratio", c.reap.drop_ratio);
    if (c.method != train::Method::reap) {
      r.reject("extra_registers", c.method_name + " appends no registers");
      r.reject("tau_init", c.method_name + " uses no random registers");
      r.reject("split_tau", c.method_name + " uses no random registers");
    }
    r.get("extra_registers", c.reap.extra_registers);
    if (r.has("tau_init")) {
      double tau = 0.0;
      r.get("tau_init", tau);
      c.reap_tau = tau;
    }
    r.get("split_tau", c.model.split_tau);
    r.finish();
  }

  if (top.has("perturb")) {
    if (!perturb) throw ConfigError("perturb is not allowed for method " + c.method_name);
    Section p(top.raw("perturb"), "perturb");
    p.get("sigma", c.train.perturb_sigma);
    p.finish();
  }

  if (top.has("train")) {
    Section t(top.raw("train"), "train");
    t.get("epochs", c.train.epochs);
    t.get("batch_size", c.train.batch_size);
    t.get("lr_backbone", c.train.lr_backbone);
    t.get("lr_head", c.train.lr_head);
    t.finish();
  }

  if (top.has("data")) {
    Section d(top.raw("data"), "data");
    d.get("seed", c.data.seed);
    if (d.has("domains")) {
      const json& list = d.raw("domains");
      if (!list.is_array() || list.size() < 2) {
        throw ConfigError("data.domains: expected a source and at least one target");
      }
      std::set<std::string> names;
      for (std::size_t i = 0; i < list.size(); ++i) {
        c.data.domains.push_back(parse_domain(list[i], "data.domains[" + std::to_string(i) + "]"));
        if (!names.insert(c.data.domains.back().name).second) {
          throw ConfigError("data.domains: duplicate name \"" + c.data.domains.back().name + "\"");
        }
      }
    }
    d.finish();
  }

  if (top.has("eval")) {
    Section e(top.raw("eval"), "eval");
    e.get("n_way", c.eval.n_way);
    e.get("k_shot", c.eval.k_shot);
    e.get("q_queries", c.eval.q_queries);
    e.get("episodes", c.eval.episodes);
    if (e.has("modes")) {
      const json& modes = e.raw("modes");
      if (!modes.is_array() || modes.empty()) throw ConfigError("eval.modes: expected a list");
      c.eval.plain = c.eval.finetune = false;
      for (const auto& m : modes) {
        if (!m.is_string()) throw ConfigError("eval.modes: expected strings");
        const auto mode = fewshot::parse_eval_mode(m.get<std::string>());
        (mode == fewshot::EvalMode::plain ? c.eval.plain : c.eval.finetune) = true;
      }
    }
    if (e.has("finetune")) {
      Section f(e.raw("finetune"), "eval.finetune");
      auto& ft = c.eval.finetune_cfg;
      f.get("steps", ft.steps);
      f.get("lr_registers", ft.lr_registers);
      f.get("lr_head", ft.lr_head);
      f.get("unfreeze_backbone", ft.unfreeze_backbone);
      f.get("lr_backbone", ft.lr_backbone);
      if (f.has("registers")) {
        std::string mode;
        f.get("registers", mode);
        ft.registers = fewshot::parse_finetune_registers(mode);
      }
      f.get("register_count", ft.register_count);
      f.get("random_tau", ft.random_tau);
      f.finish();
    }
    e.finish();
  }

  if (top.has("analysis")) {
    Section a(top.raw("analysis"), "analysis");
    if (a.has("sigmas")) {
      const json& s = a.raw("sigmas");
      if (!s.is_array() || s.empty()) throw ConfigError("analysis.sigmas: expected a list");
      for (const auto& v : s) {
        if (!v.is_number()) throw ConfigError("analysis.sigmas: expected numbers");
        c.analysis.sigmas.push_back(v.get<double>());
      }
    }
    a.get("draws", c.analysis.draws);
    a.get("per_block", c.analysis.per_block);
    a.get("cka_samples", c.analysis.cka_samples);
    a.get("heatmap_images", c.analysis.heatmap_images);
    a.finish();
  }

  if (top.has("seeds")) {
    const json& s = top.raw("seeds");
    if (!s.is_array() || s.empty()) throw ConfigError("config.seeds: expected a non-empty list");
    c.seeds.clear();
    std::set<std::uint64_t> seen;
    for (const auto& v : s) {
      if (!non_negative_integer(v)) throw ConfigError("config.seeds: expected integers >= 0");
      if (!seen.insert(v.get<std::uint64_t>()).second) {
        throw ConfigError("config.seeds: duplicate seed " + v.dump());
      }
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }

  if (top.has("paths")) {
    Section p(top.raw("paths"), "paths");
    p.get("data_dir", c.data_dir);
    p.get("runs_dir", c.runs_dir);
    p.finish();
  }
  top.finish();

  // Cross-section checks, before any compute.
  c.model_for_training().validate();
  c.train.validate();
  const auto domains = c.data.resolved();
  for (const auto& d : domains) d.validate();
  if (domains.front().class_count != c.model.n_classes) {
    throw ConfigError("model.n_classes = " + std::to_string(c.model.n_classes) +
                      " but the source domain has " +
                      std::to_string(domains.front().class_count) + " classes");
  }
  for (const auto& d : domains) {
    if (d.image_size != c.model.image_size) {
      throw ConfigError("domain " + d.name + " has image_size " + std::to_string(d.image_size) +
                        ", model expects " + std::to_string(c.model.image_size));
    }
  }
  if (c.eval.n_way < 2 || c.eval.k_shot == 0 || c.eval.q_queries == 0 || c.eval.episodes == 0) {
    throw ConfigError("eval: need n_way >= 2 and k_shot, q_queries, episodes >= 1");
  }
  c.eval.finetune_cfg.validate();
  const auto sigmas = c.analysis.resolved_sigmas();
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] >= 0.0) || (i > 0 && sigmas[i] < sigmas[i - 1])) {
      throw ConfigError("analysis.sigmas must be >= 0 and ascending");
    }
  }
  if (c.analysis.draws == 0) throw ConfigError("analysis.draws must be >= 1");
  if (c.analysis.cka_samples < 2) throw ConfigError("analysis.cka_samples must be >= 2");
  if (c.data_dir.empty() || c.runs_dir.empty()) throw ConfigError("paths must be non-empty");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return parse_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json domain_to_json(const data::DomainSpec& d) {
  return json{{"name", d.name},
              {"class_count", d.class_count},
              {"images_per_class", d.images_per_class},
              {"image_size", d.image_size},
              {"palette_rotation_deg", d.palette_rotation_deg},
              {"texture_family", d.texture_family},
              {"channel_drop", d.channel_drop},
              {"invert", d.invert},
              {"seed", d.seed}};
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["method"] = c.method_name;

  json model;
  vit::to_json(model, c.model);
  model.erase("register_mode");
  model.erase("split_tau");
  if (!has_bank(c.method)) {
    model.erase("register_count");
    model.erase("register_depth");
  }
  if (c.method != train::Method::random_registers) model.erase("tau_init");
  j["model"] = model;

  if (train::uses_reap_knobs(c.method)) {
    json r{{"anchor_ratio", c.reap.anchor_ratio}, {"drop_ratio", c.reap.drop_ratio}};
    if (c.method == train::Method::reap) {
      r["extra_registers"] = c.reap.extra_registers;
      r["tau_init"] = c.reap_tau.value_or(c.model.tau_init);
      r["split_tau"] = c.model.split_tau;
    }
    j["reap"] = r;
  }
  if (train::is_perturbation(c.method)) j["perturb"] = {{"sigma", c.train.perturb_sigma}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr_backbone", c.train.lr_backbone},
                {"lr_head", c.train.lr_head}};

  json domains = json::array();
  for (const auto& d : c.data.resolved()) domains.push_back(domain_to_json(d));
  j["data"] = {{"seed", c.data.seed}, {"domains", domains}};

  json modes = json::array();
  if (c.eval.plain) modes.push_back("plain");
  if (c.eval.finetune) modes.push_back("finetune");
  const auto& ft = c.eval.finetune_cfg;
  j["eval"] = {{"n_way", c.eval.n_way},
               {"k_shot", c.eval.k_shot},
               {"q_queries", c.eval.q_queries},
               {"episodes", c.eval.episodes},
               {"modes", modes},
               {"finetune",
                {{"steps", ft.steps},
                 {"lr_registers", ft.lr_registers},
                 {"lr_head", ft.lr_head},
                 {"unfreeze_backbone", ft.unfreeze_backbone},
                 {"lr_backbone", ft.lr_backbone},
                 {"registers", std::string(fewshot::to_string(ft.registers))},
                 {"register_count", ft.register_count},
                 {"random_tau", ft.random_tau}}}};
  j["analysis"] = {{"sigmas", c.analysis.resolved_sigmas()},
                   {"draws", c.analysis.draws},
                   {"per_block", c.analysis.per_block},
                   {"cka_samples", c.analysis.cka_samples},
                   {"heatmap_images", c.analysis.heatmap_images}};
  j["seeds"] = c.seeds;
  j["paths"] = {{"data_dir", c.data_dir}, {"runs_dir", c.runs_dir}};
  return j;
}

}  // namespace rlab::cli
