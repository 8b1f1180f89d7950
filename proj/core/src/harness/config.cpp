#include "dogfit/harness/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <toml.hpp>

namespace dogfit::harness {
namespace {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Reads typed keys from one table and remembers which keys were consumed so
// that leftovers (typos) can be reported.
class Section {
 public:
  Section(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

  bool present() const { return table_ != nullptr; }

  template <typename T>
  void get(std::string_view key, T& out) {
    if (!table_) return;
    used_.insert(std::string(key));
    const toml::node* node = table_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value_exact<bool>();
      if (!v) fail(key, "a boolean");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = node->value_exact<std::string>();
      if (!v) fail(key, "a string");
      out = *v;
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v) fail(key, "a number");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      auto v = node->value_exact<std::int64_t>();
      if (!v || *v < 0) fail(key, "a non-negative integer");
      out = static_cast<std::uint64_t>(*v);
    } else {
      auto v = node->value_exact<std::int64_t>();
      if (!v) fail(key, "an integer");
      out = static_cast<T>(*v);
    }
  }

  template <typename T>
  void get_list(std::string_view key, std::vector<T>& out) {
    if (!table_) return;
    used_.insert(std::string(key));
    const toml::node* node = table_->get(key);
    if (!node) return;
    const toml::array* arr = node->as_array();
    if (!arr) fail(key, "an array");
    std::vector<T> result;
    for (const toml::node& el : *arr) {
      if constexpr (std::is_floating_point_v<T>) {
        auto v = el.value<double>();
        if (!v) fail(key, "an array of numbers");
        result.push_back(*v);
      } else if constexpr (std::is_same_v<T, std::string>) {
        auto v = el.value_exact<std::string>();
        if (!v) fail(key, "an array of strings");
        result.push_back(*v);
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        auto v = el.value_exact<std::int64_t>();
        if (!v || *v < 0) fail(key, "an array of non-negative integers");
        result.push_back(static_cast<std::uint64_t>(*v));
      } else {
        auto v = el.value_exact<std::int64_t>();
        if (!v) fail(key, "an array of integers");
        result.push_back(static_cast<T>(*v));
      }
    }
    out = std::move(result);
  }

  const toml::table* subtable(std::string_view key) {
    if (!table_) return nullptr;
    used_.insert(std::string(key));
    const toml::node* node = table_->get(key);
    if (!node) return nullptr;
    const toml::table* t = node->as_table();
    if (!t) fail(key, "a table");
    return t;
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!used_.count(std::string(k.str()))) {
        throw ConfigError("unknown config key '" + qualified(k.str()) + "'");
      }
    }
  }

 private:
  std::string qualified(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }
  [[noreturn]] void fail(std::string_view key, const char* expected) const {
    throw ConfigError("config key '" + qualified(key) + "' must be " + expected);
  }

  const toml::table* table_;
  std::string path_;
  std::set<std::string> used_;
};

Section section(Section& root, std::string_view name) {
  return Section(root.subtable(name), std::string(name));
}

void read_guidance(Section& s, GuidanceConfig& g) {
  s.get("w", g.w);
  s.get("lambda", g.lambda);
  s.get("tau_s", g.tau_s);
  s.get("tau_c", g.tau_c);
  s.get("label_dropout", g.label_dropout);
}

toml::table guidance_table(const GuidanceConfig& g) {
  return toml::table{{"w", g.w},
                     {"lambda", g.lambda},
                     {"tau_s", g.tau_s},
                     {"tau_c", g.tau_c},
                     {"label_dropout", g.label_dropout}};
}

template <typename T>
toml::array to_array(const std::vector<T>& v) {
  toml::array a;
  for (const T& x : v) {
    if constexpr (std::is_same_v<T, std::uint64_t>) {
      a.push_back(static_cast<std::int64_t>(x));
    } else {
      a.push_back(x);
    }
  }
  return a;
}

}  // namespace

void ExperimentConfig::validate() const {
  domain.validate();
  make_schedule(schedule.T, schedule.beta_min, schedule.beta_max);
  if (model.hidden.empty()) throw std::invalid_argument("model.hidden needs at least one layer");
  for (int h : model.hidden) {
    if (h <= 0) throw std::invalid_argument("model.hidden widths must be positive");
  }
  if (model.embed_dim <= 0 || model.embed_dim % 2 != 0) {
    throw std::invalid_argument("model.embed_dim must be a positive even number");
  }
  if (pretrain.steps < 0 || pretrain.batch_size <= 0 || !(pretrain.lr > 0.0)) {
    throw std::invalid_argument("pretrain needs steps >= 0, batch_size > 0 and lr > 0");
  }
  if (!(pretrain.lr_final_frac > 0.0 && pretrain.lr_final_frac <= 1.0)) {
    throw std::invalid_argument("pretrain.lr_final_frac must lie in (0,1]");
  }
  if (!(pretrain.label_dropout >= 0.0 && pretrain.label_dropout < 1.0)) {
    throw std::invalid_argument("pretrain.label_dropout must lie in [0,1)");
  }
  if (pretrain.gate_probes <= 0) throw std::invalid_argument("pretrain.gate_probes must be > 0");
  if (finetune.steps < 0 || finetune.batch_size <= 0 || !(finetune.lr > 0.0)) {
    throw std::invalid_argument("finetune needs steps >= 0, batch_size > 0 and lr > 0");
  }
  if (finetune.seeds.empty()) throw std::invalid_argument("finetune.seeds must be nonempty");
  if (methods.empty()) throw std::invalid_argument("guidance.methods must be nonempty");
  for (Method m : methods) guidance_for(m).validate();
  if (sampling.sampler != "ddim" && sampling.sampler != "ddpm") {
    throw std::invalid_argument("sampling.sampler must be 'ddim' or 'ddpm'");
  }
  if (sampling.steps <= 0 || sampling.n <= 0) {
    throw std::invalid_argument("sampling.steps and sampling.n must be positive");
  }
  for (int s : sampling.step_sweep) {
    if (s <= 0) throw std::invalid_argument("sampling.step_sweep entries must be positive");
  }
  for (double w : sampling.w_sweep) {
    if (!(w >= 1.0)) throw std::invalid_argument("sampling.w_sweep entries must be >= 1");
  }
  if (eval.k <= 0 || !(eval.quantile > 0.0 && eval.quantile < 1.0) || eval.n_real < 2 ||
      eval.support_reference_n <= 0) {
    throw std::invalid_argument("eval settings out of range");
  }
  if (verify.probes <= 0) throw std::invalid_argument("verify.probes must be positive");
}

GuidanceConfig ExperimentConfig::guidance_for(Method m) const {
  auto it = overrides.find(m);
  GuidanceConfig g = it != overrides.end() ? it->second : guidance;
  g.method = m;
  if (g.tau_s < 0) g.tau_s = finetune.steps / 2;
  if (!needs_labels(m)) g.label_dropout = 0.0;
  return g;
}

ExperimentConfig parse_config(std::string_view toml_text) {
  toml::table root_table;
  try {
    root_table = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "TOML parse error: " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(os.str());
  }
  ExperimentConfig cfg;
  Section root(&root_table, "");

  {
    Section s = section(root, "domain");
    std::string kind = to_string(cfg.domain.kind);
    s.get("kind", kind);
    cfg.domain.kind = domain_kind_from_string(kind);
    s.get("num_source_components", cfg.domain.num_source_components);
    s.get("num_target_components", cfg.domain.num_target_components);
    s.get("spacing", cfg.domain.spacing);
    std::vector<double> shift = {cfg.domain.shift.x(), cfg.domain.shift.y()};
    s.get_list("shift", shift);
    if (shift.size() != 2) throw ConfigError("domain.shift must have two entries");
    cfg.domain.shift = Point(shift[0], shift[1]);
    s.get("component_cov", cfg.domain.component_cov);
    s.get("n_source", cfg.domain.n_source);
    s.get("n_target", cfg.domain.n_target);
    s.get("labeled", cfg.domain.labeled);
    s.get("seed", cfg.data_seed);
    s.finish();
  }
  {
    Section s = section(root, "schedule");
    s.get("T", cfg.schedule.T);
    s.get("beta_min", cfg.schedule.beta_min);
    s.get("beta_max", cfg.schedule.beta_max);
    s.finish();
  }
  {
    Section s = section(root, "model");
    s.get_list("hidden", cfg.model.hidden);
    s.get("embed_dim", cfg.model.embed_dim);
    s.finish();
  }
  {
    Section s = section(root, "pretrain");
    s.get("steps", cfg.pretrain.steps);
    s.get("batch_size", cfg.pretrain.batch_size);
    s.get("lr", cfg.pretrain.lr);
    s.get("lr_final_frac", cfg.pretrain.lr_final_frac);
    s.get("label_dropout", cfg.pretrain.label_dropout);
    s.get("seed", cfg.pretrain.seed);
    s.get("gate_threshold", cfg.pretrain.gate_threshold);
    s.get("gate_probes", cfg.pretrain.gate_probes);
    s.finish();
  }
  {
    Section s = section(root, "finetune");
    s.get("steps", cfg.finetune.steps);
    s.get("batch_size", cfg.finetune.batch_size);
    s.get("lr", cfg.finetune.lr);
    s.get_list("seeds", cfg.finetune.seeds);
    s.finish();
  }
  {
    Section s = section(root, "guidance");
    std::vector<std::string> names;
    for (Method m : cfg.methods) names.push_back(to_string(m));
    s.get_list("methods", names);
    cfg.methods.clear();
    for (const auto& n : names) cfg.methods.push_back(method_from_string(n));
    read_guidance(s, cfg.guidance);
    if (const toml::table* ov = s.subtable("overrides")) {
      for (const auto& [k, v] : *ov) {
        const Method m = method_from_string(k.str());
        const toml::table* t = v.as_table();
        if (!t) throw ConfigError("guidance.overrides." + std::string(k.str()) + " must be a table");
        GuidanceConfig g = cfg.guidance;
        Section os(t, "guidance.overrides." + std::string(k.str()));
        read_guidance(os, g);
        os.finish();
        cfg.overrides[m] = g;
      }
    }
    s.finish();
  }
  {
    Section s = section(root, "sampling");
    s.get("sampler", cfg.sampling.sampler);
    s.get("steps", cfg.sampling.steps);
    s.get("n", cfg.sampling.n);
    s.get_list("step_sweep", cfg.sampling.step_sweep);
    s.get_list("w_sweep", cfg.sampling.w_sweep);
    s.finish();
  }
  {
    Section s = section(root, "eval");
    s.get("k", cfg.eval.k);
    s.get("quantile", cfg.eval.quantile);
    s.get("bandwidth", cfg.eval.bandwidth);
    s.get("n_real", cfg.eval.n_real);
    s.get("support_reference_n", cfg.eval.support_reference_n);
    s.finish();
  }
  {
    Section s = section(root, "verify");
    s.get("probes", cfg.verify.probes);
    s.get_list("internalization_w", cfg.verify.internalization_w);
    s.get("linearity_tolerance", cfg.verify.linearity_tolerance);
    s.get("ablation", cfg.verify.ablation);
    s.finish();
  }
  {
    Section s = section(root, "output");
    std::string dir = cfg.output_dir.string();
    s.get("dir", dir);
    cfg.output_dir = dir;
    s.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_text(const ExperimentConfig& cfg) {
  toml::table domain{{"kind", to_string(cfg.domain.kind)},
                     {"num_source_components", cfg.domain.num_source_components},
                     {"num_target_components", cfg.domain.num_target_components},
                     {"spacing", cfg.domain.spacing},
                     {"shift", toml::array{cfg.domain.shift.x(), cfg.domain.shift.y()}},
                     {"component_cov", cfg.domain.component_cov},
                     {"n_source", cfg.domain.n_source},
                     {"n_target", cfg.domain.n_target},
                     {"labeled", cfg.domain.labeled},
                     {"seed", static_cast<std::int64_t>(cfg.data_seed)}};
  toml::table schedule{{"T", cfg.schedule.T},
                       {"beta_min", cfg.schedule.beta_min},
                       {"beta_max", cfg.schedule.beta_max}};
  toml::table model{{"hidden", to_array(cfg.model.hidden)}, {"embed_dim", cfg.model.embed_dim}};
  toml::table pretrain{{"steps", cfg.pretrain.steps},
                       {"batch_size", cfg.pretrain.batch_size},
                       {"lr", cfg.pretrain.lr},
                       {"lr_final_frac", cfg.pretrain.lr_final_frac},
                       {"label_dropout", cfg.pretrain.label_dropout},
                       {"seed", static_cast<std::int64_t>(cfg.pretrain.seed)},
                       {"gate_threshold", cfg.pretrain.gate_threshold},
                       {"gate_probes", cfg.pretrain.gate_probes}};
  toml::table finetune{{"steps", cfg.finetune.steps},
                       {"batch_size", cfg.finetune.batch_size},
                       {"lr", cfg.finetune.lr},
                       {"seeds", to_array(cfg.finetune.seeds)}};
  toml::table guidance = guidance_table(cfg.guidance);
  toml::array methods;
  for (Method m : cfg.methods) methods.push_back(to_string(m));
  guidance.insert("methods", std::move(methods));
  if (!cfg.overrides.empty()) {
    toml::table ov;
    for (const auto& [m, g] : cfg.overrides) ov.insert(to_string(m), guidance_table(g));
    guidance.insert("overrides", std::move(ov));
  }
  toml::table sampling{{"sampler", cfg.sampling.sampler},
                       {"steps", cfg.sampling.steps},
                       {"n", cfg.sampling.n},
                       {"step_sweep", to_array(cfg.sampling.step_sweep)},
                       {"w_sweep", to_array(cfg.sampling.w_sweep)}};
  toml::table eval{{"k", cfg.eval.k},
                   {"quantile", cfg.eval.quantile},
                   {"bandwidth", cfg.eval.bandwidth},
                   {"n_real", cfg.eval.n_real},
                   {"support_reference_n", cfg.eval.support_reference_n}};
  toml::table verify{{"probes", cfg.verify.probes},
                     {"internalization_w", to_array(cfg.verify.internalization_w)},
                     {"linearity_tolerance", cfg.verify.linearity_tolerance},
                     {"ablation", cfg.verify.ablation}};
  // The output location is not part of the experiment identity.
  toml::table root{{"domain", std::move(domain)},     {"schedule", std::move(schedule)},
                   {"model", std::move(model)},       {"pretrain", std::move(pretrain)},
                   {"finetune", std::move(finetune)}, {"guidance", std::move(guidance)},
                   {"sampling", std::move(sampling)}, {"eval", std::move(eval)},
                   {"verify", std::move(verify)}};
  std::ostringstream os;
  os << toml::toml_formatter(root, toml::format_flags::none) << '\n';
  return os.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(canonical_text(cfg)); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace dogfit::harness
