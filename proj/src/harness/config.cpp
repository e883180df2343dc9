#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "kdbd/cifar10.hpp"
#include "kdbd/error.hpp"
#include "kdbd/harness.hpp"
#include "kdbd/random.hpp"

namespace kdbd::harness {
namespace {

using nlohmann::json;

// Reads fields out of one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(qualify(key) + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(j_.at(key), qualify(key));
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown config key '" + qualify(k) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  std::string qualify(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json net_json(const NetSpec& n) {
  return {{"blocks", n.blocks}, {"classifier", n.classifier}, {"width_multiplier", n.width_multiplier}};
}

void read_net(Reader r, NetSpec& n) {
  r.get("blocks", n.blocks);
  r.get("classifier", n.classifier);
  r.get("width_multiplier", n.width_multiplier);
  r.finish();
}

json optimizer_json(const nn::OptimizerConfig& o) {
  return {{"method", nn::optimizer_name(o.method)}, {"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2},
          {"eps", o.eps}};
}

void read_optimizer(Reader r, nn::OptimizerConfig& o) {
  std::string method(nn::optimizer_name(o.method));
  r.get("method", method);
  o.method = nn::parse_optimizer(method);
  r.get("lr", o.lr);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("eps", o.eps);
  r.finish();
}

json attack_json(const attacks::AttackConfig& a) {
  return {{"method", attacks::method_name(a.method)},
          {"eps", a.eps},
          {"alpha", a.alpha},
          {"steps", a.steps},
          {"rand_init", a.rand_init},
          {"momentum", a.momentum},
          {"early_exit", a.early_exit},
          {"margin_floor", a.margin_floor},
          {"max_retries", a.max_retries},
          {"retry_margin_step", a.retry_margin_step},
          {"cw_c", a.cw_c},
          {"cw_kappa", a.cw_kappa},
          {"cw_lr", a.cw_lr},
          {"cw_search_steps", a.cw_search_steps}};
}

void read_attack(Reader r, attacks::AttackConfig& a) {
  std::string method(attacks::method_name(a.method));
  r.get("method", method);
  a.method = attacks::parse_method(method);
  r.get("eps", a.eps);
  r.get("alpha", a.alpha);
  r.get("steps", a.steps);
  r.get("rand_init", a.rand_init);
  r.get("momentum", a.momentum);
  r.get("early_exit", a.early_exit);
  r.get("margin_floor", a.margin_floor);
  r.get("max_retries", a.max_retries);
  r.get("retry_margin_step", a.retry_margin_step);
  r.get("cw_c", a.cw_c);
  r.get("cw_kappa", a.cw_kappa);
  r.get("cw_lr", a.cw_lr);
  r.get("cw_search_steps", a.cw_search_steps);
  r.finish();
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Everything that changes results; output location, seeds and parallelism are
// excluded because runs are deterministic in them.
json identity_json(const ExperimentConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  j.erase("workers");
  j.erase("seeds");
  j.erase("sample_dumps");
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.kind == DatasetSpec::Kind::synthetic) {
    dataset.synthetic.validate();
  } else if (dataset.cifar10_dir.empty()) {
    throw ConfigError("dataset.cifar10_dir is required for the cifar10 dataset");
  }
  const auto t = teacher_arch(*this);
  const auto s = student_arch(*this);
  t.validate();
  s.validate();
  teacher.validate();
  kd.validate();
  poison.validate();
  if (poison.source_class >= t.num_classes || poison.target_class >= t.num_classes) {
    throw ConfigError("poison: source/target class out of range for " + std::to_string(t.num_classes) + " classes");
  }
  poison.trigger.validate_for(data::Image(t.channels, t.height, t.width));
  if (variants.empty()) throw ConfigError("eval.variants must not be empty");
  if (manipulated_count == 0) throw ConfigError("eval.manipulated_count must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (workers == 0) throw ConfigError("workers must be >= 1");
}

eval::EvalSpec ExperimentConfig::eval_spec(eval::Variant v) const {
  return {v, poison.source_class, poison.target_class, poison.trigger};
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.poison.attack.method = attacks::Method::pgd;
  c.poison.attack.eps = 0.25;
  c.poison.attack.alpha = 0.025;
  c.poison.attack.steps = 20;
  return c;
}

nn::ArchSpec teacher_arch(const ExperimentConfig& config) {
  nn::ArchSpec a;
  if (config.dataset.kind == DatasetSpec::Kind::synthetic) {
    const auto& s = config.dataset.synthetic;
    a.channels = s.channels;
    a.height = s.height;
    a.width = s.width;
    a.num_classes = s.num_classes;
  } else {
    a.channels = 3;
    a.height = a.width = data::kCifarSide;
    a.num_classes = data::kCifarClasses;
  }
  a.block_widths = config.teacher_net.blocks;
  a.classifier_width = config.teacher_net.classifier;
  a.width_multiplier = config.teacher_net.width_multiplier;
  return a;
}

nn::ArchSpec student_arch(const ExperimentConfig& config) {
  auto a = teacher_arch(config);
  a.block_widths = config.student_net.blocks;
  a.classifier_width = config.student_net.classifier;
  a.width_multiplier = config.student_net.width_multiplier;
  return a;
}

json to_json(const ExperimentConfig& c) {
  const auto& s = c.dataset.synthetic;
  json dataset = {
      {"kind", c.dataset.kind == DatasetSpec::Kind::synthetic ? "synthetic" : "cifar10"},
      {"synthetic",
       {{"num_classes", s.num_classes},
        {"channels", s.channels},
        {"height", s.height},
        {"width", s.width},
        {"train_per_class", s.train_per_class},
        {"test_per_class", s.test_per_class},
        {"noise", s.noise},
        {"contrast", s.contrast},
        {"seed", s.seed}}},
      {"cifar10_dir", c.dataset.cifar10_dir.string()}};

  json teacher = {{"net", net_json(c.teacher_net)},
                  {"epochs", c.teacher.epochs},
                  {"batch_size", c.teacher.batch_size},
                  {"optimizer", optimizer_json(c.teacher.optimizer)},
                  {"report_window", c.teacher.report_window},
                  {"seed", c.teacher.seed},
                  {"checkpoint", c.teacher_checkpoint.string()}};

  const auto& p = c.poison;
  json poison = {{"mode", poison::mode_name(p.mode)},
                 {"source_class", p.source_class},
                 {"target_class", p.target_class},
                 {"rate", p.rate},
                 {"count", p.count ? json(*p.count) : json(nullptr)},
                 {"injection", poison::injection_name(p.injection)},
                 {"attack", attack_json(p.attack)},
                 {"interpolation", {{"grid", p.interpolation.grid}, {"margin", p.interpolation.margin}}},
                 {"trigger",
                  {{"patch_height", p.trigger.patch_height},
                   {"patch_width", p.trigger.patch_width},
                   {"fill", p.trigger.fill}}}};

  json kd = {{"tau", c.kd.tau},
             {"lambda", c.kd.lambda},
             {"batch_size", c.kd.batch_size},
             {"epochs", c.kd.epochs},
             {"report_window", c.kd.report_window},
             {"optimizer", optimizer_json(c.kd.optimizer)},
             {"kl_direction", nn::kl_direction_name(c.kd.direction)}};

  json variants = json::array();
  for (auto v : c.variants) variants.push_back(eval::variant_name(v));

  return {{"schema", kConfigSchema},
          {"dataset", dataset},
          {"teacher", teacher},
          {"student", {{"net", net_json(c.student_net)}}},
          {"poison", poison},
          {"kd", kd},
          {"eval", {{"variants", variants}, {"manipulated_count", c.manipulated_count}}},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir.string()},
          {"sample_dumps", c.sample_dumps},
          {"workers", c.workers}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = default_config();
  Reader root(j, "");
  std::string schema;
  root.get("schema", schema);
  if (schema != kConfigSchema) {
    throw ConfigError("config schema must be \"" + std::string(kConfigSchema) + "\", got \"" + schema + "\"");
  }

  if (root.has("dataset")) {
    auto d = root.child("dataset");
    std::string kind = "synthetic";
    d.get("kind", kind);
    if (kind == "synthetic") {
      c.dataset.kind = DatasetSpec::Kind::synthetic;
    } else if (kind == "cifar10") {
      c.dataset.kind = DatasetSpec::Kind::cifar10;
    } else {
      throw ConfigError("dataset.kind must be synthetic or cifar10, got '" + kind + "'");
    }
    if (d.has("synthetic")) {
      auto s = d.child("synthetic");
      auto& sc = c.dataset.synthetic;
      s.get("num_classes", sc.num_classes);
      s.get("channels", sc.channels);
      s.get("height", sc.height);
      s.get("width", sc.width);
      s.get("train_per_class", sc.train_per_class);
      s.get("test_per_class", sc.test_per_class);
      s.get("noise", sc.noise);
      s.get("contrast", sc.contrast);
      s.get("seed", sc.seed);
      s.finish();
    }
    std::string dir = c.dataset.cifar10_dir.string();
    d.get("cifar10_dir", dir);
    c.dataset.cifar10_dir = dir;
    d.finish();
  }

  if (root.has("teacher")) {
    auto t = root.child("teacher");
    if (t.has("net")) read_net(t.child("net"), c.teacher_net);
    t.get("epochs", c.teacher.epochs);
    t.get("batch_size", c.teacher.batch_size);
    if (t.has("optimizer")) read_optimizer(t.child("optimizer"), c.teacher.optimizer);
    t.get("report_window", c.teacher.report_window);
    t.get("seed", c.teacher.seed);
    std::string ckpt = c.teacher_checkpoint.string();
    t.get("checkpoint", ckpt);
    c.teacher_checkpoint = ckpt;
    t.finish();
  }

  if (root.has("student")) {
    auto s = root.child("student");
    if (s.has("net")) read_net(s.child("net"), c.student_net);
    s.finish();
  }

  if (root.has("poison")) {
    auto p = root.child("poison");
    auto& pc = c.poison;
    std::string mode(poison::mode_name(pc.mode));
    p.get("mode", mode);
    pc.mode = poison::parse_mode(mode);
    p.get("source_class", pc.source_class);
    p.get("target_class", pc.target_class);
    p.get("rate", pc.rate);
    if (p.has("count")) {
      const auto& cnt = p.raw("count");
      if (cnt.is_null()) {
        pc.count.reset();
      } else if (cnt.is_number_unsigned()) {
        pc.count = cnt.get<std::size_t>();
      } else {
        throw ConfigError("poison.count must be a non-negative integer or null");
      }
    }
    std::string injection(poison::injection_name(pc.injection));
    p.get("injection", injection);
    pc.injection = poison::parse_injection(injection);
    if (p.has("attack")) read_attack(p.child("attack"), pc.attack);
    if (p.has("interpolation")) {
      auto i = p.child("interpolation");
      i.get("grid", pc.interpolation.grid);
      i.get("margin", pc.interpolation.margin);
      i.finish();
    }
    if (p.has("trigger")) {
      auto t = p.child("trigger");
      t.get("patch_height", pc.trigger.patch_height);
      t.get("patch_width", pc.trigger.patch_width);
      t.get("fill", pc.trigger.fill);
      t.finish();
    }
    p.finish();
  }

  if (root.has("kd")) {
    auto k = root.child("kd");
    k.get("tau", c.kd.tau);
    k.get("lambda", c.kd.lambda);
    k.get("batch_size", c.kd.batch_size);
    k.get("epochs", c.kd.epochs);
    k.get("report_window", c.kd.report_window);
    if (k.has("optimizer")) read_optimizer(k.child("optimizer"), c.kd.optimizer);
    std::string dir(nn::kl_direction_name(c.kd.direction));
    k.get("kl_direction", dir);
    c.kd.direction = nn::parse_kl_direction(dir);
    k.finish();
  }

  if (root.has("eval")) {
    auto e = root.child("eval");
    if (e.has("variants")) {
      std::vector<std::string> names;
      e.get("variants", names);
      c.variants.clear();
      for (const auto& n : names) c.variants.push_back(eval::parse_variant(n));
    }
    e.get("manipulated_count", c.manipulated_count);
    e.finish();
  }

  root.get("seeds", c.seeds);
  std::string out = c.output_dir.string();
  root.get("output_dir", out);
  c.output_dir = out;
  root.get("sample_dumps", c.sample_dumps);
  root.get("workers", c.workers);
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path.string());
  out << to_json(config).dump(2) << '\n';
  if (!out) throw IoError("failed writing config " + path.string());
}

void apply_override(json& tree, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + key + "' has an empty path component");
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + part + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

std::string run_id(const ExperimentConfig& config, std::uint64_t seed) {
  return hex16(derive_seed(fnv1a64(identity_json(config).dump()), seed));
}

std::string teacher_key(const ExperimentConfig& config) {
  const json j = to_json(config);
  return hex16(fnv1a64(j.at("dataset").dump() + j.at("teacher").dump()));
}

}  // namespace kdbd::harness
