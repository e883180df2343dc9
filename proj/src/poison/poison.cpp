#include "kdbd/poison.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "kdbd/error.hpp"
#include "kdbd/parallel.hpp"
#include "kdbd/random.hpp"

namespace kdbd::poison {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

constexpr std::uint64_t kSelectStream = fnv1a64("poison/select");
constexpr std::uint64_t kAttackStream = fnv1a64("poison/attack");
constexpr std::uint64_t kExemplarStream = fnv1a64("poison/exemplar");
constexpr std::uint64_t kInjectStream = fnv1a64("poison/inject");

std::size_t floor_fraction(double rate, std::size_t n) {
  // 1e-9 absorbs products like 0.29 * 100 = 28.999999999999996.
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9));
}

/// Source-class indices of `train` in a seeded order.
std::vector<std::size_t> candidate_order(const data::Dataset& train, const PoisonConfig& config) {
  auto idx = train.indices_of_class(config.source_class);
  if (idx.empty()) {
    throw ConfigError("poison: source class " + std::to_string(config.source_class) +
                      " has no training images");
  }
  Rng rng(derive_seed(config.seed, kSelectStream));
  rng.shuffle(std::span<std::size_t>(idx));
  return idx;
}

struct Attempt {
  AuditRecord audit;
  std::optional<data::LabeledExample> sample;
  data::Image manipulated;
  std::optional<data::LabeledExample> companion;
};

/// Runs `attempt` over candidates in waves until `needed` samples are accepted
/// or candidates run out. Each wave holds exactly as many candidates as are
/// still missing, so the outcome does not depend on the worker count.
template <typename F>
std::vector<Attempt> run_waves(const std::vector<std::size_t>& order, std::size_t needed, std::size_t workers,
                               F&& attempt) {
  std::vector<Attempt> all;
  std::size_t accepted = 0;
  std::size_t next = 0;
  while (accepted < needed && next < order.size()) {
    const std::size_t wave = std::min(needed - accepted, order.size() - next);
    std::vector<Attempt> results(wave);
    parallel_for(wave, workers, [&](std::size_t i) { results[i] = attempt(order[next + i]); });
    next += wave;
    for (auto& r : results) {
      if (r.sample) ++accepted;
      all.push_back(std::move(r));
    }
  }
  return all;
}

PoisonSet assemble(std::vector<Attempt> attempts) {
  std::sort(attempts.begin(), attempts.end(),
            [](const Attempt& a, const Attempt& b) { return a.audit.base_id < b.audit.base_id; });
  PoisonSet set;
  set.attempted = attempts.size();
  for (auto& a : attempts) {
    if (a.sample) {
      set.samples.push_back(std::move(*a.sample));
      set.manipulated.push_back(std::move(a.manipulated));
    } else {
      ++set.dropped;
    }
    if (a.companion) set.companion_clean.push_back(std::move(*a.companion));
    set.audit.push_back(std::move(a.audit));
  }
  return set;
}

std::string describe_attack(const attacks::AttackConfig& a) {
  std::ostringstream os;
  os << attacks::method_name(a.method) << "(eps=" << a.eps << ", alpha=" << a.alpha << ", steps=" << a.steps
     << ", max_retries=" << a.max_retries << ")";
  return os.str();
}

void check_model(const attacks::Model& teacher, const data::Dataset& train) {
  const auto& img = train.examples.front().image;
  if (teacher.arch.channels != img.channels || teacher.arch.height != img.height ||
      teacher.arch.width != img.width) {
    throw ShapeError("poison: teacher input shape does not match the training images");
  }
}

}  // namespace

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::none: return "none";
    case Mode::adversarial: return "adversarial";
    case Mode::interpolation: return "interpolation";
    case Mode::traditional: return "traditional";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  for (Mode m : {Mode::none, Mode::adversarial, Mode::interpolation, Mode::traditional}) {
    if (text == mode_name(m)) return m;
  }
  throw ConfigError("unknown poison mode '" + std::string(text) + "'");
}

std::string_view injection_name(Injection i) { return i == Injection::add ? "add" : "replace"; }

Injection parse_injection(std::string_view text) {
  if (text == "add") return Injection::add;
  if (text == "replace") return Injection::replace;
  throw ConfigError("unknown injection '" + std::string(text) + "' (expected add or replace)");
}

void PoisonConfig::validate() const {
  if (source_class == target_class) throw ConfigError("poison: source_class must differ from target_class");
  if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("poison: rate must be in (0, 1]");
  if (!(interpolation.margin > 0.0 && interpolation.margin < 1.0)) {
    throw ConfigError("poison: interpolation margin must be in (0, 1)");
  }
  if (interpolation.grid < 2) throw ConfigError("poison: interpolation grid needs at least 2 points");
  if (count && *count == 0) throw ConfigError("poison: count must be positive");
  if (workers == 0) throw ConfigError("poison: workers must be >= 1");
  if (mode == Mode::adversarial) attack.validate();
}

std::size_t requested_count(const PoisonConfig& config, std::size_t source_count) {
  if (config.count) return *config.count;
  if (config.injection == Injection::replace) return floor_fraction(config.rate, source_count);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.rate * static_cast<double>(source_count))));
}

PoisonSet craft_adversarial_poison(const attacks::Model& teacher, const data::Dataset& train,
                                   const PoisonConfig& config) {
  config.validate();
  if (config.mode != Mode::adversarial) throw ConfigError("craft_adversarial_poison: mode must be adversarial");
  const auto order = candidate_order(train, config);
  check_model(teacher, train);
  const std::size_t needed = requested_count(config, order.size());
  const std::size_t target = config.target_class;

  auto attempt = [&](std::size_t index) {
    const auto& base = train.examples[index];
    config.trigger.validate_for(base.image);
    Attempt out;
    out.audit.base_id = base.id;
    out.audit.mode = Mode::adversarial;
    out.audit.target_probability = kNaN;
    out.audit.t_source_like = out.audit.t_target_like = out.audit.selection_margin = kNaN;

    const std::uint64_t seed = derive_seed(derive_seed(config.seed, kAttackStream), base.id);
    attacks::AttackConfig ac = config.attack;
    data::Image previous;
    bool have_previous = false;
    for (std::size_t retry = 0; retry <= ac.max_retries; ++retry) {
      const auto res = attacks::run_attack(teacher, base.image, target, ac, derive_seed(seed, retry),
                                           have_previous ? &previous : nullptr);
      out.audit.iterations += res.iterations;
      out.audit.retries = retry;
      if (res.success) {
        auto triggered = data::apply_trigger(res.adversarial, config.trigger);
        const auto pred = attacks::teacher_predict(teacher, triggered);
        out.audit.target_probability = pred.probabilities[target];
        if (pred.label == target) {
          out.audit.accepted = true;
          out.manipulated = res.adversarial;
          out.sample = data::LabeledExample{std::move(triggered), target, data::Provenance::poisoned_adversarial,
                                            base.id};
          return out;
        }
        out.audit.note = "trigger broke target prediction";
      } else {
        out.audit.note = "attack did not reach target";
      }
      previous = res.adversarial;
      have_previous = true;
      ac.margin_floor += ac.retry_margin_step;
    }
    out.audit.note += "; retries exhausted";
    return out;
  };

  auto set = assemble(run_waves(order, needed, config.workers, attempt));
  if (set.samples.empty()) {
    throw std::runtime_error("adversarial poisoning produced no samples with " + describe_attack(config.attack));
  }
  return set;
}

PoisonSet craft_interpolation_poison(const attacks::Model& teacher, const data::Dataset& train,
                                     const PoisonConfig& config) {
  config.validate();
  if (config.mode != Mode::interpolation) {
    throw ConfigError("craft_interpolation_poison: mode must be interpolation");
  }
  const auto order = candidate_order(train, config);
  check_model(teacher, train);
  const std::size_t source = config.source_class;
  const std::size_t target = config.target_class;

  // Exemplar pool: target-class training images the teacher gets right.
  const auto target_idx = train.indices_of_class(target);
  if (target_idx.empty()) {
    throw ConfigError("poison: target class " + std::to_string(target) + " has no training images");
  }
  std::vector<data::Image> target_images;
  target_images.reserve(target_idx.size());
  for (auto i : target_idx) target_images.push_back(train.examples[i].image);
  const auto target_preds = attacks::teacher_predict_batch(teacher, target_images);
  std::vector<std::size_t> pool;
  for (std::size_t k = 0; k < target_idx.size(); ++k) {
    if (target_preds[k].label == target) pool.push_back(target_idx[k]);
  }
  if (pool.empty()) throw std::runtime_error("interpolation: teacher misclassifies every target-class image");

  const std::size_t grid = config.interpolation.grid;
  const double margin = config.interpolation.margin;
  const std::size_t needed = requested_count(config, order.size());

  auto attempt = [&](std::size_t index) {
    const auto& base = train.examples[index];
    config.trigger.validate_for(base.image);
    Attempt out;
    out.audit.base_id = base.id;
    out.audit.mode = Mode::interpolation;
    out.audit.target_probability = kNaN;
    out.audit.t_source_like = out.audit.t_target_like = out.audit.selection_margin = kNaN;

    Rng rng(derive_seed(derive_seed(config.seed, kExemplarStream), base.id));
    const auto& exemplar = train.examples[pool[rng.below(pool.size())]].image;

    std::vector<data::Image> path(grid, base.image);
    for (std::size_t g = 0; g < grid; ++g) {
      const float t = static_cast<float>(static_cast<double>(g) / static_cast<double>(grid - 1));
      auto& px = path[g].pixels;
      for (std::size_t p = 0; p < px.size(); ++p) px[p] = (1.0f - t) * base.image.pixels[p] + t * exemplar.pixels[p];
    }
    const auto preds = attacks::teacher_predict_batch(teacher, path);
    auto t_of = [&](std::size_t g) { return static_cast<double>(g) / static_cast<double>(grid - 1); };

    std::optional<std::size_t> target_like;
    for (std::size_t g = 0; g < grid; ++g) {
      const auto& pr = preds[g].probabilities;
      if (preds[g].label == target && pr[target] - pr[source] >= margin) {
        target_like = g;
        break;
      }
    }
    std::optional<std::size_t> source_like;
    const std::size_t limit = target_like.value_or(grid);
    for (std::size_t g = limit; g-- > 0;) {
      const auto& pr = preds[g].probabilities;
      if (preds[g].label == source && pr[source] - pr[target] >= margin) {
        source_like = g;
        break;
      }
    }

    if (source_like) {
      out.audit.t_source_like = t_of(*source_like);
      out.companion = data::LabeledExample{path[*source_like], source, data::Provenance::companion, base.id};
    }
    if (!target_like) {
      out.audit.note = source_like ? "no target-like point" : "path yields neither candidate";
      return out;
    }
    const auto& pr = preds[*target_like].probabilities;
    out.audit.t_target_like = t_of(*target_like);
    out.audit.selection_margin = pr[target] - pr[source];
    auto triggered = data::apply_trigger(path[*target_like], config.trigger);
    const auto pred = attacks::teacher_predict(teacher, triggered);
    out.audit.target_probability = pred.probabilities[target];
    if (pred.label != target) {
      out.audit.note = "trigger broke target prediction";
      return out;
    }
    out.audit.accepted = true;
    out.manipulated = path[*target_like];
    out.sample = data::LabeledExample{std::move(triggered), target, data::Provenance::poisoned_interpolation, base.id};
    return out;
  };

  auto set = assemble(run_waves(order, needed, config.workers, attempt));
  if (set.samples.empty()) throw std::runtime_error("interpolation poisoning found no qualifying paths");
  return set;
}

PoisonSet craft_traditional_poison(const data::Dataset& train, const PoisonConfig& config) {
  config.validate();
  if (config.mode != Mode::traditional) throw ConfigError("craft_traditional_poison: mode must be traditional");
  const auto order = candidate_order(train, config);
  const std::size_t needed = std::min(requested_count(config, order.size()), order.size());

  std::vector<Attempt> attempts(needed);
  for (std::size_t i = 0; i < needed; ++i) {
    const auto& base = train.examples[order[i]];
    config.trigger.validate_for(base.image);
    auto& a = attempts[i];
    a.audit.base_id = base.id;
    a.audit.mode = Mode::traditional;
    a.audit.accepted = true;
    a.audit.target_probability = a.audit.t_source_like = a.audit.t_target_like = a.audit.selection_margin = kNaN;
    a.manipulated = base.image;
    a.sample = data::LabeledExample{data::apply_trigger(base.image, config.trigger), config.target_class,
                                    data::Provenance::poisoned_traditional, base.id};
  }
  return assemble(std::move(attempts));
}

PoisonSet craft_poison(const attacks::Model& teacher, const data::Dataset& train, const PoisonConfig& config) {
  switch (config.mode) {
    case Mode::none: return {};
    case Mode::adversarial: return craft_adversarial_poison(teacher, train, config);
    case Mode::interpolation: return craft_interpolation_poison(teacher, train, config);
    case Mode::traditional: return craft_traditional_poison(train, config);
  }
  throw std::logic_error("craft_poison: bad mode");
}

data::Dataset inject(const data::Dataset& train, const PoisonSet& poison, const PoisonConfig& config) {
  data::Dataset out;
  out.num_classes = train.num_classes;
  out.split = train.split;

  if (config.injection == Injection::add) {
    out.examples = train.examples;
    out.examples.insert(out.examples.end(), poison.samples.begin(), poison.samples.end());
    out.examples.insert(out.examples.end(), poison.companion_clean.begin(), poison.companion_clean.end());
  } else {
    if (!(config.rate > 0.0 && config.rate <= 1.0)) throw ConfigError("inject: rate must be in (0, 1]");
    const auto source_idx = train.indices_of_class(config.source_class);
    const std::size_t n_replace =
        config.count ? *config.count : floor_fraction(config.rate, source_idx.size());
    if (n_replace > source_idx.size()) {
      throw ConfigError("inject: cannot replace " + std::to_string(n_replace) + " of " +
                        std::to_string(source_idx.size()) + " source-class images");
    }
    if (poison.samples.size() < n_replace) {
      throw ConfigError("inject: replace mode needs " + std::to_string(n_replace) + " poison samples, got " +
                        std::to_string(poison.samples.size()));
    }
    // Prefer dropping the very images the poison was derived from.
    std::vector<bool> drop(train.size(), false);
    std::size_t dropped = 0;
    for (std::size_t k = 0; k < n_replace; ++k) {
      for (auto i : source_idx) {
        if (!drop[i] && train.examples[i].id == poison.samples[k].id) {
          drop[i] = true;
          ++dropped;
          break;
        }
      }
    }
    if (dropped < n_replace) {
      auto rest = source_idx;
      Rng rng(derive_seed(config.seed, kSelectStream));
      rng.shuffle(std::span<std::size_t>(rest));
      for (auto i : rest) {
        if (dropped == n_replace) break;
        if (!drop[i]) {
          drop[i] = true;
          ++dropped;
        }
      }
    }
    out.examples.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (!drop[i]) out.examples.push_back(train.examples[i]);
    }
    out.examples.insert(out.examples.end(), poison.samples.begin(),
                        poison.samples.begin() + static_cast<std::ptrdiff_t>(n_replace));
  }

  Rng rng(derive_seed(config.seed, kInjectStream));
  rng.shuffle(std::span<data::LabeledExample>(out.examples));
  return out;
}

void write_audit_csv(const PoisonSet& poison, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write poison audit: " + path.string());
  out << "base_id,mode,accepted,retries,iterations,target_probability,t_source_like,t_target_like,"
         "selection_margin,note\n";
  out.precision(9);
  for (const auto& a : poison.audit) {
    out << a.base_id << ',' << mode_name(a.mode) << ',' << (a.accepted ? 1 : 0) << ',' << a.retries << ','
        << a.iterations << ',' << a.target_probability << ',' << a.t_source_like << ',' << a.t_target_like << ','
        << a.selection_margin << ',' << a.note << '\n';
  }
  if (!out) throw IoError("failed writing poison audit: " + path.string());
}

}  // namespace kdbd::poison
