#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>

#include "kdbd/checkpoint.hpp"
#include "kdbd/cifar10.hpp"
#include "kdbd/error.hpp"
#include "kdbd/harness.hpp"
#include "kdbd/parallel.hpp"
#include "kdbd/ppm.hpp"
#include "kdbd/random.hpp"

namespace kdbd::harness {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string fmt_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

json stat_json(const distill::Stat& s) {
  return {{"mean", std::isnan(s.mean) ? json(nullptr) : json(s.mean)},
          {"std", std::isnan(s.std) ? json(nullptr) : json(s.std)}};
}

bool has_manipulation(poison::Mode m) {
  return m == poison::Mode::adversarial || m == poison::Mode::interpolation;
}

// Held-out manipulated images crafted from test-set source images with the
// run's poison recipe, for the manipulated_triggered variant.
std::vector<data::Image> held_out_manipulated(const ExperimentConfig& config, const Prepared& prep,
                                              std::uint64_t seed) {
  poison::PoisonConfig pc = config.poison;
  pc.seed = derive_seed(seed, fnv1a64("run/heldout"));
  pc.injection = poison::Injection::add;
  const auto sources = prep.test.indices_of_class(pc.source_class).size();
  pc.count = std::min(config.manipulated_count, sources);
  auto set = poison::craft_poison(prep.teacher, prep.test, pc);
  if (set.manipulated.empty()) throw std::runtime_error("no held-out manipulated test images could be crafted");
  return std::move(set.manipulated);
}

void dump_samples(const poison::PoisonSet& ps, const data::Dataset& train, std::size_t count, const fs::path& dir) {
  if (count == 0 || ps.samples.empty()) return;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < std::min(count, ps.samples.size()); ++i) {
    const auto& s = ps.samples[i];
    const auto it = std::find_if(train.examples.begin(), train.examples.end(),
                                 [&](const data::LabeledExample& e) { return e.id == s.id; });
    const std::string stem = "sample" + std::to_string(i) + "_id" + std::to_string(s.id);
    if (it != train.examples.end()) data::write_ppm(it->image, dir / (stem + "_original.ppm"));
    data::write_ppm(ps.manipulated[i], dir / (stem + "_manipulated.ppm"));
    data::write_ppm(s.image, dir / (stem + "_triggered.ppm"));
  }
}

ResultRow failure_row(const std::string& stage_name, const std::string& id, const std::string& axis, double value,
                      poison::Mode mode, std::uint64_t seed) {
  ResultRow r;
  r.run_id = "FAILED:" + stage_name + ":" + id;
  r.axis = axis;
  r.value = value;
  r.mode = std::string(poison::mode_name(mode));
  r.seed = seed;
  r.acc_mean = r.acc_std = r.asr_trigger_mean = r.asr_trigger_std = r.asr_manip_mean = r.asr_manip_std = kNaN;
  r.n_epochs = 0;
  r.wall_s = 0.0;
  return r;
}

}  // namespace

StageError::StageError(std::string stage, const std::string& what)
    : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

std::shared_ptr<const Prepared> prepare(const ExperimentConfig& config) {
  config.validate();
  auto prep = std::make_shared<Prepared>();
  stage("data", [&] {
    if (config.dataset.kind == DatasetSpec::Kind::synthetic) {
      std::tie(prep->train, prep->test) = data::generate_synthetic(config.dataset.synthetic);
    } else {
      std::tie(prep->train, prep->test) = data::load_cifar10_binary(config.dataset.cifar10_dir);
    }
  });

  const auto arch = teacher_arch(config);
  stage("teacher", [&] {
    if (!config.teacher_checkpoint.empty()) {
      prep->teacher = nn::load_checkpoint(config.teacher_checkpoint);
      const auto& a = prep->teacher.arch;
      if (a.channels != arch.channels || a.height != arch.height || a.width != arch.width ||
          a.num_classes != arch.num_classes) {
        throw ShapeError("teacher checkpoint " + config.teacher_checkpoint.string() + " has architecture " +
                         a.canonical() + ", incompatible with the dataset");
      }
    } else {
      const fs::path cache = config.output_dir / "teachers" / (teacher_key(config) + ".ckpt");
      if (fs::exists(cache)) {
        prep->teacher = nn::load_checkpoint(cache);
      } else {
        distill::EvalPlan plan{&prep->test, {}, {}};
        auto trained = distill::train_teacher(prep->train, arch, config.teacher, plan);
        fs::create_directories(cache.parent_path());
        // Write then rename so a concurrent reader never sees a partial file.
        const fs::path tmp = cache.string() + ".tmp" + std::to_string(derive_seed(config.teacher.seed,
                                                                                  fnv1a64(cache.string())));
        nn::save_checkpoint(trained.params, tmp);
        fs::rename(tmp, cache);
        distill::write_epoch_csv(trained.report, config.output_dir / "teachers" / (teacher_key(config) + ".csv"));
        prep->teacher = std::move(trained.params);
        prep->teacher_report = std::move(trained.report);
      }
    }
    prep->teacher_acc = eval::accuracy(prep->teacher, prep->test);
  });
  return prep;
}

RunResult run_once(const ExperimentConfig& config, const Prepared& prep, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  RunResult out;
  const std::string id = run_id(config, seed);
  out.dir = config.output_dir / id;

  poison::PoisonConfig pc = config.poison;
  pc.seed = derive_seed(seed, fnv1a64("run/poison"));
  poison::PoisonSet ps;
  data::Dataset train_set = stage("poison", [&] {
    if (pc.mode == poison::Mode::none) return prep.train;
    ps = poison::craft_poison(prep.teacher, prep.train, pc);
    return poison::inject(prep.train, ps, pc);
  });
  out.poison_samples = ps.samples.size();
  out.poison_attempted = ps.attempted;

  distill::EvalPlan plan;
  plan.test_set = &prep.test;
  stage("eval", [&] {
    for (auto v : config.variants) {
      if (v == eval::Variant::manipulated_triggered) {
        if (!has_manipulation(pc.mode)) continue;
        plan.manipulated = held_out_manipulated(config, prep, seed);
      }
      plan.specs.push_back(config.eval_spec(v));
    }
  });

  distill::KDConfig kd = config.kd;
  kd.seed = derive_seed(seed, fnv1a64("run/kd"));
  auto student = stage("distill", [&] { return distill::distill(prep.teacher, student_arch(config), train_set, kd, plan); });
  out.report = student.report;

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ResultRow& row = out.row;
  row.run_id = id;
  row.axis = "single";
  row.value = config.kd.lambda;
  row.mode = std::string(poison::mode_name(pc.mode));
  row.seed = seed;
  row.acc_mean = out.report.acc.mean;
  row.acc_std = out.report.acc.std;
  const auto trig = out.report.asr_for(eval::Variant::trigger_only);
  const auto manip = out.report.asr_for(eval::Variant::manipulated_triggered);
  row.asr_trigger_mean = trig.mean;
  row.asr_trigger_std = trig.std;
  row.asr_manip_mean = manip.mean;
  row.asr_manip_std = manip.std;
  row.n_epochs = out.report.epochs.size();
  row.wall_s = wall;

  stage("io", [&] {
    fs::create_directories(out.dir);
    ExperimentConfig echo = config;
    echo.seeds = {seed};
    save_config(echo, out.dir / "config.json");
    nn::save_checkpoint(student.params, out.dir / "student.ckpt");
    distill::write_epoch_csv(out.report, out.dir / "epochs.csv");
    distill::write_metrics_csv(out.report, id, out.dir / "metrics.csv");
    if (pc.mode != poison::Mode::none) poison::write_audit_csv(ps, out.dir / "audit.csv");
    dump_samples(ps, prep.train, config.sample_dumps, out.dir / "samples");

    json variants = json::object();
    for (std::size_t i = 0; i < out.report.variants.size(); ++i) {
      variants[std::string(eval::variant_name(out.report.variants[i]))] = {
          {"asr", stat_json(out.report.asr[i])}, {"acc", stat_json(out.report.asr_acc[i])}};
    }
    json summary = {{"run_id", id},
                    {"seed", seed},
                    {"mode", row.mode},
                    {"teacher_key", teacher_key(config)},
                    {"teacher_acc", prep.teacher_acc},
                    {"poison", {{"samples", ps.samples.size()},
                                {"attempted", ps.attempted},
                                {"dropped", ps.dropped},
                                {"companions", ps.companion_clean.size()},
                                {"train_size", train_set.size()}}},
                    {"window", out.report.window},
                    {"acc", stat_json(out.report.acc)},
                    {"variants", variants},
                    {"student", student.report.config_echo},
                    {"wall_s", wall}};
    std::ofstream f(out.dir / "summary.json", std::ios::trunc);
    f << summary.dump(2) << '\n';
    if (!f) throw IoError("failed writing " + (out.dir / "summary.json").string());
  });
  return out;
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& config) {
  auto prep = prepare(config);
  ExperimentConfig c = config;
  c.poison.workers = config.workers;
  std::vector<ResultRow> rows;
  for (auto seed : config.seeds) rows.push_back(run_once(c, *prep, seed).row);
  return rows;
}

std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::lambda: return "lambda";
    case Axis::poison_rate: return "poison_rate";
    case Axis::student_width: return "student_width";
  }
  return "?";
}

Axis parse_axis(std::string_view text) {
  for (Axis a : {Axis::lambda, Axis::poison_rate, Axis::student_width}) {
    if (text == axis_name(a)) return a;
  }
  throw ConfigError("unknown sweep axis '" + std::string(text) + "' (lambda, poison_rate, student_width)");
}

void SweepSpec::validate() const {
  if (values.empty()) throw ConfigError("sweep: no values");
  if (modes.empty()) throw ConfigError("sweep: no poison modes");
  if (seeds_per_point == 0) throw ConfigError("sweep: seeds_per_point must be >= 1");
  for (double v : values) {
    switch (axis) {
      case Axis::lambda:
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("sweep: lambda values must lie in [0, 1]");
        break;
      case Axis::poison_rate:
        if (!(v > 0.0 && v <= 1.0)) throw ConfigError("sweep: poison rates must lie in (0, 1]");
        break;
      case Axis::student_width:
        if (!(v > 0.0)) throw ConfigError("sweep: width multipliers must be positive");
        break;
    }
  }
  if (axis == Axis::student_width) {
    if (lambdas.empty()) throw ConfigError("sweep: student_width needs at least one lambda");
    for (double l : lambdas) {
      if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("sweep: lambda values must lie in [0, 1]");
    }
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (!(values[i] < values[i - 1])) throw ConfigError("sweep: width multipliers must be strictly decreasing");
    }
  }
}

std::vector<double> lambda_grid() {
  std::vector<double> v;
  for (int i = 0; i <= 10; ++i) v.push_back(i / 10.0);
  return v;
}

std::vector<double> rate_grid() {
  std::vector<double> v;
  for (int i = 1; i <= 10; ++i) v.push_back(i / 10.0);
  return v;
}

std::vector<double> width_multipliers() {
  std::vector<double> v;
  for (int i = 10; i >= 3; --i) v.push_back(i / 10.0);
  return v;
}

std::uint64_t point_seed(std::uint64_t base, double value, poison::Mode mode, std::size_t replicate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  const std::uint64_t point = fnv1a64(std::string(buf) + "/" + std::string(poison::mode_name(mode)));
  return derive_seed(derive_seed(base, point), replicate);
}

std::vector<ResultRow> sweep(const ExperimentConfig& config, const SweepSpec& spec) {
  spec.validate();
  config.validate();

  struct Point {
    std::string axis;
    double value;
    poison::Mode mode;
    std::uint64_t seed;
    ExperimentConfig config;
  };
  std::vector<Point> points;
  const std::uint64_t base = config.seeds.front();
  const std::vector<double> lambdas =
      spec.axis == Axis::student_width ? spec.lambdas : std::vector<double>{config.kd.lambda};
  for (double lambda : lambdas) {
    std::string axis(axis_name(spec.axis));
    std::uint64_t axis_base = base;
    if (spec.axis == Axis::student_width) {
      axis += "@lambda=" + fmt_value(lambda);
      axis_base = derive_seed(base, fnv1a64(axis));
    }
    for (double value : spec.values) {
      for (auto mode : spec.modes) {
        for (std::size_t rep = 0; rep < spec.seeds_per_point; ++rep) {
          ExperimentConfig c = config;
          c.poison.mode = mode;
          c.poison.workers = 1;
          c.kd.lambda = lambda;
          switch (spec.axis) {
            case Axis::lambda: c.kd.lambda = value; break;
            case Axis::poison_rate:
              c.poison.rate = value;
              c.poison.count.reset();
              c.poison.injection = poison::Injection::replace;
              break;
            case Axis::student_width: c.student_net.width_multiplier = value; break;
          }
          points.push_back({axis, value, mode, point_seed(axis_base, value, mode, rep), std::move(c)});
        }
      }
    }
  }

  auto prep = prepare(config);
  std::vector<ResultRow> rows(points.size());
  std::mutex progress_mu;
  std::size_t done = 0;
  parallel_for(points.size(), config.workers, [&](std::size_t i) {
    const auto& p = points[i];
    std::string error;
    try {
      p.config.validate();
      rows[i] = run_once(p.config, *prep, p.seed).row;
    } catch (const StageError& e) {
      rows[i] = failure_row(e.stage(), run_id(p.config, p.seed), p.axis, p.value, p.mode, p.seed);
      error = e.what();
    } catch (const std::exception& e) {
      rows[i] = failure_row("config", run_id(p.config, p.seed), p.axis, p.value, p.mode, p.seed);
      error = e.what();
    }
    rows[i].axis = p.axis;
    rows[i].value = p.value;
    if (spec.progress) {
      std::lock_guard lock(progress_mu);
      ++done;
      auto& os = *spec.progress;
      os << '[' << done << '/' << points.size() << "] " << p.axis << '=' << p.value << ' '
         << poison::mode_name(p.mode) << " seed=" << p.seed;
      if (error.empty()) {
        os << " acc=" << rows[i].acc_mean << " asr=" << rows[i].asr_trigger_mean << " (" << rows[i].wall_s << "s)\n";
      } else {
        os << " FAILED " << error << '\n';
      }
      os.flush();
    }
  });

  std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.axis, a.value, a.mode, a.seed) < std::tie(b.axis, b.value, b.mode, b.seed);
  });
  return rows;
}

std::vector<ResultRow> sweep_lambda(const ExperimentConfig& config, std::vector<poison::Mode> modes,
                                    std::size_t seeds_per_point) {
  SweepSpec s;
  s.axis = Axis::lambda;
  s.values = lambda_grid();
  s.modes = std::move(modes);
  s.seeds_per_point = seeds_per_point;
  return sweep(config, s);
}

std::vector<ResultRow> sweep_poison_rate(const ExperimentConfig& config, std::vector<poison::Mode> modes,
                                         std::size_t seeds_per_point) {
  SweepSpec s;
  s.axis = Axis::poison_rate;
  s.values = rate_grid();
  s.modes = std::move(modes);
  s.seeds_per_point = seeds_per_point;
  return sweep(config, s);
}

std::vector<ResultRow> sweep_student_width(const ExperimentConfig& config, std::vector<poison::Mode> modes,
                                           std::size_t seeds_per_point) {
  SweepSpec s;
  s.axis = Axis::student_width;
  s.values = width_multipliers();
  s.modes = std::move(modes);
  s.seeds_per_point = seeds_per_point;
  return sweep(config, s);
}

}  // namespace kdbd::harness
