#include "kdbd/distill.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "kdbd/error.hpp"
#include "kdbd/random.hpp"

namespace kdbd::distill {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kInitStream = fnv1a64("train/init");
constexpr std::uint64_t kBatchStream = fnv1a64("train/batches");
constexpr std::size_t kInferChunk = 256;

using LossFn = std::function<nn::LossValue<float>(const Tensor& logits, std::span<const std::size_t> indices)>;

struct LoopConfig {
  std::size_t epochs;
  std::size_t batch_size;
  nn::OptimizerConfig optimizer;
  std::size_t window;
  std::uint64_t seed;
};

EpochRecord evaluate_epoch(const Model& model, const EvalPlan& plan, std::size_t epoch) {
  EpochRecord rec;
  rec.epoch = epoch;
  rec.acc = kNaN;
  if (plan.test_set == nullptr) return rec;
  rec.acc = eval::accuracy(model, *plan.test_set);
  for (const auto& spec : plan.specs) {
    rec.asr.push_back(eval::attack_success_rate(model, *plan.test_set, spec, plan.manipulated));
  }
  return rec;
}

void summarize(TrainReport& report, const EvalPlan& plan, std::size_t window) {
  report.window = std::min(window, report.epochs.size());
  std::vector<double> series;
  for (const auto& e : report.epochs) series.push_back(e.acc);
  report.acc = windowed(series, window);
  for (std::size_t s = 0; s < plan.specs.size(); ++s) {
    std::vector<double> asr, acc;
    for (const auto& e : report.epochs) {
      asr.push_back(e.asr[s].asr);
      acc.push_back(e.asr[s].acc);
    }
    report.variants.push_back(plan.specs[s].variant);
    report.asr.push_back(windowed(asr, window));
    report.asr_acc.push_back(windowed(acc, window));
  }
}

void run_loop(Model& model, const data::Dataset& train_set, const LoopConfig& cfg, const EvalPlan& plan,
              const LossFn& loss_fn, TrainReport& report) {
  const auto start = std::chrono::steady_clock::now();
  nn::AdamState<float> state;
  const std::uint64_t batch_seed = derive_seed(cfg.seed, kBatchStream);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& batch : data::make_batches(train_set, cfg.batch_size, derive_seed(batch_seed, epoch), true)) {
      const auto x = data::stack_examples(train_set, batch.indices);
      auto fwd = nn::forward(model, x);
      const auto loss = loss_fn(fwd.logits, batch.indices);
      loss_sum += loss.value * static_cast<double>(batch.indices.size());
      const auto grads = nn::backward(model, fwd.trace, loss.grad, false);
      nn::optimizer_step(model, grads.params, cfg.optimizer, state);
    }
    auto rec = evaluate_epoch(model, plan, epoch);
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    report.epochs.push_back(std::move(rec));
  }
  summarize(report, plan, cfg.window);
  report.seed = cfg.seed;
  report.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void check_plan(const nn::ArchSpec& arch, const EvalPlan& plan) {
  if (plan.test_set == nullptr) return;
  if (plan.test_set->examples.empty()) throw ConfigError("eval plan: empty test set");
  const auto& img = plan.test_set->examples.front().image;
  if (img.channels != arch.channels || img.height != arch.height || img.width != arch.width) {
    throw ShapeError("eval plan: test images do not match the model input shape");
  }
}

void check_train_set(const nn::ArchSpec& arch, const data::Dataset& train_set) {
  train_set.validate();
  const auto& img = train_set.examples.front().image;
  if (img.channels != arch.channels || img.height != arch.height || img.width != arch.width) {
    throw ShapeError("training images are " + std::to_string(img.channels) + "x" + std::to_string(img.height) +
                     "x" + std::to_string(img.width) + " but the model expects " + arch.canonical());
  }
  if (train_set.num_classes > arch.num_classes) throw ConfigError("dataset has more classes than the model");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void KDConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("kd: tau must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("kd: lambda must be in [0, 1]");
  if (batch_size == 0) throw ConfigError("kd: batch_size must be >= 1");
  if (report_window == 0) throw ConfigError("kd: report_window must be >= 1");
  optimizer.validate();
}

KDConfig kd_preset(std::string_view name) {
  KDConfig c;
  if (name == "desk") return c;
  if (name == "paper-short") {
    c.epochs = 50;
    c.report_window = 30;
    return c;
  }
  if (name == "paper-long") {
    c.epochs = 100;
    c.report_window = 30;
    return c;
  }
  throw ConfigError("unknown kd preset '" + std::string(name) + "' (desk, paper-short, paper-long)");
}

void TeacherConfig::validate() const {
  if (batch_size == 0) throw ConfigError("teacher: batch_size must be >= 1");
  if (report_window == 0) throw ConfigError("teacher: report_window must be >= 1");
  optimizer.validate();
}

Stat windowed(std::span<const double> values, std::size_t window) {
  const std::size_t w = std::min(window, values.size());
  if (w == 0) return {kNaN, kNaN};
  const auto tail = values.subspan(values.size() - w);
  double mean = 0.0;
  for (double v : tail) mean += v;
  mean /= static_cast<double>(w);
  double var = 0.0;
  for (double v : tail) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(w))};
}

Stat TrainReport::asr_for(eval::Variant v) const {
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (variants[i] == v) return asr[i];
  }
  return {kNaN, kNaN};
}

Trained train_teacher(const data::Dataset& train_set, const nn::ArchSpec& arch, const TeacherConfig& config,
                      const EvalPlan& plan) {
  config.validate();
  arch.validate();
  check_train_set(arch, train_set);
  check_plan(arch, plan);
  if (train_set.has_poisoned()) {
    throw ConfigError("train_teacher: training data contains poisoned or manipulated examples");
  }
  Trained out{nn::init_network<float>(arch, nn::Role::teacher, derive_seed(config.seed, kInitStream)), {}};
  out.report.config_echo = "kind=teacher;arch=" + arch.canonical() + ";epochs=" + std::to_string(config.epochs) +
                           ";batch_size=" + std::to_string(config.batch_size) +
                           ";optimizer=" + std::string(nn::optimizer_name(config.optimizer.method)) +
                           ";lr=" + fmt(config.optimizer.lr) + ";seed=" + std::to_string(config.seed);
  LossFn loss = [&](const Tensor& logits, std::span<const std::size_t> idx) {
    return nn::cross_entropy_loss(logits, data::labels_of(train_set, idx));
  };
  run_loop(out.params, train_set,
           {config.epochs, config.batch_size, config.optimizer, config.report_window, config.seed}, plan, loss,
           out.report);
  return out;
}

Trained distill(const Model& teacher, const nn::ArchSpec& student_arch, const data::Dataset& train_set,
                const KDConfig& config, const EvalPlan& plan) {
  config.validate();
  student_arch.validate();
  if (teacher.arch.channels != student_arch.channels || teacher.arch.height != student_arch.height ||
      teacher.arch.width != student_arch.width) {
    throw ShapeError("distill: teacher and student input shapes differ");
  }
  if (teacher.arch.num_classes != student_arch.num_classes) {
    throw ShapeError("distill: teacher and student class counts differ");
  }
  check_train_set(student_arch, train_set);
  check_plan(student_arch, plan);

  // The teacher is frozen and inputs are not augmented, so its logits are
  // computed once, without a trace.
  const std::size_t k = teacher.arch.num_classes;
  std::vector<float> teacher_logits;
  teacher_logits.reserve(train_set.size() * k);
  for (std::size_t start = 0; start < train_set.size(); start += kInferChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(train_set.size(), start + kInferChunk); ++i) idx.push_back(i);
    const auto z = nn::infer(teacher, data::stack_examples(train_set, idx));
    teacher_logits.insert(teacher_logits.end(), z.data().begin(), z.data().end());
  }

  Trained out{nn::init_network<float>(student_arch, nn::Role::student, derive_seed(config.seed, kInitStream)), {}};
  out.report.config_echo =
      "kind=student;arch=" + student_arch.canonical() + ";tau=" + fmt(config.tau) + ";lambda=" + fmt(config.lambda) +
      ";epochs=" + std::to_string(config.epochs) + ";batch_size=" + std::to_string(config.batch_size) +
      ";optimizer=" + std::string(nn::optimizer_name(config.optimizer.method)) + ";lr=" + fmt(config.optimizer.lr) +
      ";kl=" + std::string(nn::kl_direction_name(config.direction)) + ";seed=" + std::to_string(config.seed);

  LossFn loss = [&](const Tensor& logits, std::span<const std::size_t> idx) {
    Tensor t({idx.size(), k});
    auto dst = t.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::copy_n(teacher_logits.begin() + static_cast<std::ptrdiff_t>(idx[b] * k), k,
                  dst.begin() + static_cast<std::ptrdiff_t>(b * k));
    }
    return nn::combined_kd_loss(logits, t, data::labels_of(train_set, idx), config.tau, config.lambda,
                                config.direction);
  };
  run_loop(out.params, train_set,
           {config.epochs, config.batch_size, config.optimizer, config.report_window, config.seed}, plan, loss,
           out.report);
  return out;
}

void write_epoch_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write epoch csv: " + path.string());
  out << "epoch,train_loss,acc";
  for (auto v : report.variants) out << ",asr_" << eval::variant_name(v);
  out << '\n';
  out.precision(17);
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.acc;
    for (const auto& m : e.asr) out << ',' << m.asr;
    out << '\n';
  }
  if (!out) throw IoError("failed writing epoch csv: " + path.string());
}

void write_metrics_csv(const TrainReport& report, const std::string& run_id, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics csv: " + path.string());
  out << "run_id,epoch,variant,acc,asr,n\n";
  out.precision(17);
  for (const auto& e : report.epochs) {
    for (const auto& m : e.asr) {
      out << run_id << ',' << e.epoch << ',' << eval::variant_name(m.variant) << ',' << m.acc << ',' << m.asr << ','
          << m.n << '\n';
    }
  }
  if (!out) throw IoError("failed writing metrics csv: " + path.string());
}

}  // namespace kdbd::distill
