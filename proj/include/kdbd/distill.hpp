#pragma once
// Supervised teacher training and the distillation loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kdbd/data.hpp"
#include "kdbd/eval.hpp"
#include "kdbd/loss.hpp"
#include "kdbd/network.hpp"
#include "kdbd/optimizer.hpp"

namespace kdbd::distill {

using Model = nn::NetworkParams<float>;

struct KDConfig {
  double tau = 5.0;
  double lambda = 0.5;
  std::size_t batch_size = 64;
  nn::OptimizerConfig optimizer;
  std::size_t epochs = 40;
  std::size_t report_window = 10;
  std::uint64_t seed = 0;
  nn::KlDirection direction = nn::KlDirection::teacher_as_target;

  void validate() const;
};

/// Epoch presets: "desk" (40 epochs, window 10), "paper-short" (50, 30), "paper-long" (100, 30).
KDConfig kd_preset(std::string_view name);

struct TeacherConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  nn::OptimizerConfig optimizer;
  std::size_t report_window = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

/// What to measure after each epoch. With no test set, nothing is evaluated.
struct EvalPlan {
  const data::Dataset* test_set = nullptr;
  std::vector<eval::EvalSpec> specs;
  /// Held-out manipulated images for the manipulated_triggered variant.
  std::vector<data::Image> manipulated;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double acc = 0.0;                     // clean test accuracy (NaN without a test set)
  std::vector<eval::MetricsRow> asr;    // one per EvalPlan spec
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

/// Population mean/std of the last min(window, size) values.
Stat windowed(std::span<const double> values, std::size_t window);

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t window = 0;
  Stat acc;
  std::vector<eval::Variant> variants;
  std::vector<Stat> asr;        // parallel to variants
  std::vector<Stat> asr_acc;    // windowed MetricsRow::acc, parallel to variants
  double wall_s = 0.0;
  std::uint64_t seed = 0;
  std::string config_echo;      // key=value pairs

  /// Windowed ASR for `v`; NaN stats when the variant was not evaluated.
  Stat asr_for(eval::Variant v) const;
};

struct Trained {
  Model params;
  TrainReport report;
};

/// Cross-entropy training of a teacher on clean data. Rejects datasets holding
/// poisoned or companion examples.
Trained train_teacher(const data::Dataset& train_set, const nn::ArchSpec& arch, const TeacherConfig& config,
                      const EvalPlan& plan = {});

/// Trains a fresh student with (1 - lambda) * CE + lambda * tau^2 * KL against
/// the frozen teacher.
Trained distill(const Model& teacher, const nn::ArchSpec& student_arch, const data::Dataset& train_set,
                const KDConfig& config, const EvalPlan& plan = {});

/// One row per epoch: epoch,train_loss,acc,asr_<variant>...
void write_epoch_csv(const TrainReport& report, const std::filesystem::path& path);
/// Long form: run_id,epoch,variant,acc,asr,n
void write_metrics_csv(const TrainReport& report, const std::string& run_id, const std::filesystem::path& path);

}  // namespace kdbd::distill
