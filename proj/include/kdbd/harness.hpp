#pragma once
// Experiment configuration, end-to-end runs, sweeps and result tables.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kdbd/distill.hpp"
#include "kdbd/poison.hpp"
#include "kdbd/synthetic.hpp"

namespace kdbd::harness {

inline constexpr std::string_view kConfigSchema = "kdbd-experiment/1";

struct DatasetSpec {
  enum class Kind { synthetic, cifar10 };
  Kind kind = Kind::synthetic;
  data::SyntheticConfig synthetic;
  std::filesystem::path cifar10_dir;
};

/// Conv block widths and classifier width; the input shape and class count come
/// from the dataset.
struct NetSpec {
  std::vector<std::size_t> blocks{16, 32};
  std::size_t classifier = 64;
  double width_multiplier = 1.0;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  NetSpec teacher_net;
  distill::TeacherConfig teacher;
  /// When set, the teacher is loaded from here instead of trained.
  std::filesystem::path teacher_checkpoint;
  NetSpec student_net;
  poison::PoisonConfig poison;
  distill::KDConfig kd;
  std::vector<eval::Variant> variants{eval::Variant::trigger_only, eval::Variant::manipulated_triggered};
  /// Held-out manipulated test images crafted for manipulated_triggered.
  std::size_t manipulated_count = 50;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "runs";
  /// (original, manipulated, triggered) PPM triples written per run.
  std::size_t sample_dumps = 4;
  std::size_t workers = 1;

  void validate() const;
  eval::EvalSpec eval_spec(eval::Variant v) const;
};

/// Defaults tuned for the desk-scale synthetic task.
ExperimentConfig default_config();

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys and a wrong schema tag are
/// ConfigErrors.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Applies "a.b.c=value" to a config tree. The value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& tree, std::string_view assignment);

nn::ArchSpec teacher_arch(const ExperimentConfig& config);
nn::ArchSpec student_arch(const ExperimentConfig& config);

/// 16 hex digits hashing everything that affects results, plus `seed`.
std::string run_id(const ExperimentConfig& config, std::uint64_t seed);
/// Same idea restricted to the dataset and teacher settings.
std::string teacher_key(const ExperimentConfig& config);

struct ResultRow {
  std::string run_id;
  std::string axis;
  double value = 0.0;
  std::string mode;
  std::uint64_t seed = 0;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  double asr_trigger_mean = 0.0;
  double asr_trigger_std = 0.0;
  double asr_manip_mean = 0.0;  // NaN when the variant was not evaluated
  double asr_manip_std = 0.0;
  std::size_t n_epochs = 0;
  double wall_s = 0.0;

  /// Failure marker rows carry run_id "FAILED:<stage>:<id>" and NaN metrics.
  bool failed() const;
  /// Field-wise equality treating NaN == NaN; wall_s is ignored when requested.
  bool same_as(const ResultRow& other, bool ignore_wall = false) const;
};

inline constexpr std::string_view kResultsHeader =
    "run_id,axis,value,mode,seed,acc_mean,acc_std,asr_trigger_mean,asr_trigger_std,asr_manip_mean,"
    "asr_manip_std,n_epochs,wall_s";

void write_results_csv(std::span<const ResultRow> rows, const std::filesystem::path& path);
std::vector<ResultRow> parse_results_csv(std::istream& in);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

/// Aggregates rows by (axis, value, mode): mean and std over seeds.
std::string emit_summary(std::span<const ResultRow> rows);

/// A failed pipeline stage; `stage` is one of data, teacher, poison, distill, eval, io.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Datasets and the frozen teacher, shared read-only by every run of a sweep.
struct Prepared {
  data::Dataset train;
  data::Dataset test;
  nn::NetworkParams<float> teacher;
  /// Empty when the teacher was loaded rather than trained.
  distill::TrainReport teacher_report;
  double teacher_acc = 0.0;
};

/// Loads the data and trains the teacher, or loads it from
/// config.teacher_checkpoint, or from the cache under output_dir/teachers.
std::shared_ptr<const Prepared> prepare(const ExperimentConfig& config);

struct RunResult {
  ResultRow row;
  std::filesystem::path dir;
  distill::TrainReport report;
  std::size_t poison_samples = 0;
  std::size_t poison_attempted = 0;
};

/// One end-to-end run for `seed`: craft poison, inject, distill, evaluate and
/// write artifacts under output_dir/<run_id>. Stage errors surface as StageError.
RunResult run_once(const ExperimentConfig& config, const Prepared& prepared, std::uint64_t seed);

/// run_once for every configured seed.
std::vector<ResultRow> run_experiment(const ExperimentConfig& config);

enum class Axis { lambda, poison_rate, student_width };
std::string_view axis_name(Axis a);
Axis parse_axis(std::string_view text);

struct SweepSpec {
  Axis axis = Axis::lambda;
  std::vector<double> values;
  std::vector<poison::Mode> modes{poison::Mode::adversarial};
  std::size_t seeds_per_point = 1;
  /// student_width only: each width is run at each of these.
  std::vector<double> lambdas{0.5, 1.0};
  /// One line per finished point, when set.
  std::ostream* progress = nullptr;

  void validate() const;
};

std::vector<double> lambda_grid();       // 0.0, 0.1, ..., 1.0
std::vector<double> rate_grid();         // 0.1, 0.2, ..., 1.0
std::vector<double> width_multipliers(); // 1.0, 0.9, ..., 0.3

/// Seed of one sweep point; independent of how many replicates exist.
std::uint64_t point_seed(std::uint64_t base, double value, poison::Mode mode, std::size_t replicate);

/// Runs every (value, mode, replicate) point on config.workers threads. Failed
/// points become marker rows. Rows come back sorted by (axis, value, mode, seed).
std::vector<ResultRow> sweep(const ExperimentConfig& config, const SweepSpec& spec);

std::vector<ResultRow> sweep_lambda(const ExperimentConfig& config, std::vector<poison::Mode> modes,
                                    std::size_t seeds_per_point);
/// Forces replace-mode injection.
std::vector<ResultRow> sweep_poison_rate(const ExperimentConfig& config, std::vector<poison::Mode> modes,
                                         std::size_t seeds_per_point);
std::vector<ResultRow> sweep_student_width(const ExperimentConfig& config, std::vector<poison::Mode> modes,
                                           std::size_t seeds_per_point);

}  // namespace kdbd::harness
