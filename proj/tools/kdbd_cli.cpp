// Command-line front end: train-teacher, craft-poison, distill, evaluate, sweep.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdbd/checkpoint.hpp"
#include "kdbd/error.hpp"
#include "kdbd/harness.hpp"
#include "kdbd/ppm.hpp"
#include "kdbd/random.hpp"

namespace fs = std::filesystem;
using namespace kdbd;

namespace {

constexpr int kOk = 0;
constexpr int kConfigFailure = 1;
constexpr int kRuntimeFailure = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "Experiment config (JSON, schema kdbd-experiment/1)");
  cmd->add_option("-s,--set", c.overrides, "Override a config key, e.g. --set kd.lambda=1.0 (repeatable)");
}

harness::ExperimentConfig load(const Common& c) {
  nlohmann::json tree;
  if (c.config_path.empty()) {
    tree = harness::to_json(harness::default_config());
  } else {
    std::ifstream in(c.config_path);
    if (!in) throw ConfigError("cannot open config file " + c.config_path);
    tree = nlohmann::json::parse(in, nullptr, false);
    if (tree.is_discarded()) throw ConfigError("config " + c.config_path + " is not valid JSON");
  }
  for (const auto& o : c.overrides) harness::apply_override(tree, o);
  return harness::config_from_json(tree);
}

std::vector<poison::Mode> parse_modes(const std::vector<std::string>& names) {
  std::vector<poison::Mode> out;
  for (const auto& n : names) out.push_back(poison::parse_mode(n));
  return out;
}

void print_row(const harness::ResultRow& r) {
  std::cout << r.run_id << "  mode=" << r.mode << "  seed=" << r.seed << "  acc=" << r.acc_mean << " +- "
            << r.acc_std << "  asr_trigger=" << r.asr_trigger_mean << " +- " << r.asr_trigger_std
            << "  asr_manip=" << r.asr_manip_mean << "  epochs=" << r.n_epochs << "  wall=" << r.wall_s << "s\n";
}

int cmd_show_config(const Common& c) {
  std::cout << harness::to_json(load(c)).dump(2) << '\n';
  return kOk;
}

int cmd_train_teacher(const Common& c, const std::string& out) {
  auto config = load(c);
  auto prep = harness::prepare(config);
  const fs::path cache = config.output_dir / "teachers" / (harness::teacher_key(config) + ".ckpt");
  if (!out.empty()) nn::save_checkpoint(prep->teacher, out);
  std::cout << "teacher " << prep->teacher.arch.canonical() << "\n"
            << "test accuracy " << prep->teacher_acc << "\n"
            << "checkpoint " << (config.teacher_checkpoint.empty() ? cache : config.teacher_checkpoint).string()
            << (out.empty() ? "" : " (copied to " + out + ")") << '\n';
  return kOk;
}

int cmd_craft_poison(const Common& c, std::string out) {
  auto config = load(c);
  auto prep = harness::prepare(config);
  auto pc = config.poison;
  pc.seed = derive_seed(config.seeds.front(), fnv1a64("run/poison"));
  pc.workers = config.workers;
  const auto set = poison::craft_poison(prep->teacher, prep->train, pc);
  const fs::path dir = out.empty() ? config.output_dir / "poison" : fs::path(out);
  fs::create_directories(dir / "samples");
  poison::write_audit_csv(set, dir / "audit.csv");
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const std::string stem = "sample" + std::to_string(i) + "_id" + std::to_string(set.samples[i].id);
    data::write_ppm(set.manipulated[i], dir / "samples" / (stem + "_manipulated.ppm"));
    data::write_ppm(set.samples[i].image, dir / "samples" / (stem + "_triggered.ppm"));
  }
  for (std::size_t i = 0; i < set.companion_clean.size(); ++i) {
    data::write_ppm(set.companion_clean[i].image,
                    dir / "samples" / ("companion" + std::to_string(i) + "_id" +
                                       std::to_string(set.companion_clean[i].id) + ".ppm"));
  }
  std::cout << "mode " << poison::mode_name(pc.mode) << ": " << set.samples.size() << " samples from "
            << set.attempted << " attempts (" << set.dropped << " dropped, " << set.companion_clean.size()
            << " companions)\naudit " << (dir / "audit.csv").string() << '\n';
  return kOk;
}

int cmd_distill(const Common& c, const std::string& results) {
  auto config = load(c);
  const auto rows = harness::run_experiment(config);
  for (const auto& r : rows) print_row(r);
  const fs::path path = results.empty() ? config.output_dir / "results.csv" : fs::path(results);
  harness::write_results_csv(rows, path);
  std::cout << "results " << path.string() << '\n';
  return kOk;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint) {
  auto config = load(c);
  auto prep = harness::prepare(config);
  const auto model = nn::load_checkpoint(checkpoint);
  std::cout << "clean accuracy " << eval::accuracy(model, prep->test) << '\n';
  for (auto v : config.variants) {
    if (v == eval::Variant::manipulated_triggered) {
      std::cout << eval::variant_name(v) << ": skipped (needs a crafted held-out set; see distill output)\n";
      continue;
    }
    const auto row = eval::attack_success_rate(model, prep->test, config.eval_spec(v));
    std::cout << eval::variant_name(v) << ": asr " << row.asr << "  acc " << row.acc << "  n " << row.n << '\n';
  }
  std::cout << "confusion matrix (rows true, columns predicted)\n";
  for (const auto& r : eval::confusion_matrix(model, prep->test)) {
    for (auto n : r) std::cout << ' ' << n;
    std::cout << '\n';
  }
  return kOk;
}

struct SweepArgs {
  std::string axis = "lambda";
  std::vector<double> values;
  std::vector<std::string> modes{"adversarial"};
  std::size_t seeds = 1;
  std::vector<double> lambdas{0.5, 1.0};
  std::string results;
  bool quiet = false;
};

int cmd_sweep(const Common& c, const SweepArgs& a) {
  auto config = load(c);
  harness::SweepSpec spec;
  spec.axis = harness::parse_axis(a.axis);
  spec.values = a.values;
  if (spec.values.empty()) {
    spec.values = spec.axis == harness::Axis::lambda        ? harness::lambda_grid()
                  : spec.axis == harness::Axis::poison_rate ? harness::rate_grid()
                                                            : harness::width_multipliers();
  }
  spec.modes = parse_modes(a.modes);
  spec.seeds_per_point = a.seeds;
  spec.lambdas = a.lambdas;
  if (!a.quiet) spec.progress = &std::cerr;
  const auto rows = harness::sweep(config, spec);
  const fs::path path =
      a.results.empty() ? config.output_dir / ("sweep_" + std::string(harness::axis_name(spec.axis)) + ".csv")
                        : fs::path(a.results);
  harness::write_results_csv(rows, path);
  std::cout << harness::emit_summary(rows) << "\nresults " << path.string() << '\n';
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.failed();
  return failed == 0 ? kOk : kRuntimeFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor attacks on knowledge distillation: desk-scale laboratory"};
  app.require_subcommand(1);

  Common common;
  auto* show = app.add_subcommand("show-config", "Print the effective config after overrides");
  add_common(show, common);

  std::string teacher_out;
  auto* train = app.add_subcommand("train-teacher", "Train (or load from cache) the teacher and report accuracy");
  add_common(train, common);
  train->add_option("-o,--out", teacher_out, "Also write the teacher checkpoint here");

  std::string poison_out;
  auto* craft = app.add_subcommand("craft-poison", "Craft the poison set and write the audit and sample images");
  add_common(craft, common);
  craft->add_option("-o,--out", poison_out, "Output directory (default <output_dir>/poison)");

  std::string results_out;
  auto* dist = app.add_subcommand("distill", "Full run per configured seed: poison, distill, evaluate");
  add_common(dist, common);
  dist->add_option("-r,--results", results_out, "Results CSV (default <output_dir>/results.csv)");

  std::string checkpoint;
  auto* evalc = app.add_subcommand("evaluate", "Evaluate a student checkpoint on the clean and triggered test sets");
  add_common(evalc, common);
  evalc->add_option("-m,--model", checkpoint, "Checkpoint to evaluate")->required();

  SweepArgs sw;
  auto* swc = app.add_subcommand("sweep", "Sweep lambda, poison rate or student width");
  add_common(swc, common);
  swc->add_option("-a,--axis", sw.axis, "lambda | poison_rate | student_width")->capture_default_str();
  swc->add_option("-v,--values", sw.values, "Axis values (default: the standard grid for the axis)");
  swc->add_option("-m,--modes", sw.modes, "Poison modes: none adversarial interpolation traditional")
      ->capture_default_str();
  swc->add_option("-n,--seeds-per-point", sw.seeds, "Replicates per point")->capture_default_str();
  swc->add_option("-l,--lambdas", sw.lambdas, "student_width only: lambda values")->capture_default_str();
  swc->add_option("-r,--results", sw.results, "Results CSV (default <output_dir>/sweep_<axis>.csv)");
  swc->add_flag("-q,--quiet", sw.quiet, "No per-point progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigFailure;
  }

  try {
    if (show->parsed()) return cmd_show_config(common);
    if (train->parsed()) return cmd_train_teacher(common, teacher_out);
    if (craft->parsed()) return cmd_craft_poison(common, poison_out);
    if (dist->parsed()) return cmd_distill(common, results_out);
    if (evalc->parsed()) return cmd_evaluate(common, checkpoint);
    if (swc->parsed()) return cmd_sweep(common, sw);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kConfigFailure;
}
