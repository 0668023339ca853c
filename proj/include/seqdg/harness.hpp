#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "seqdg/algorithms.hpp"
#include "seqdg/domains.hpp"
#include "seqdg/toml.hpp"

namespace seqdg {

// held_out value meaning "sweep every leave-one-out fold".
inline constexpr int kAllFolds = -1;

// Where the training data comes from: a saved dataset file when `path` is
// set, otherwise the rotated-Gaussian generator with the parameters below.
struct DatasetSpec {
  std::filesystem::path path;
  int domains = 4;
  int classes = 3;
  int samples_per_domain = 200;
  double angle_step = 25.0;
  double noise = 0.35;
  std::uint64_t seed = 7;

  DomainSet realize() const;
};

struct ExperimentConfig {
  Method method = Method::Agg;
  std::string preset;  // name of the applied preset, empty if none
  DatasetSpec dataset;
  std::vector<int> layers{2, 16, 3};
  bool batchnorm = false;
  int held_out = kAllFolds;
  HyperParams hp;
  int iters = 1000;
  int batch_size = 32;
  int eval_every = 100;
  std::vector<std::uint64_t> seeds{0};
  double train_frac = 0.7;
  bool aggregate_mtrain = false;
  bool undo_squared_penalty = false;

  // Structural checks that need no dataset (ranges, non-empty seed list,
  // hyperparameter validity). Data-dependent checks live in run_experiment.
  void validate() const;

  // Canonical flat rendering of every resolved field; two configs hash
  // equal iff these strings are equal.
  std::string canonical_string() const;
  std::string config_hash() const;  // 16 hex digits, FNV-1a over the above

  ModelSpec model_spec() const;
  TrainConfig to_train_config(std::uint64_t seed) const;
};

// Named hyperparameter bundles; they set the method, step sizes, and loss
// weights, plus batchnorm for the ixmas_* family. Everything else is left
// untouched. Unknown names throw with the list of valid ones.
void apply_preset(ExperimentConfig& cfg, std::string_view name);
std::vector<std::string> preset_names();

// Builds a config from parsed TOML: defaults, then the preset if one is
// named, then every explicit key. Unknown keys are errors.
ExperimentConfig config_from_toml(const toml::Table& table);
ExperimentConfig config_from_toml_text(const std::string& text);
ExperimentConfig config_from_toml_file(const std::filesystem::path& path);

struct FoldSeedRun {
  int held_out = 0;
  std::uint64_t seed = 0;
  double holdout_accuracy = 0.0;
  double final_train_loss = 0.0;
  double seconds_per_iter = 0.0;  // wall clock; kept out of report.json
  std::vector<MetricsRow> metrics;
  ParamVector params;  // inference parameters, not serialized
};

struct FoldSummary {
  int held_out = 0;
  double mean_accuracy = 0.0;
  double std_error = 0.0;
};

struct RunReport {
  std::string config_hash;
  Method method = Method::Agg;
  std::size_t seed_count = 0;
  std::vector<FoldSeedRun> runs;  // fold-major, seed-minor order
  std::vector<FoldSummary> folds;
  double overall_mean = 0.0;
  double overall_std_error = 0.0;
};

// Caps a requested worker count by the SEQDG_THREADS environment variable;
// requests below 1 mean "hardware concurrency".
int resolve_jobs(int requested);

// Runs every (fold, seed) cell of the experiment. held_out = kAllFolds
// sweeps all leave-one-out folds; otherwise the single named fold runs.
// Cells execute on up to `jobs` worker threads; each run is internally
// single-threaded and results are assembled in a fixed order, so the report
// is identical for every job count. A failing cell aborts the experiment
// with the fold and seed named in the error.
RunReport run_experiment(const ExperimentConfig& cfg, const DomainSet& data, int jobs = 1);
RunReport run_experiment(const ExperimentConfig& cfg, int jobs = 1);

// Deterministic report body: everything except wall-clock timing.
nlohmann::ordered_json report_to_json(const RunReport& report);
void write_report_json(const RunReport& report, const std::filesystem::path& path);
// Wall-clock companion file, separated so report.json stays byte-stable.
void write_timing_json(const RunReport& report, const std::filesystem::path& path);
// Full metric log: held_out,seed,iter,train_loss,holdout_accuracy,alignment_mean.
void write_metrics_csv(const RunReport& report, const std::filesystem::path& path);

// One CSV per figure type, written into `dir`:
//   accuracy_bars.csv      held_out,seed,accuracy
//   loss_curves.csv        held_out,seed,iter,train_loss,holdout_accuracy
//   alignment_traces.csv   held_out,seed,iter,alignment_mean
void emit_plot_data(const RunReport& report, const std::filesystem::path& dir);

// Minimal structural validator for the checked-in report schema: supports
// "type", "required", "properties", "items", "enum", and boolean
// "additionalProperties". Throws std::runtime_error naming the offending
// path on the first violation.
void validate_report_schema(const nlohmann::json& report, const nlohmann::json& schema);

struct BenchRow {
  Method method = Method::Agg;
  double mean_seconds = 0.0;
  double stddev_seconds = 0.0;
  double ratio_to_agg = 1.0;
};

// Per-iteration wall clock of each method on an identical workload (same
// data, model, initial parameters, and batch stream shape). An AGG baseline
// row is always first; timing starts after `warmup_iters` untimed updates.
std::vector<BenchRow> benchmark_runtime(std::span<const Method> methods,
                                        const ExperimentConfig& cfg, const DomainSet& data,
                                        int warmup_iters = 100, int measured_iters = 1000);

}  // namespace seqdg
