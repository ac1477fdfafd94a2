#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sslv/augment.hpp"
#include "sslv/data.hpp"
#include "sslv/encore.hpp"
#include "sslv/models.hpp"
#include "sslv/semivt.hpp"

namespace sslv::cli {

enum class Method { supervised, dist, semivt, encore };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct SplitSpec {
  double labeled_fraction = 0.03125;
  double val_fraction = 0.125;
  double test_fraction = 0.25;
  uint64_t seed = 7;
};

struct SemiVtParams {
  double prototype_momentum = 0.9;
  double margin = 0.2;
  double tau = 0.8;
  double lambda_clp = 1.0;
  double lambda_tcr = 1.0;
  double teacher_momentum = 0.99;
  int short_window = 0;
};

struct EncoreParams {
  int epochs = 20;
  double lr = 0.02;
  double momentum = 0.9;
  models::Optimizer optimizer = models::Optimizer::adam;
  int batch_size = 8;
  bool adaptive = true;
  double fixed_threshold = 0.9;
  int recalib_period = 5;
  std::vector<double> percentiles = {10.0, 25.0, 50.0};
  std::vector<double> offsets = {};
  std::vector<double> fixed_candidates = {0.5, 0.7, 0.9};
  double fallback_t0 = 0.5;
  double initial_threshold = 0.9;
  double calib_fraction = 0.25;
  double unsup_weight = 0.5;
  double dice_loss_weight = 1.0;
};

struct ExperimentConfig {
  Method method = Method::supervised;
  std::string output_dir = "runs/experiment";
  std::vector<uint64_t> seeds = {1};

  std::string dataset_kind = "clips";  // "clips" or "segmentation"
  data::SyntheticClipSpec clip_spec;
  data::SyntheticSegSpec seg_spec;
  SplitSpec split;

  models::ModelConfig model;
  models::TrainConfig train;  // train.seed is replaced per experiment seed
  augment::AugmentSpec augment;
  SemiVtParams semivt;
  EncoreParams encore;

  void validate() const;  // throws InvalidInput
};

// TOML-style key/value sections; unknown sections or keys are parse errors so
// every hyperparameter in a config is meaningful.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Every field materialized, including defaults; parsing the result
// reproduces the config exactly.
std::string resolved_config_text(const ExperimentConfig& config);

struct SeedOutcome {
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<std::string> csv_rows;  // aggregate rows, without header
  std::string report_json;
};

struct RunSummary {
  std::vector<SeedOutcome> outcomes;
  std::string aggregate_csv_path;
  bool all_ok() const;
};

inline constexpr const char* kAggregateHeader =
    "method,seed,split,stage,accuracy,macro_f1,dice,pseudo_precision";

// Runs every seed (in parallel unless SSLV_DETERMINISTIC=1), writes
// resolved.toml, per-seed report.json files, and aggregate.csv under
// config.output_dir.
RunSummary run_experiment(const ExperimentConfig& config);

struct ComparisonRow {
  std::string method;
  std::string dir;
  int n_seeds = 0;
  double median = 0.0;
  double iqr = 0.0;
  double delta_median = 0.0;  // vs baseline, paired per seed
  std::vector<std::pair<uint64_t, double>> per_seed_delta;
};

// Reads aggregate.csv from each run dir. The comparison metric is accuracy
// when present, dice otherwise; dist runs contribute their stage-2 rows.
std::vector<ComparisonRow> compare_runs(const std::vector<std::string>& run_dirs,
                                        const std::string& baseline);

std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::string comparison_table(const std::vector<ComparisonRow>& rows);

// Exit codes: 0 success, 2 config error, 3 runtime failure.
int main_run(const std::string& config_path, const std::string& out_override,
             int64_t seed_override, std::ostream& out, std::ostream& err);
int main_compare(const std::vector<std::string>& run_dirs,
                 const std::string& baseline, std::ostream& out,
                 std::ostream& err);

}  // namespace sslv::cli
