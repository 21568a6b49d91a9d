#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rcnnlab/config.hpp"
#include "rcnnlab/metrics.hpp"
#include "rcnnlab/prm.hpp"
#include "rcnnlab/synthdata.hpp"

namespace rcnnlab {

// Training scenes carry no proposals: those are regenerated every step at the
// current RPN quality. Evaluation records hold proposals at eval.quality.
struct Dataset {
  std::vector<Scene> train;
  std::vector<SceneRecord> eval;
};

Dataset build_dataset(const ExperimentConfig& config);

/// Hash over the fields that determine the dataset, used as the cache key.
std::uint64_t dataset_key(const ExperimentConfig& config);

/// Writes dataset.txt (train records, then eval records) and dataset.key.
void save_dataset(const std::filesystem::path& dir, const ExperimentConfig& config, const Dataset& data);
/// Reads the cache back when dataset.key matches; nullopt otherwise.
std::optional<Dataset> load_cached_dataset(const std::filesystem::path& dir, const ExperimentConfig& config);

struct TrainResult {
  PrmModel<double> model;
  MetricsLog log;  // counts and accuracies are head 0's
  std::vector<GradNormRecord> grad_norms;
  std::vector<std::vector<HeadStepStats>> head_stats;  // [step][head]
};

/// Proposal pool for step t: scenes_per_step distinct training scenes, each
/// with freshly drawn proposals at quality t / T.
std::vector<Proposal> training_pool(const ExperimentConfig& config, std::span<const Scene> scenes, std::int64_t t);

/// Called after every step with the step index; lets callers report progress.
using StepCallback = std::function<void(std::int64_t)>;

TrainResult train_model(const ExperimentConfig& config, std::span<const Scene> train_scenes,
                        const StepCallback& on_step = {});

struct SceneCounts {
  std::uint64_t scene_id = 0;
  int gt_count = 0;
  int positive_count = 0;
};

struct EvalResult {
  APResult ensemble;
  std::vector<APResult> per_head;  // each head alone, its own scores and boxes
  std::vector<double> head_mean_fg_score;
  std::vector<std::vector<double>> head_fg_scores;  // [head][proposal]
  std::vector<std::uint64_t> proposal_scene;        // scene id per proposal
  std::optional<ScoreGapStats> gaps;  // needs two or more heads
  std::vector<SceneCounts> scene_counts;
  std::size_t regression_head = 0;
};

EvalResult evaluate_model(const PrmModel<double>& model, std::span<const SceneRecord> records,
                          const EvalConfig& config);

struct RunResult {
  TrainResult train;
  EvalResult eval;
};

/// Data, training and evaluation without touching the file system.
RunResult run_in_memory(const ExperimentConfig& config, const StepCallback& on_step = {});

/// Same as run_in_memory, plus every artifact in config.out_dir:
/// metrics.csv, gradnorm.csv, head_stats.csv, checkpoint.txt, report.txt,
/// summary.json, scene_counts.csv, scores.csv, manifest.json and the dataset
/// cache. Only the manifest timestamp varies between identical runs.
RunResult run_experiment(const ExperimentConfig& config, const StepCallback& on_step = {});

/// Reloads checkpoint.txt from out_dir and re-evaluates; rewrites report.txt
/// and summary.json.
EvalResult evaluate_checkpoint(const ExperimentConfig& config);

void write_report(std::ostream& os, const ExperimentConfig& config, const EvalResult& result);
/// JSON with fixed keys ap_mean, ap50, ap75, ap_bucket_1_3, ap_bucket_8_inf,
/// plus per-head values for multi-head models.
std::string summary_json(const EvalResult& result);

// ---------------------------------------------------------------------------
// sweeps

enum class SweepAxis { lambda0, ratio_pair, sampling_mode };

SweepAxis parse_sweep_axis(const std::string& text);
std::string to_string(SweepAxis axis);

/// Applies one sweep value to a copy of the base config. Values: a real for
/// lambda0, "P:N/P:N[/...]" for ratio_pair, soft|hard for sampling_mode.
ExperimentConfig apply_sweep_value(const ExperimentConfig& base, SweepAxis axis, const std::string& value);

struct SweepCell {
  std::string value;
  std::size_t seeds_ok = 0;
  std::vector<std::string> errors;
  std::optional<double> ap_mean, ap50, ap75, ap_bucket_1_3, ap_bucket_8_inf;
  std::vector<std::optional<double>> head_ap;  // per-head ap_mean medians
};

/// Runs every (value, seed) pair in its own subdirectory of base.out_dir,
/// aggregates medians over successful seeds and writes sweep.csv. A failing
/// run is recorded in its cell and does not stop the rest.
std::vector<SweepCell> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<std::string>& values,
                             const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);

void write_sweep_csv(std::ostream& os, SweepAxis axis, std::span<const SweepCell> cells);

}  // namespace rcnnlab
