#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rcnnlab/metrics.hpp"
#include "rcnnlab/net.hpp"
#include "rcnnlab/prm.hpp"
#include "rcnnlab/rga.hpp"
#include "rcnnlab/sampler.hpp"
#include "rcnnlab/synthdata.hpp"

namespace rcnnlab {

enum class ExperimentMode { baseline, rga, prm, rga_prm };

std::string to_string(ExperimentMode mode);
/// Accepts baseline, rga, prm, rga+prm.
ExperimentMode parse_mode(const std::string& text);

struct EvalConfig {
  int num_scenes = 500;
  double quality = 1.0;  // RPN quality used to produce evaluation proposals
  std::vector<double> iou_thresholds = coco_iou_thresholds();
  PostprocessConfig post;
  std::vector<GtBucket> buckets = default_buckets();
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ExperimentMode mode = ExperimentMode::baseline;
  std::string out_dir = "runs/default";
  int train_scenes = 2000;
  int scenes_per_step = 10;

  SceneConfig scene;
  RpnQualityModel rpn;
  FeatureModel features;

  SamplingMode sampling = SamplingMode::soft;
  int batch_size = 512;
  SamplingRatio ratio{1, 3};                              // single-head modes
  std::vector<SamplingRatio> prm_ratios{{1, 1}, {1, 9}};  // parallel-head modes

  double lambda0 = 7.0;
  bool anneal = true;

  TrainConfig train;
  EvalConfig eval;

  bool rga_enabled() const { return mode == ExperimentMode::rga || mode == ExperimentMode::rga_prm; }
  bool prm_enabled() const { return mode == ExperimentMode::prm || mode == ExperimentMode::rga_prm; }

  std::vector<HeadSpec> head_specs() const;
  std::optional<AnnealSchedule> rga_schedule() const;

  /// Throws ConfigError (line 0) when a field is out of range.
  void validate() const;

  /// Every field that influences results, one "section.key = value" per line.
  /// The output directory is not part of it.
  std::string canonical() const;
  /// FNV-1a 64 of canonical().
  std::uint64_t hash() const;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "config line " + std::to_string(line) + ": " + what : "config: " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Parses an INI-style document: "[section]" headers, "key = value" lines,
/// '#' or ';' comments. Omitted keys keep their defaults; unknown sections or
/// keys are rejected. The seed is mandatory unless seed_override is given.
ExperimentConfig parse_config(std::string_view text, std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace rcnnlab
