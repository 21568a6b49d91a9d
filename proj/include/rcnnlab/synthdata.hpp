#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rcnnlab/geometry.hpp"
#include "rcnnlab/random.hpp"

namespace rcnnlab {

struct GtCountWeight {
  int count = 1;
  double weight = 1.0;

  friend bool operator==(const GtCountWeight&, const GtCountWeight&) = default;
};

/// Uniform mixture over 1..12 instances per scene.
std::vector<GtCountWeight> default_gt_count_mixture();

struct SceneConfig {
  double width = 100.0;
  double height = 100.0;
  int num_classes = 3;
  double min_size = 8.0;
  double max_size = 30.0;
  std::vector<GtCountWeight> gt_counts = default_gt_count_mixture();

  /// Throws std::invalid_argument on an unusable config.
  void validate() const;
};

struct Scene {
  std::uint64_t id = 0;
  double width = 100.0;
  double height = 100.0;
  std::vector<GroundTruthInstance> instances;

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Simulated RPN. Coordinate jitter shrinks linearly with training quality.
struct RpnQualityModel {
  double sigma_start = 0.6;
  double sigma_end = 0.03;
  int n_fg = 8;   // jittered copies per ground truth
  int n_bg = 56;  // uniform background boxes per scene
  double bg_min_size = 8.0;
  double bg_max_size = 30.0;
  double pos_threshold = kDefaultPositiveIou;

  double sigma_at(double quality) const { return sigma_start + quality * (sigma_end - sigma_start); }
  void validate() const;
};

/// Surrogate RoI features: IoU-scaled class one-hot followed by pure noise dims.
struct FeatureModel {
  int num_classes = 3;
  int noise_dims = 8;
  double noise_sigma = 0.25;

  int dim() const { return num_classes + noise_dims; }
  void validate() const;
};

struct Proposal {
  std::uint64_t scene_id = 0;
  Box box;
  Eigen::VectorXd feature;
  ProposalLabel label;
};

Scene generate_scene(const SceneConfig& config, std::uint64_t id, std::uint64_t seed);

/// Scenes with ids first_id.. and per-scene seeds derived from base_seed.
std::vector<Scene> generate_scenes(const SceneConfig& config, std::size_t count,
                                   std::uint64_t base_seed, std::uint64_t first_id = 0);

/// Linear training-quality curve t / T.
double quality_at(std::int64_t t, std::int64_t total);

std::vector<Proposal> generate_proposals(const Scene& scene, double quality,
                                         const RpnQualityModel& rpn,
                                         const FeatureModel& features, std::uint64_t seed);

Eigen::VectorXd proposal_features(const ProposalLabel& label, const Scene& scene,
                                  const FeatureModel& model, Rng& rng);
Eigen::VectorXd proposal_features(const ProposalLabel& label, const Scene& scene,
                                  const FeatureModel& model, std::uint64_t seed);

int count_positive(std::span<const Proposal> proposals);

// Line-delimited dataset files. Layout, one record per scene:
//
//   scene <id> <width> <height> <n_instances> <n_proposals>
//   gt <class_id> <x1> <y1> <x2> <y2>                        (n_instances lines)
//   prop <x1> <y1> <x2> <y2> <class_id> <max_iou> <matched_gt|->
//        <tx> <ty> <tw> <th> (or - - - - for background) <dim> <f_1> ... <f_dim>
//
// Reals are written as C99 hex floats so a read returns the exact bits.
struct SceneRecord {
  Scene scene;
  std::vector<Proposal> proposals;
};

void write_dataset(std::ostream& os, std::span<const SceneRecord> records);
std::vector<SceneRecord> read_dataset(std::istream& is);

}  // namespace rcnnlab
