#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rcnnlab/geometry.hpp"
#include "rcnnlab/synthdata.hpp"

namespace rcnnlab {

// ---------------------------------------------------------------------------
// proposal-level instrumentation

struct AccuracyPair {
  std::optional<double> pos_acc;  // absent when the batch has no positives
  std::optional<double> neg_acc;  // absent when the batch has no negatives
};

/// Argmax accuracy split by target group. Argmax ties resolve to the lowest
/// class index.
AccuracyPair proposal_accuracy(const Eigen::MatrixXd& logits, std::span<const int> targets);

/// Max softmax probability over the non-background classes, per row.
std::vector<double> foreground_scores(const Eigen::MatrixXd& logits);
double mean_foreground_score(const Eigen::MatrixXd& logits);

// ---------------------------------------------------------------------------
// detections

struct Detection {
  std::uint64_t scene_id = 0;
  Box box;
  int class_id = 1;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Greedy NMS within each (scene, class) group: visit by descending score
/// (ties in input order) and drop anything with IoU >= threshold against an
/// already kept box. Output is sorted by descending score, stable.
std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold);

struct PostprocessConfig {
  double score_floor = 0.05;  // keep scores strictly above
  double nms_iou = 0.5;
  int max_per_scene = 100;

  friend bool operator==(const PostprocessConfig&, const PostprocessConfig&) = default;
};

/// One candidate per (proposal, foreground class) from softmax scores, then
/// per-class NMS and the per-scene cap.
std::vector<Detection> detections_from_scores(std::span<const Proposal> proposals, const Eigen::MatrixXd& scores,
                                              std::span<const Box> boxes, const PostprocessConfig& config);

// ---------------------------------------------------------------------------
// average precision

/// Scenes with min_count <= #gt <= max_count (no upper bound when absent).
struct GtBucket {
  int min_count = 1;
  std::optional<int> max_count;

  bool contains(std::size_t n) const;
  std::string key() const;  // "1_3", "8_inf"

  friend bool operator==(const GtBucket&, const GtBucket&) = default;
};

std::vector<GtBucket> default_buckets();
std::vector<double> coco_iou_thresholds();  // 0.50:0.05:0.95

struct BucketAP {
  GtBucket bucket;
  std::size_t num_scenes = 0;
  std::optional<double> ap;  // absent when the bucket holds no ground truth
};

struct APResult {
  std::vector<double> thresholds;
  std::vector<double> ap_per_threshold;
  double ap_mean = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::vector<BucketAP> buckets;

  std::optional<double> bucket_ap(const std::string& key) const;
};

/// 101-point interpolated AP for one class at one IoU threshold. Each
/// detection, in descending score order, claims the unmatched same-class gt
/// of highest IoU >= threshold in its scene. Returns nullopt when there is no
/// ground truth of that class.
std::optional<double> class_average_precision(std::span<const Detection> detections, std::span<const Scene> scenes,
                                              int class_id, double iou_threshold);

/// COCO-style AP: mean over classes with ground truth, then over thresholds.
double mean_average_precision(std::span<const Detection> detections, std::span<const Scene> scenes,
                              double iou_threshold);

APResult compute_ap(std::span<const Detection> detections, std::span<const Scene> scenes,
                    std::span<const double> iou_thresholds, std::span<const GtBucket> buckets);

// ---------------------------------------------------------------------------
// head disagreement

struct ScoreGapStats {
  std::vector<double> mean_fg_score;      // per head
  std::vector<double> median_fg_score;    // per head
  std::vector<std::vector<int>> score_histograms;  // per head, bins over [0, 1]
  std::vector<double> gaps;               // |s_0 - s_1| per proposal
  std::vector<int> gap_histogram;
  double mean_gap = 0.0;
  double median_gap = 0.0;
  double gap_threshold = 0.1;
  double frac_gap_above = 0.0;  // fraction of pairs with gap > gap_threshold
};

/// Compares heads 0 and 1; needs at least two heads with congruent outputs.
ScoreGapStats score_gap_stats(std::span<const Eigen::MatrixXd> head_logits, double gap_threshold = 0.1,
                              int bins = 10);

// ---------------------------------------------------------------------------
// series helpers

double median(std::vector<double> values);
/// Spearman rank correlation with average ranks for ties. NaN if either
/// series is constant.
double spearman(std::span<const double> x, std::span<const double> y);
/// Centered moving average; windows are truncated at the ends.
std::vector<double> moving_average(std::span<const double> values, std::size_t window);

// ---------------------------------------------------------------------------
// training log

struct MetricsRow {
  std::int64_t step = 0;
  int pos_count_unique = 0;
  int pos_count_effective = 0;
  std::optional<double> pos_acc;
  std::optional<double> neg_acc;
  double lambda = 1.0;
  std::vector<double> fg_score;  // per head, mean over the head's batch
};

class MetricsLog {
 public:
  /// Throws std::invalid_argument unless steps strictly increase.
  void append(MetricsRow row);
  const std::vector<MetricsRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  /// Columns: step,pos_count_unique,pos_count_effective,pos_acc,neg_acc,
  /// lambda,fg_score_h1[,fg_score_h2...]. Absent accuracies are empty cells.
  void write_csv(std::ostream& os) const;

 private:
  std::vector<MetricsRow> rows_;
};

}  // namespace rcnnlab
