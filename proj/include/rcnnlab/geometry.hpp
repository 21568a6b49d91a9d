#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace rcnnlab {

/// Axis-aligned box in continuous scene units, corners (x1, y1) and (x2, y2).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 1.0;
  double y2 = 1.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

/// Builds a box and throws std::invalid_argument unless x2 > x1, y2 > y1 and
/// all corners are finite.
Box make_box(double x1, double y1, double x2, double y2);

/// (tx, ty, tw, th) in center/size log-space.
using Deltas = Eigen::Vector4d;

struct GroundTruthInstance {
  Box box;
  int class_id = 1;  // 0 is background and never used here

  friend bool operator==(const GroundTruthInstance&, const GroundTruthInstance&) = default;
};

struct ProposalLabel {
  int class_id = 0;
  double max_iou = 0.0;
  std::optional<std::size_t> matched_gt;
  std::optional<Deltas> regression_target;

  bool positive() const { return class_id > 0; }
};

inline constexpr double kDefaultPositiveIou = 0.5;
inline constexpr double kMaxLogDelta = 4.0;

double iou(const Box& a, const Box& b);

/// Assigns each proposal the class of its max-IoU ground truth when that IoU
/// is >= pos_threshold, background otherwise. Ties go to the lowest gt index.
std::vector<ProposalLabel> label_proposals(std::span<const Box> proposals,
                                           std::span<const GroundTruthInstance> gts,
                                           double pos_threshold = kDefaultPositiveIou);

ProposalLabel label_proposal(const Box& proposal,
                             std::span<const GroundTruthInstance> gts,
                             double pos_threshold = kDefaultPositiveIou);

Deltas encode_deltas(const Box& proposal, const Box& gt);

/// Inverse of encode_deltas. tw and th are clamped to kMaxLogDelta before
/// exponentiation.
Box decode_box(const Box& proposal, const Deltas& deltas);

}  // namespace rcnnlab
