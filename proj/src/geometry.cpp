#include "rcnnlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rcnnlab {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x2 > x1 && y2 > y1;
}

Box make_box(double x1, double y1, double x2, double y2) {
  Box b{x1, y1, x2, y2};
  if (!b.valid()) {
    throw std::invalid_argument("invalid box [" + std::to_string(x1) + ", " +
                                std::to_string(y1) + ", " + std::to_string(x2) +
                                ", " + std::to_string(y2) + "]");
  }
  return b;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (a == b) return 1.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

ProposalLabel label_proposal(const Box& proposal,
                             std::span<const GroundTruthInstance> gts,
                             double pos_threshold) {
  ProposalLabel label;
  std::optional<std::size_t> best;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const double v = iou(proposal, gts[g].box);
    // strict '>' keeps the lowest index on ties
    if (!best || v > label.max_iou) {
      label.max_iou = v;
      best = g;
    }
  }
  if (best && label.max_iou >= pos_threshold) {
    label.class_id = gts[*best].class_id;
    label.matched_gt = best;
    label.regression_target = encode_deltas(proposal, gts[*best].box);
  }
  return label;
}

std::vector<ProposalLabel> label_proposals(std::span<const Box> proposals,
                                           std::span<const GroundTruthInstance> gts,
                                           double pos_threshold) {
  std::vector<ProposalLabel> labels;
  labels.reserve(proposals.size());
  for (const Box& p : proposals) labels.push_back(label_proposal(p, gts, pos_threshold));
  return labels;
}

Deltas encode_deltas(const Box& proposal, const Box& gt) {
  const double pw = proposal.width();
  const double ph = proposal.height();
  return Deltas((gt.center_x() - proposal.center_x()) / pw,
                (gt.center_y() - proposal.center_y()) / ph,
                std::log(gt.width() / pw),
                std::log(gt.height() / ph));
}

Box decode_box(const Box& proposal, const Deltas& deltas) {
  const double pw = proposal.width();
  const double ph = proposal.height();
  const double cx = proposal.center_x() + deltas[0] * pw;
  const double cy = proposal.center_y() + deltas[1] * ph;
  const double w = pw * std::exp(std::min(deltas[2], kMaxLogDelta));
  const double h = ph * std::exp(std::min(deltas[3], kMaxLogDelta));
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

}  // namespace rcnnlab
