#include "rcnnlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace rcnnlab {

namespace {

Eigen::Index argmax_row(const Eigen::MatrixXd& m, Eigen::Index row) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(row, c) > m(row, best)) best = c;
  return best;
}

}  // namespace

AccuracyPair proposal_accuracy(const Eigen::MatrixXd& logits, std::span<const int> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw std::invalid_argument("proposal_accuracy: row/target count mismatch");
  if (targets.empty()) throw std::invalid_argument("proposal_accuracy: empty batch");
  int pos = 0, pos_ok = 0, neg = 0, neg_ok = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    const bool ok = argmax_row(logits, i) == t;
    if (t > 0) {
      ++pos;
      pos_ok += ok;
    } else {
      ++neg;
      neg_ok += ok;
    }
  }
  AccuracyPair r;
  if (pos > 0) r.pos_acc = static_cast<double>(pos_ok) / pos;
  if (neg > 0) r.neg_acc = static_cast<double>(neg_ok) / neg;
  return r;
}

std::vector<double> foreground_scores(const Eigen::MatrixXd& logits) {
  std::vector<double> out(static_cast<std::size_t>(logits.rows()), 0.0);
  if (logits.cols() < 2) return out;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
    out[static_cast<std::size_t>(i)] = e.tail(e.size() - 1).maxCoeff() / e.sum();
  }
  return out;
}

double mean_foreground_score(const Eigen::MatrixXd& logits) {
  const auto s = foreground_scores(logits);
  if (s.empty()) return 0.0;
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

// ---------------------------------------------------------------------------

namespace {

// Indices sorted by descending score; ties keep input order.
std::vector<std::size_t> by_score(std::span<const Detection> d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a].score > d[b].score; });
  return order;
}

}  // namespace

std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw std::invalid_argument("nms threshold must lie in (0, 1)");
  std::map<std::pair<std::uint64_t, int>, std::vector<std::size_t>> kept_by_group;
  std::vector<Detection> kept;
  for (std::size_t i : by_score(detections)) {
    const Detection& d = detections[i];
    auto& group = kept_by_group[{d.scene_id, d.class_id}];
    const bool suppressed = std::any_of(group.begin(), group.end(), [&](std::size_t k) {
      return iou(kept[k].box, d.box) >= iou_threshold;
    });
    if (suppressed) continue;
    group.push_back(kept.size());
    kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> detections_from_scores(std::span<const Proposal> proposals, const Eigen::MatrixXd& scores,
                                              std::span<const Box> boxes, const PostprocessConfig& config) {
  if (static_cast<std::size_t>(scores.rows()) != proposals.size() || boxes.size() != proposals.size())
    throw std::invalid_argument("detections_from_scores: size mismatch");
  std::vector<Detection> cand;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (!boxes[i].valid()) continue;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      const double s = scores(static_cast<Eigen::Index>(i), c);
      if (s > config.score_floor) cand.push_back({proposals[i].scene_id, boxes[i], static_cast<int>(c), s});
    }
  }
  std::vector<Detection> kept = nms(cand, config.nms_iou);
  // kept is score-sorted, so the cap keeps each scene's top entries
  std::unordered_map<std::uint64_t, int> per_scene;
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (const Detection& d : kept)
    if (++per_scene[d.scene_id] <= config.max_per_scene) out.push_back(d);
  return out;
}

// ---------------------------------------------------------------------------

bool GtBucket::contains(std::size_t n) const {
  return static_cast<long long>(n) >= min_count && (!max_count || static_cast<long long>(n) <= *max_count);
}

std::string GtBucket::key() const {
  return std::to_string(min_count) + "_" + (max_count ? std::to_string(*max_count) : std::string("inf"));
}

std::vector<GtBucket> default_buckets() { return {{1, 3}, {8, std::nullopt}}; }

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

std::optional<double> APResult::bucket_ap(const std::string& key) const {
  for (const auto& b : buckets)
    if (b.bucket.key() == key) return b.ap;
  return std::nullopt;
}

std::optional<double> class_average_precision(std::span<const Detection> detections, std::span<const Scene> scenes,
                                              int class_id, double iou_threshold) {
  std::unordered_map<std::uint64_t, const Scene*> scene_by_id;
  std::size_t num_gt = 0;
  for (const Scene& s : scenes) {
    scene_by_id[s.id] = &s;
    for (const auto& g : s.instances) num_gt += g.class_id == class_id;
  }
  if (num_gt == 0) return std::nullopt;

  std::vector<Detection> dets;
  for (const Detection& d : detections)
    if (d.class_id == class_id && scene_by_id.count(d.scene_id)) dets.push_back(d);

  std::unordered_map<std::uint64_t, std::vector<char>> matched;
  std::vector<double> precision, recall;
  precision.reserve(dets.size());
  recall.reserve(dets.size());
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (std::size_t i : by_score(dets)) {
    const Detection& d = dets[i];
    const Scene& s = *scene_by_id.at(d.scene_id);
    auto& used = matched[d.scene_id];
    used.resize(s.instances.size(), 0);
    double best_iou = iou_threshold;
    std::optional<std::size_t> best;
    for (std::size_t g = 0; g < s.instances.size(); ++g) {
      if (used[g] || s.instances[g].class_id != class_id) continue;
      const double v = iou(d.box, s.instances[g].box);
      if (v >= best_iou && (!best || v > best_iou)) {
        best_iou = v;
        best = g;
      }
    }
    ++seen;
    if (best) {
      used[*best] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }

  // precision envelope, then 101 recall sample points
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

namespace {

std::vector<int> classes_in(std::span<const Scene> scenes) {
  std::set<int> c;
  for (const Scene& s : scenes)
    for (const auto& g : s.instances) c.insert(g.class_id);
  return {c.begin(), c.end()};
}

}  // namespace

double mean_average_precision(std::span<const Detection> detections, std::span<const Scene> scenes,
                              double iou_threshold) {
  double sum = 0.0;
  int n = 0;
  for (int c : classes_in(scenes)) {
    if (auto ap = class_average_precision(detections, scenes, c, iou_threshold)) {
      sum += *ap;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

APResult compute_ap(std::span<const Detection> detections, std::span<const Scene> scenes,
                    std::span<const double> iou_thresholds, std::span<const GtBucket> buckets) {
  if (iou_thresholds.empty()) throw std::invalid_argument("compute_ap: no IoU thresholds");
  APResult r;
  r.thresholds.assign(iou_thresholds.begin(), iou_thresholds.end());
  for (double t : iou_thresholds) r.ap_per_threshold.push_back(mean_average_precision(detections, scenes, t));
  r.ap_mean = std::accumulate(r.ap_per_threshold.begin(), r.ap_per_threshold.end(), 0.0) /
              static_cast<double>(r.ap_per_threshold.size());

  auto at = [&](double thr) {
    for (std::size_t i = 0; i < r.thresholds.size(); ++i)
      if (std::abs(r.thresholds[i] - thr) < 1e-9) return r.ap_per_threshold[i];
    return mean_average_precision(detections, scenes, thr);
  };
  r.ap50 = at(0.5);
  r.ap75 = at(0.75);

  for (const GtBucket& b : buckets) {
    std::vector<Scene> subset;
    for (const Scene& s : scenes)
      if (b.contains(s.instances.size())) subset.push_back(s);
    BucketAP entry{b, subset.size(), std::nullopt};
    if (!classes_in(subset).empty()) {
      double sum = 0.0;
      for (double t : iou_thresholds) sum += mean_average_precision(detections, subset, t);
      entry.ap = sum / static_cast<double>(iou_thresholds.size());
    }
    r.buckets.push_back(entry);
  }
  return r;
}

// ---------------------------------------------------------------------------

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

std::vector<int> histogram(const std::vector<double>& v, int bins) {
  std::vector<int> h(static_cast<std::size_t>(bins), 0);
  for (double x : v) {
    int b = static_cast<int>(std::floor(x * bins));
    ++h[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))];
  }
  return h;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

ScoreGapStats score_gap_stats(std::span<const Eigen::MatrixXd> head_logits, double gap_threshold, int bins) {
  if (head_logits.size() < 2) throw std::invalid_argument("score_gap_stats needs at least two heads");
  if (bins < 1) throw std::invalid_argument("score_gap_stats needs at least one bin");
  ScoreGapStats st;
  st.gap_threshold = gap_threshold;
  std::vector<std::vector<double>> scores;
  for (const auto& l : head_logits) {
    if (l.rows() != head_logits[0].rows() || l.cols() != head_logits[0].cols())
      throw std::invalid_argument("score_gap_stats: heads disagree on output shape");
    scores.push_back(foreground_scores(l));
    const auto& s = scores.back();
    st.mean_fg_score.push_back(s.empty() ? 0.0 : std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size()));
    st.median_fg_score.push_back(s.empty() ? 0.0 : median(s));
    st.score_histograms.push_back(histogram(s, bins));
  }
  const std::size_t n = scores[0].size();
  st.gaps.resize(n);
  std::size_t above = 0;
  for (std::size_t i = 0; i < n; ++i) {
    st.gaps[i] = std::abs(scores[0][i] - scores[1][i]);
    above += st.gaps[i] > gap_threshold;
  }
  st.gap_histogram = histogram(st.gaps, bins);
  if (n > 0) {
    st.mean_gap = std::accumulate(st.gaps.begin(), st.gaps.end(), 0.0) / static_cast<double>(n);
    st.median_gap = median(st.gaps);
    st.frac_gap_above = static_cast<double>(above) / static_cast<double>(n);
  }
  return st;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  if (window == 0) throw std::invalid_argument("moving_average: zero window");
  const std::size_t n = values.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + values[i];
  const std::size_t half = window / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + (window - half));
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

// ---------------------------------------------------------------------------

void MetricsLog::append(MetricsRow row) {
  if (!rows_.empty() && row.step <= rows_.back().step)
    throw std::invalid_argument("metrics log steps must strictly increase");
  rows_.push_back(std::move(row));
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.9g}", *v) : std::string(); }

}  // namespace

void MetricsLog::write_csv(std::ostream& os) const {
  const std::size_t heads = rows_.empty() ? 1 : rows_.front().fg_score.size();
  os << "step,pos_count_unique,pos_count_effective,pos_acc,neg_acc,lambda";
  for (std::size_t h = 0; h < heads; ++h) os << ",fg_score_h" << h + 1;
  os << '\n';
  for (const MetricsRow& r : rows_) {
    fmt::print(os, "{},{},{},{},{},{:.9g}", r.step, r.pos_count_unique, r.pos_count_effective, cell(r.pos_acc),
               cell(r.neg_acc), r.lambda);
    for (double s : r.fg_score) fmt::print(os, ",{:.9g}", s);
    os << '\n';
  }
}

}  // namespace rcnnlab
