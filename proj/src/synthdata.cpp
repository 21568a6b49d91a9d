#include "rcnnlab/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rcnnlab {

std::vector<GtCountWeight> default_gt_count_mixture() {
  std::vector<GtCountWeight> mix;
  for (int c = 1; c <= 12; ++c) mix.push_back({c, 1.0 / 12.0});
  return mix;
}

void SceneConfig::validate() const {
  if (!(width > 0.0) || !(height > 0.0)) throw std::invalid_argument("scene extent must be positive");
  if (num_classes < 1) throw std::invalid_argument("scene needs at least one class");
  if (!(min_size > 0.0) || min_size > max_size)
    throw std::invalid_argument("box size range must satisfy 0 < min_size <= max_size");
  if (min_size > width || min_size > height)
    throw std::invalid_argument("minimum box size exceeds scene extent");
  if (gt_counts.empty()) throw std::invalid_argument("gt count mixture is empty");
  double total = 0.0;
  for (const auto& [count, weight] : gt_counts) {
    if (count < 0) throw std::invalid_argument("gt count must be >= 0");
    if (weight < 0.0) throw std::invalid_argument("gt count weight must be >= 0");
    total += weight;
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("gt count weights must sum to 1");
}

void RpnQualityModel::validate() const {
  if (!(sigma_start >= sigma_end) || sigma_end < 0.0)
    throw std::invalid_argument("rpn jitter must satisfy sigma_start >= sigma_end >= 0");
  if (n_fg < 1 || n_bg < 1) throw std::invalid_argument("rpn proposal counts must be >= 1");
  if (!(bg_min_size > 0.0) || bg_min_size > bg_max_size)
    throw std::invalid_argument("background box size range must satisfy 0 < min <= max");
  if (!(pos_threshold > 0.0 && pos_threshold < 1.0))
    throw std::invalid_argument("positive IoU threshold must lie in (0, 1)");
}

void FeatureModel::validate() const {
  if (num_classes < 1 || noise_dims < 0) throw std::invalid_argument("bad feature dimensions");
  if (noise_sigma < 0.0) throw std::invalid_argument("feature noise must be >= 0");
}

namespace {

int draw_gt_count(const std::vector<GtCountWeight>& mix, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (const auto& [count, weight] : mix) {
    acc += weight;
    if (u < acc) return count;
  }
  // u landed in the rounding slack above the last cumulative weight
  for (auto it = mix.rbegin(); it != mix.rend(); ++it)
    if (it->weight > 0.0) return it->count;
  return mix.back().count;
}

Box uniform_box(double extent_w, double extent_h, double min_size, double max_size, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double w = min_size + unit(rng) * (std::min(max_size, extent_w) - min_size);
  const double h = min_size + unit(rng) * (std::min(max_size, extent_h) - min_size);
  const double x1 = unit(rng) * (extent_w - w);
  const double y1 = unit(rng) * (extent_h - h);
  return Box{x1, y1, x1 + w, y1 + h};
}

constexpr double kMinProposalSide = 1.0;
constexpr int kMaxJitterAttempts = 64;

Box jitter_box(const Box& gt, double sigma, double extent_w, double extent_h, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sw = sigma * gt.width();
  const double sh = sigma * gt.height();
  for (int attempt = 0; attempt < kMaxJitterAttempts; ++attempt) {
    Box b{gt.x1 + sw * normal(rng), gt.y1 + sh * normal(rng),
          gt.x2 + sw * normal(rng), gt.y2 + sh * normal(rng)};
    b.x1 = std::clamp(b.x1, 0.0, extent_w);
    b.x2 = std::clamp(b.x2, 0.0, extent_w);
    b.y1 = std::clamp(b.y1, 0.0, extent_h);
    b.y2 = std::clamp(b.y2, 0.0, extent_h);
    if (b.width() >= kMinProposalSide && b.height() >= kMinProposalSide) return b;
  }
  return gt;
}

}  // namespace

Scene generate_scene(const SceneConfig& config, std::uint64_t id, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Scene scene;
  scene.id = id;
  scene.width = config.width;
  scene.height = config.height;
  const int n = draw_gt_count(config.gt_counts, rng);
  std::uniform_int_distribution<int> cls(1, config.num_classes);
  scene.instances.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Box b = uniform_box(config.width, config.height, config.min_size, config.max_size, rng);
    scene.instances.push_back({b, cls(rng)});
  }
  return scene;
}

std::vector<Scene> generate_scenes(const SceneConfig& config, std::size_t count,
                                   std::uint64_t base_seed, std::uint64_t first_id) {
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t id = first_id + i;
    scenes.push_back(generate_scene(config, id, derive_seed(base_seed, {id})));
  }
  return scenes;
}

double quality_at(std::int64_t t, std::int64_t total) {
  if (total <= 0) throw std::invalid_argument("total iterations must be positive");
  if (t < 0 || t > total) throw std::out_of_range("iteration outside [0, T]");
  return static_cast<double>(t) / static_cast<double>(total);
}

Eigen::VectorXd proposal_features(const ProposalLabel& label, const Scene& scene,
                                  const FeatureModel& model, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd f(model.dim());
  for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = model.noise_sigma * normal(rng);
  if (label.positive()) {
    const int cls = label.matched_gt ? scene.instances.at(*label.matched_gt).class_id : label.class_id;
    if (cls < 1 || cls > model.num_classes) throw std::out_of_range("class outside feature model");
    f[cls - 1] += label.max_iou;
  }
  return f;
}

Eigen::VectorXd proposal_features(const ProposalLabel& label, const Scene& scene,
                                  const FeatureModel& model, std::uint64_t seed) {
  Rng rng(seed);
  return proposal_features(label, scene, model, rng);
}

std::vector<Proposal> generate_proposals(const Scene& scene, double quality,
                                         const RpnQualityModel& rpn,
                                         const FeatureModel& features, std::uint64_t seed) {
  if (!(quality >= 0.0 && quality <= 1.0)) throw std::out_of_range("quality outside [0, 1]");
  Rng rng(seed);
  const double sigma = rpn.sigma_at(quality);

  std::vector<Box> boxes;
  boxes.reserve(scene.instances.size() * static_cast<std::size_t>(rpn.n_fg) +
                static_cast<std::size_t>(rpn.n_bg));
  for (const auto& gt : scene.instances)
    for (int k = 0; k < rpn.n_fg; ++k)
      boxes.push_back(jitter_box(gt.box, sigma, scene.width, scene.height, rng));

  // Background boxes that land on an object are labeled positive like every
  // other proposal.
  for (int k = 0; k < rpn.n_bg; ++k)
    boxes.push_back(uniform_box(scene.width, scene.height, rpn.bg_min_size, rpn.bg_max_size, rng));

  std::vector<ProposalLabel> labels = label_proposals(boxes, scene.instances, rpn.pos_threshold);
  std::vector<Proposal> out;
  out.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    Proposal p;
    p.scene_id = scene.id;
    p.box = boxes[i];
    p.feature = proposal_features(labels[i], scene, features, rng);
    p.label = std::move(labels[i]);
    out.push_back(std::move(p));
  }
  return out;
}

int count_positive(std::span<const Proposal> proposals) {
  return static_cast<int>(std::count_if(proposals.begin(), proposals.end(),
                                        [](const Proposal& p) { return p.label.positive(); }));
}

}  // namespace rcnnlab
