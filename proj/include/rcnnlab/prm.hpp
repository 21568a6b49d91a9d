#pragma once

// Parallel R-CNN modules: several heads on one shared backbone, each trained
// on its own minibatch drawn from the same proposal pool under its own
// sampling policy. Backbone gradients from the heads are summed (gradient
// ensemble); at test time the heads' pre-softmax scores are averaged (result
// ensemble) and box regression comes from the head with the largest positive
// sampling fraction.

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rcnnlab/geometry.hpp"
#include "rcnnlab/metrics.hpp"
#include "rcnnlab/net.hpp"
#include "rcnnlab/random.hpp"
#include "rcnnlab/rga.hpp"
#include "rcnnlab/sampler.hpp"
#include "rcnnlab/synthdata.hpp"

namespace rcnnlab {

struct HeadSpec {
  SamplingPolicy policy;
  double loss_weight = 1.0;
  // Sampling stream tag; defaults to the head index. Two heads sharing a tag
  // and a policy draw identical batches.
  std::optional<std::uint64_t> sampling_stream;

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

template <typename Scalar>
struct PrmModel {
  NetworkParams<Scalar> params;
  std::vector<HeadSpec> heads;

  std::size_t num_heads() const { return heads.size(); }

  void validate() const {
    if (heads.empty()) throw std::invalid_argument("model needs at least one head");
    if (params.heads.size() != heads.size()) throw std::invalid_argument("head parameter count mismatch");
    for (const auto& h : heads) h.policy.validate();
  }
};

template <typename Scalar>
PrmModel<Scalar> make_prm_model(Eigen::Index input_dim, Eigen::Index hidden, int num_classes,
                                std::vector<HeadSpec> heads, double init_scale, std::uint64_t seed) {
  PrmModel<Scalar> m;
  m.params = NetworkParams<Scalar>::zeros(input_dim, hidden, num_classes + 1, heads.size());
  m.heads = std::move(heads);
  Rng rng(seed);
  init_uniform(m.params, static_cast<Scalar>(init_scale), rng);
  m.validate();
  return m;
}

/// Index of the head whose policy has the largest positive fraction; ties go
/// to the lowest index.
inline std::size_t regression_head(std::span<const HeadSpec> heads) {
  if (heads.empty()) throw std::invalid_argument("no heads");
  std::size_t best = 0;
  for (std::size_t i = 1; i < heads.size(); ++i) {
    // compare p_i/(p_i+n_i) > p_b/(p_b+n_b) exactly in integers
    const auto& a = heads[i].policy.ratio;
    const auto& b = heads[best].policy.ratio;
    if (static_cast<long long>(a.pos_parts) * (b.pos_parts + b.neg_parts) >
        static_cast<long long>(b.pos_parts) * (a.pos_parts + a.neg_parts))
      best = i;
  }
  return best;
}

/// Elementwise mean of the heads' pre-softmax logits.
template <typename Scalar>
Mat<Scalar> ensemble_scores(std::span<const Mat<Scalar>> head_logits) {
  if (head_logits.empty()) throw std::invalid_argument("ensemble_scores: no heads");
  Mat<Scalar> sum = head_logits.front();
  for (std::size_t k = 1; k < head_logits.size(); ++k) {
    if (head_logits[k].rows() != sum.rows() || head_logits[k].cols() != sum.cols())
      throw std::invalid_argument("ensemble_scores: heads disagree on output shape");
    sum += head_logits[k];
  }
  return sum / static_cast<Scalar>(head_logits.size());
}

/// The regression output of regression_head(), returned by reference.
template <typename Scalar>
const Mat<Scalar>& select_regression(const PrmModel<Scalar>& model, std::span<const Mat<Scalar>> head_deltas) {
  if (head_deltas.size() != model.heads.size()) throw std::invalid_argument("select_regression: head count mismatch");
  return head_deltas[regression_head(model.heads)];
}

// ---------------------------------------------------------------------------
// training

struct GradNormRecord {
  std::int64_t step = 0;
  std::vector<double> head_norms;  // Frobenius norm of each head's backbone gradient
  double sum_norm = 0.0;           // norm of their vector sum
  std::optional<double> cosine;    // between heads 0 and 1, when both are nonzero
};

/// gradnorm.csv: step,norm_h1,...,norm_hK,norm_sum,cosine (cosine empty when
/// undefined).
void write_gradnorm_header(std::ostream& os, std::size_t num_heads);
void write_gradnorm_row(std::ostream& os, const GradNormRecord& record);

struct HeadStepStats {
  int pos_count_unique = 0;
  int pos_count_effective = 0;
  int neg_count = 0;
  std::optional<double> pos_acc;
  std::optional<double> neg_acc;
  double mean_fg_score = 0.0;
  double cls_loss = 0.0;
  double reg_loss = 0.0;
};

struct PrmStepResult {
  GradNormRecord grad_norms;
  std::vector<HeadStepStats> heads;
  double lambda = 1.0;
};

/// Batch features and targets for one sampled minibatch; one row per unique
/// entry, multiplicities carried as weights.
template <typename Scalar>
struct BatchTensors {
  Mat<Scalar> features;
  HeadTargets<Scalar> targets;
};

template <typename Scalar>
BatchTensors<Scalar> gather_batch(std::span<const Proposal> pool, const SampledBatch& batch) {
  if (pool.empty()) throw std::invalid_argument("empty proposal pool");
  const auto n = static_cast<Eigen::Index>(batch.entries.size());
  const Eigen::Index dim = pool.front().feature.size();
  BatchTensors<Scalar> b;
  b.features.resize(n, dim);
  b.targets.reg_targets = Mat<Scalar>::Zero(n, kNumDeltas);
  b.targets.classes.reserve(batch.entries.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const BatchEntry& e = batch.entries[static_cast<std::size_t>(r)];
    const Proposal& p = pool[e.index];
    if (p.feature.size() != dim) throw std::invalid_argument("inconsistent feature width in pool");
    b.features.row(r) = p.feature.transpose().template cast<Scalar>();
    b.targets.classes.push_back(p.label.class_id);
    b.targets.positive.push_back(p.label.positive() ? 1 : 0);
    b.targets.multiplicity.push_back(static_cast<Scalar>(e.multiplicity));
    if (p.label.regression_target)
      b.targets.reg_targets.row(r) = p.label.regression_target->transpose().template cast<Scalar>();
  }
  return b;
}

/// One joint optimization step. Each head samples from the same pool with
/// its own policy and seed; head gradients are magnified by RGA (if given);
/// the backbone receives the unweighted sum of the heads' contributions.
template <typename Scalar>
PrmStepResult prm_train_step(PrmModel<Scalar>& model, std::span<const Proposal> pool, std::int64_t t,
                             const TrainConfig& config, const std::optional<AnnealSchedule>& rga,
                             std::uint64_t seed) {
  model.validate();
  std::vector<ProposalLabel> labels;
  labels.reserve(pool.size());
  for (const Proposal& p : pool) labels.push_back(p.label);

  PrmStepResult result;
  result.grad_norms.step = t;
  Gradients<Scalar> grads = model.params.zeros_like();
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> contributions;

  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    const HeadSpec& spec = model.heads[h];
    const std::uint64_t tag = spec.sampling_stream.value_or(h);
    const SampledBatch batch =
        sample_batch(labels, spec.policy, derive_seed(seed, {stream::kSampling, tag, static_cast<std::uint64_t>(t)}));
    const BatchTensors<Scalar> bt = gather_batch<Scalar>(pool, batch);

    const ForwardResult<Scalar> fwd = forward(model.params.backbone, model.params.heads[h], bt.features);
    LossWeights w = config.loss;
    w.cls *= spec.loss_weight;
    w.reg *= spec.loss_weight;
    HeadGradients<Scalar> g = backward(model.params.heads[h], fwd, bt.targets, w);

    HeadStepStats stats;
    stats.pos_count_unique = batch.pos_count_unique;
    stats.pos_count_effective = batch.pos_count_effective;
    stats.neg_count = batch.neg_count;
    const Eigen::MatrixXd logits = fwd.logits.template cast<double>();
    const AccuracyPair acc = proposal_accuracy(logits, bt.targets.classes);
    stats.pos_acc = acc.pos_acc;
    stats.neg_acc = acc.neg_acc;
    stats.mean_fg_score = mean_foreground_score(logits);
    stats.cls_loss = static_cast<double>(g.cls_loss);
    stats.reg_loss = static_cast<double>(g.reg_loss);
    result.heads.push_back(stats);

    contributions.push_back(flatten_backbone(g.backbone));
    grads.heads[h] = std::move(g.head);
    if (h == 0) {
      grads.backbone = std::move(g.backbone);
    } else {
      grads.backbone.weight += g.backbone.weight;
      grads.backbone.bias += g.backbone.bias;
    }
  }

  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> total = contributions.front();
  for (std::size_t h = 1; h < contributions.size(); ++h) total += contributions[h];
  for (const auto& c : contributions) result.grad_norms.head_norms.push_back(static_cast<double>(c.norm()));
  result.grad_norms.sum_norm = static_cast<double>(total.norm());
  if (contributions.size() >= 2) {
    const double n0 = result.grad_norms.head_norms[0];
    const double n1 = result.grad_norms.head_norms[1];
    if (n0 > 0.0 && n1 > 0.0)
      result.grad_norms.cosine = static_cast<double>(contributions[0].dot(contributions[1])) / (n0 * n1);
  }

  if (rga) {
    result.lambda = anneal_factor(t, *rga);
    apply_rga(grads, static_cast<Scalar>(result.lambda));
  }
  sgd_step(model.params, grads, t, config);
  return result;
}

// ---------------------------------------------------------------------------
// inference

template <typename Scalar>
struct PrmPrediction {
  Mat<Scalar> scores;  // softmax of the ensembled logits, N x (C+1)
  std::vector<Box> boxes;
  std::vector<Mat<Scalar>> head_logits;
  std::vector<Mat<Scalar>> head_deltas;
  std::size_t regression_head = 0;
};

template <typename Scalar>
PrmPrediction<Scalar> prm_predict(const PrmModel<Scalar>& model, std::span<const Proposal> proposals) {
  model.validate();
  PrmPrediction<Scalar> pred;
  const auto n = static_cast<Eigen::Index>(proposals.size());
  const Eigen::Index dim = model.params.backbone.input_dim();
  Mat<Scalar> x(n, dim);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& f = proposals[static_cast<std::size_t>(r)].feature;
    if (f.size() != dim) throw std::invalid_argument("prm_predict: feature width mismatch");
    x.row(r) = f.transpose().template cast<Scalar>();
  }
  const Mat<Scalar> hidden = backbone_forward(model.params.backbone, x);
  for (const auto& head : model.params.heads) {
    HeadOutput<Scalar> out = head_forward(head, hidden);
    pred.head_logits.push_back(std::move(out.logits));
    pred.head_deltas.push_back(std::move(out.deltas));
  }
  pred.scores = softmax_rows<Scalar>(ensemble_scores<Scalar>(pred.head_logits));
  pred.regression_head = regression_head(model.heads);
  const Mat<Scalar>& deltas = select_regression<Scalar>(model, pred.head_deltas);
  pred.boxes.reserve(proposals.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const Deltas d = deltas.row(r).transpose().template cast<double>();
    pred.boxes.push_back(decode_box(proposals[static_cast<std::size_t>(r)].box, d));
  }
  return pred;
}

}  // namespace rcnnlab
