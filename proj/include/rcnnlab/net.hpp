#pragma once

// Shared tanh backbone plus R-CNN heads (tanh shared fc, classification fc,
// class-agnostic regression fc) with hand-written gradients. Everything is
// templated on the scalar type; the pipeline instantiates double.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rcnnlab {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

inline constexpr int kNumDeltas = 4;

template <typename Scalar>
struct BackboneParams {
  Mat<Scalar> weight;  // D x H
  RowVec<Scalar> bias;  // H

  static BackboneParams zeros(Eigen::Index input_dim, Eigen::Index hidden) {
    return {Mat<Scalar>::Zero(input_dim, hidden), RowVec<Scalar>::Zero(hidden)};
  }
  Eigen::Index input_dim() const { return weight.rows(); }
  Eigen::Index hidden_dim() const { return weight.cols(); }

  template <typename F>
  void visit(F&& f) {
    f("weight", weight);
    f("bias", bias);
  }
  template <typename F>
  void visit(F&& f) const {
    f("weight", weight);
    f("bias", bias);
  }
};

template <typename Scalar>
struct HeadParams {
  Mat<Scalar> shared_weight;  // H x H
  RowVec<Scalar> shared_bias;
  Mat<Scalar> cls_weight;  // H x (C+1)
  RowVec<Scalar> cls_bias;
  Mat<Scalar> reg_weight;  // H x 4
  RowVec<Scalar> reg_bias;

  static HeadParams zeros(Eigen::Index hidden, Eigen::Index num_outputs) {
    return {Mat<Scalar>::Zero(hidden, hidden),      RowVec<Scalar>::Zero(hidden),
            Mat<Scalar>::Zero(hidden, num_outputs), RowVec<Scalar>::Zero(num_outputs),
            Mat<Scalar>::Zero(hidden, kNumDeltas),  RowVec<Scalar>::Zero(kNumDeltas)};
  }
  Eigen::Index hidden_dim() const { return shared_weight.rows(); }
  Eigen::Index num_outputs() const { return cls_weight.cols(); }

  template <typename F>
  void visit(F&& f) {
    f("shared_weight", shared_weight);
    f("shared_bias", shared_bias);
    f("cls_weight", cls_weight);
    f("cls_bias", cls_bias);
    f("reg_weight", reg_weight);
    f("reg_bias", reg_bias);
  }
  template <typename F>
  void visit(F&& f) const {
    f("shared_weight", shared_weight);
    f("shared_bias", shared_bias);
    f("cls_weight", cls_weight);
    f("cls_bias", cls_bias);
    f("reg_weight", reg_weight);
    f("reg_bias", reg_bias);
  }
};

/// One backbone and an ordered list of heads. The same type doubles as the
/// gradient bank, so gradients are shape-congruent with parameters.
template <typename Scalar>
struct NetworkParams {
  BackboneParams<Scalar> backbone;
  std::vector<HeadParams<Scalar>> heads;

  static NetworkParams zeros(Eigen::Index input_dim, Eigen::Index hidden, Eigen::Index num_outputs,
                             std::size_t num_heads) {
    NetworkParams p;
    p.backbone = BackboneParams<Scalar>::zeros(input_dim, hidden);
    p.heads.assign(num_heads, HeadParams<Scalar>::zeros(hidden, num_outputs));
    return p;
  }
  NetworkParams zeros_like() const {
    return zeros(backbone.input_dim(), backbone.hidden_dim(),
                 heads.empty() ? 0 : heads.front().num_outputs(), heads.size());
  }

  template <typename F>
  void visit(F&& f) {
    backbone.visit([&](const char* name, auto& a) { f(std::string("backbone.") + name, a); });
    for (std::size_t i = 0; i < heads.size(); ++i)
      heads[i].visit([&](const char* name, auto& a) { f("head" + std::to_string(i) + "." + name, a); });
  }
  template <typename F>
  void visit(F&& f) const {
    backbone.visit([&](const char* name, const auto& a) { f(std::string("backbone.") + name, a); });
    for (std::size_t i = 0; i < heads.size(); ++i)
      heads[i].visit([&](const char* name, const auto& a) { f("head" + std::to_string(i) + "." + name, a); });
  }
};

template <typename Scalar>
using Gradients = NetworkParams<Scalar>;

template <typename Scalar, typename Params>
void init_uniform(Params& params, Scalar scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-static_cast<double>(scale), static_cast<double>(scale));
  params.visit([&](const auto&, auto& a) {
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = static_cast<Scalar>(u(rng));
  });
}

// ---------------------------------------------------------------------------
// forward

template <typename Scalar>
Mat<Scalar> backbone_forward(const BackboneParams<Scalar>& bb, const Mat<Scalar>& features) {
  if (features.cols() != bb.input_dim())
    throw std::invalid_argument("feature width " + std::to_string(features.cols()) +
                                " does not match backbone input " + std::to_string(bb.input_dim()));
  return ((features * bb.weight).rowwise() + bb.bias).array().tanh().matrix();
}

template <typename Scalar>
struct HeadOutput {
  Mat<Scalar> logits;  // N x (C+1), pre-softmax
  Mat<Scalar> deltas;  // N x 4
  Mat<Scalar> hidden;  // shared fc activation, kept for backward
};

template <typename Scalar>
HeadOutput<Scalar> head_forward(const HeadParams<Scalar>& head, const Mat<Scalar>& backbone_hidden) {
  if (backbone_hidden.cols() != head.hidden_dim())
    throw std::invalid_argument("backbone width does not match head input");
  HeadOutput<Scalar> out;
  out.hidden = ((backbone_hidden * head.shared_weight).rowwise() + head.shared_bias).array().tanh().matrix();
  out.logits = (out.hidden * head.cls_weight).rowwise() + head.cls_bias;
  out.deltas = (out.hidden * head.reg_weight).rowwise() + head.reg_bias;
  return out;
}

template <typename Scalar>
struct ForwardCache {
  Mat<Scalar> input;
  Mat<Scalar> backbone_hidden;
  Mat<Scalar> head_hidden;
};

template <typename Scalar>
struct ForwardResult {
  Mat<Scalar> logits;
  Mat<Scalar> deltas;
  ForwardCache<Scalar> cache;
};

template <typename Scalar>
ForwardResult<Scalar> forward(const BackboneParams<Scalar>& bb, const HeadParams<Scalar>& head,
                              const Mat<Scalar>& features) {
  ForwardResult<Scalar> r;
  r.cache.input = features;
  r.cache.backbone_hidden = backbone_forward(bb, features);
  HeadOutput<Scalar> h = head_forward(head, r.cache.backbone_hidden);
  r.logits = std::move(h.logits);
  r.deltas = std::move(h.deltas);
  r.cache.head_hidden = std::move(h.hidden);
  return r;
}

// ---------------------------------------------------------------------------
// losses

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& logits) {
  Mat<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

template <typename Scalar>
Scalar smooth_l1(Scalar x) {
  const Scalar a = std::abs(x);
  return a < Scalar(1) ? Scalar(0.5) * x * x : a - Scalar(0.5);
}

template <typename Scalar>
Scalar smooth_l1_grad(Scalar x) {
  if (std::abs(x) < Scalar(1)) return x;
  return x > Scalar(0) ? Scalar(1) : Scalar(-1);
}

/// Multiplicity-weighted mean of -log softmax(logits)[target].
template <typename Scalar>
Scalar cls_loss(const Mat<Scalar>& logits, std::span<const int> targets, std::span<const Scalar> multiplicity) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size() || targets.size() != multiplicity.size())
    throw std::invalid_argument("cls_loss: batch size mismatch");
  Scalar sum(0), weight(0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= logits.cols()) throw std::out_of_range("cls_loss: target class out of range");
    const Scalar m = logits.row(i).maxCoeff();
    const Scalar lse = m + std::log((logits.row(i).array() - m).exp().sum());
    const Scalar w = multiplicity[static_cast<std::size_t>(i)];
    sum += w * (lse - logits(i, t));
    weight += w;
  }
  return weight > Scalar(0) ? sum / weight : Scalar(0);
}

/// Multiplicity-weighted mean over positives of the per-row smooth-L1 sum
/// (beta = 1). Zero when the mask is empty.
template <typename Scalar>
Scalar reg_loss(const Mat<Scalar>& deltas, const Mat<Scalar>& targets, std::span<const std::uint8_t> positive,
                std::span<const Scalar> multiplicity) {
  if (deltas.rows() != targets.rows() || deltas.cols() != targets.cols() ||
      static_cast<std::size_t>(deltas.rows()) != positive.size() || positive.size() != multiplicity.size())
    throw std::invalid_argument("reg_loss: batch size mismatch");
  Scalar sum(0), weight(0);
  for (Eigen::Index i = 0; i < deltas.rows(); ++i) {
    if (!positive[static_cast<std::size_t>(i)]) continue;
    Scalar row(0);
    for (Eigen::Index k = 0; k < deltas.cols(); ++k) row += smooth_l1<Scalar>(deltas(i, k) - targets(i, k));
    const Scalar w = multiplicity[static_cast<std::size_t>(i)];
    sum += w * row;
    weight += w;
  }
  return weight > Scalar(0) ? sum / weight : Scalar(0);
}

struct LossWeights {
  double cls = 1.0;
  double reg = 1.0;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

template <typename Scalar>
struct HeadTargets {
  std::vector<int> classes;
  Mat<Scalar> reg_targets;  // N x 4; rows of negatives are ignored
  std::vector<std::uint8_t> positive;
  std::vector<Scalar> multiplicity;
};

// ---------------------------------------------------------------------------
// backward

template <typename Scalar>
struct HeadGradients {
  BackboneParams<Scalar> backbone;
  HeadParams<Scalar> head;
  Scalar cls_loss = 0;
  Scalar reg_loss = 0;
  Scalar total_loss = 0;
};

/// Analytic gradient of weights.cls * cls_loss + weights.reg * reg_loss with
/// respect to the head and (through the chain rule) the backbone.
template <typename Scalar>
HeadGradients<Scalar> backward(const HeadParams<Scalar>& head,
                               const ForwardResult<Scalar>& fwd, const HeadTargets<Scalar>& targets,
                               const LossWeights& weights) {
  const Eigen::Index n = fwd.logits.rows();
  const Scalar w_cls = static_cast<Scalar>(weights.cls);
  const Scalar w_reg = static_cast<Scalar>(weights.reg);

  HeadGradients<Scalar> g;
  g.cls_loss = cls_loss<Scalar>(fwd.logits, targets.classes, targets.multiplicity);
  g.reg_loss = reg_loss<Scalar>(fwd.deltas, targets.reg_targets, targets.positive, targets.multiplicity);
  g.total_loss = w_cls * g.cls_loss + w_reg * g.reg_loss;

  Scalar m_all(0), m_pos(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    m_all += targets.multiplicity[static_cast<std::size_t>(i)];
    if (targets.positive[static_cast<std::size_t>(i)]) m_pos += targets.multiplicity[static_cast<std::size_t>(i)];
  }

  Mat<Scalar> d_logits = softmax_rows(fwd.logits);
  for (Eigen::Index i = 0; i < n; ++i) {
    d_logits(i, targets.classes[static_cast<std::size_t>(i)]) -= Scalar(1);
    const Scalar s = m_all > Scalar(0) ? w_cls * targets.multiplicity[static_cast<std::size_t>(i)] / m_all : Scalar(0);
    d_logits.row(i) *= s;
  }

  Mat<Scalar> d_deltas = Mat<Scalar>::Zero(n, fwd.deltas.cols());
  if (m_pos > Scalar(0)) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!targets.positive[static_cast<std::size_t>(i)]) continue;
      const Scalar s = w_reg * targets.multiplicity[static_cast<std::size_t>(i)] / m_pos;
      for (Eigen::Index k = 0; k < fwd.deltas.cols(); ++k)
        d_deltas(i, k) = s * smooth_l1_grad<Scalar>(fwd.deltas(i, k) - targets.reg_targets(i, k));
    }
  }

  const Mat<Scalar>& h1 = fwd.cache.head_hidden;
  const Mat<Scalar>& h0 = fwd.cache.backbone_hidden;

  g.head.cls_weight = h1.transpose() * d_logits;
  g.head.cls_bias = d_logits.colwise().sum();
  g.head.reg_weight = h1.transpose() * d_deltas;
  g.head.reg_bias = d_deltas.colwise().sum();

  const Mat<Scalar> d_h1 = d_logits * head.cls_weight.transpose() + d_deltas * head.reg_weight.transpose();
  const Mat<Scalar> d_z1 = (d_h1.array() * (Scalar(1) - h1.array().square())).matrix();
  g.head.shared_weight = h0.transpose() * d_z1;
  g.head.shared_bias = d_z1.colwise().sum();

  const Mat<Scalar> d_h0 = d_z1 * head.shared_weight.transpose();
  const Mat<Scalar> d_z0 = (d_h0.array() * (Scalar(1) - h0.array().square())).matrix();
  g.backbone.weight = fwd.cache.input.transpose() * d_z0;
  g.backbone.bias = d_z0.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// optimizer

struct Fraction {
  int num = 0;
  int den = 1;

  friend bool operator==(const Fraction&, const Fraction&) = default;
};

struct TrainConfig {
  double learning_rate = 0.02;
  std::int64_t total_steps = 3000;
  std::vector<Fraction> decay_points{{8, 12}, {11, 12}};  // fractions of total_steps
  double decay_factor = 0.1;
  LossWeights loss;
  int hidden = 16;
  double init_scale = 0.1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (total_steps < 1) throw std::invalid_argument("total steps must be >= 1");
    if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw std::invalid_argument("decay factor must lie in (0, 1)");
    for (const Fraction& f : decay_points)
      if (f.den <= 0 || f.num < 0 || f.num > f.den) throw std::invalid_argument("decay point must be a fraction in [0, 1]");
    if (hidden < 1) throw std::invalid_argument("hidden width must be >= 1");
    if (!(init_scale >= 0.0)) throw std::invalid_argument("init scale must be >= 0");
    if (!(loss.cls >= 0.0) || !(loss.reg >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
  }
};

/// Step index at which a decay point takes effect: floor(num * T / den).
inline std::int64_t decay_step(const Fraction& f, std::int64_t total_steps) {
  return static_cast<std::int64_t>(f.num) * total_steps / f.den;
}

/// Base rate times decay_factor^(number of decay points with t >= point).
inline double learning_rate_at(std::int64_t t, const TrainConfig& config) {
  double lr = config.learning_rate;
  for (const Fraction& f : config.decay_points)
    if (t >= decay_step(f, config.total_steps)) lr *= config.decay_factor;
  return lr;
}

template <typename Params, typename Scalar>
void sgd_update(Params& params, const Params& grads, Scalar lr) {
  std::vector<const Scalar*> g;
  grads.visit([&](const auto&, const auto& a) { g.push_back(a.data()); });
  std::size_t k = 0;
  params.visit([&](const auto&, auto& a) {
    const Scalar* src = g.at(k++);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] -= lr * src[i];
  });
}

/// theta <- theta - lr * g with separate rates for the backbone and the heads.
template <typename Scalar>
void sgd_step_split(NetworkParams<Scalar>& params, const Gradients<Scalar>& grads, Scalar backbone_lr,
                    Scalar head_lr) {
  if (grads.heads.size() != params.heads.size()) throw std::invalid_argument("gradient bank has wrong head count");
  sgd_update(params.backbone, grads.backbone, backbone_lr);
  for (std::size_t i = 0; i < params.heads.size(); ++i) sgd_update(params.heads[i], grads.heads[i], head_lr);
}

template <typename Scalar>
void sgd_step(NetworkParams<Scalar>& params, const Gradients<Scalar>& grads, std::int64_t t,
              const TrainConfig& config) {
  if (t < 0 || t >= config.total_steps) throw std::out_of_range("sgd_step: t outside [0, T)");
  const Scalar lr = static_cast<Scalar>(learning_rate_at(t, config));
  sgd_step_split(params, grads, lr, lr);
}

// ---------------------------------------------------------------------------
// helpers

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> flatten_backbone(const BackboneParams<Scalar>& bb) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v(bb.weight.size() + bb.bias.size());
  v << Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bb.weight.data(), bb.weight.size()),
      bb.bias.transpose();
  return v;
}

}  // namespace rcnnlab
