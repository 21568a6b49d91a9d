#pragma once

// R-CNN gradient annealing: after backward and before the optimizer step,
// every head-parameter gradient is multiplied by
//
//   lambda(t) = lambda0 - (lambda0 - 1) * t / T
//
// while backbone gradients are left untouched.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "rcnnlab/net.hpp"

namespace rcnnlab {

struct AnnealSchedule {
  double lambda0 = 7.0;
  std::int64_t total_steps = 1;
  bool anneal = true;  // false: lambda stays at lambda0

  void validate() const;

  friend bool operator==(const AnnealSchedule&, const AnnealSchedule&) = default;
};

/// Throws std::out_of_range for t outside [0, T].
double anneal_factor(std::int64_t t, const AnnealSchedule& schedule);

/// Schedule whose factor is lambda0 at every step.
AnnealSchedule constant_factor_mode(double lambda0, std::int64_t total_steps);

template <typename Scalar>
void apply_rga(Gradients<Scalar>& grads, Scalar lambda) {
  if (!(lambda >= Scalar(1)))
    throw std::invalid_argument("gradient magnification must be >= 1, got " + std::to_string(static_cast<double>(lambda)));
  if (lambda == Scalar(1)) return;
  for (auto& head : grads.heads)
    head.visit([&](const char*, auto& a) { a *= lambda; });
}

}  // namespace rcnnlab
