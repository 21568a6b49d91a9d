#include "rcnnlab/rga.hpp"

namespace rcnnlab {

void AnnealSchedule::validate() const {
  if (!(lambda0 >= 1.0)) throw std::invalid_argument("lambda0 must be >= 1");
  if (total_steps < 1) throw std::invalid_argument("anneal schedule needs T >= 1");
}

double anneal_factor(std::int64_t t, const AnnealSchedule& schedule) {
  schedule.validate();
  if (t < 0 || t > schedule.total_steps)
    throw std::out_of_range("anneal step " + std::to_string(t) + " outside [0, " +
                            std::to_string(schedule.total_steps) + "]");
  if (!schedule.anneal) return schedule.lambda0;
  const double progress = static_cast<double>(t) / static_cast<double>(schedule.total_steps);
  return schedule.lambda0 - (schedule.lambda0 - 1.0) * progress;
}

AnnealSchedule constant_factor_mode(double lambda0, std::int64_t total_steps) {
  AnnealSchedule s{lambda0, total_steps, false};
  s.validate();
  return s;
}

}  // namespace rcnnlab
