#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rcnnlab/geometry.hpp"

namespace rcnnlab {

enum class SamplingMode { soft, hard };

std::string to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(const std::string& text);

/// Positive:negative parts, e.g. 1:3.
struct SamplingRatio {
  int pos_parts = 1;
  int neg_parts = 3;

  double positive_fraction() const {
    return static_cast<double>(pos_parts) / static_cast<double>(pos_parts + neg_parts);
  }
  std::string str() const;

  friend bool operator==(const SamplingRatio&, const SamplingRatio&) = default;
};

/// Parses "P:N" with positive integers; throws std::invalid_argument otherwise.
SamplingRatio parse_ratio(const std::string& text);

struct SamplingPolicy {
  SamplingMode mode = SamplingMode::soft;
  SamplingRatio ratio;
  int batch_size = 512;

  /// floor(B * pos_parts / (pos_parts + neg_parts)); 128 for B = 512 at 1:3.
  int pos_target() const;
  void validate() const;

  friend bool operator==(const SamplingPolicy&, const SamplingPolicy&) = default;
};

struct BatchEntry {
  std::size_t index = 0;  // into the proposal pool
  int multiplicity = 1;
  bool positive = false;
};

struct SampledBatch {
  std::vector<BatchEntry> entries;  // positives first, then negatives
  int pos_count_unique = 0;
  int pos_count_effective = 0;  // sum of positive multiplicities
  int neg_count = 0;
};

/// Takes min(N+, pos_target) distinct positives uniformly at random and fills
/// the rest of the batch with negatives. Never duplicates.
SampledBatch sample_soft(std::span<const ProposalLabel> labeled, const SamplingPolicy& policy,
                         std::uint64_t seed);

/// Like sample_soft, but when 0 < N+ < pos_target every positive is repeated so
/// the multiplicities sum to pos_target exactly (spread evenly, extra copies on
/// the lowest indices). With no positives the batch is all negative.
SampledBatch sample_hard(std::span<const ProposalLabel> labeled, const SamplingPolicy& policy,
                         std::uint64_t seed);

/// Dispatches on policy.mode.
SampledBatch sample_batch(std::span<const ProposalLabel> labeled, const SamplingPolicy& policy,
                          std::uint64_t seed);

/// (pos_count_unique, pos_count_effective)
std::pair<int, int> count_positives(const SampledBatch& batch);

}  // namespace rcnnlab
