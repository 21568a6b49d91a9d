#include "rcnnlab/sampler.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

#include "rcnnlab/random.hpp"

namespace rcnnlab {

std::string to_string(SamplingMode mode) { return mode == SamplingMode::soft ? "soft" : "hard"; }

SamplingMode parse_sampling_mode(const std::string& text) {
  if (text == "soft") return SamplingMode::soft;
  if (text == "hard") return SamplingMode::hard;
  throw std::invalid_argument("sampling mode must be 'soft' or 'hard', got '" + text + "'");
}

std::string SamplingRatio::str() const { return std::to_string(pos_parts) + ":" + std::to_string(neg_parts); }

SamplingRatio parse_ratio(const std::string& text) {
  const auto colon = text.find(':');
  auto parse_part = [&](std::size_t b, std::size_t e) {
    int v = 0;
    const char* first = text.data() + b;
    const char* last = text.data() + e;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (b == e || ec != std::errc() || ptr != last || v <= 0)
      throw std::invalid_argument("ratio must look like P:N with positive integers, got '" + text + "'");
    return v;
  };
  if (colon == std::string::npos)
    throw std::invalid_argument("ratio must look like P:N with positive integers, got '" + text + "'");
  return SamplingRatio{parse_part(0, colon), parse_part(colon + 1, text.size())};
}

int SamplingPolicy::pos_target() const {
  const long long b = batch_size;
  return static_cast<int>(b * ratio.pos_parts / (ratio.pos_parts + ratio.neg_parts));
}

void SamplingPolicy::validate() const {
  if (ratio.pos_parts < 1 || ratio.neg_parts < 1) throw std::invalid_argument("ratio parts must be positive");
  if (batch_size < ratio.pos_parts + ratio.neg_parts)
    throw std::invalid_argument("batch size smaller than ratio parts");
  if (pos_target() < 1) throw std::invalid_argument("policy yields zero positive target");
}

namespace {

struct Split {
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
};

Split split_by_label(std::span<const ProposalLabel> labeled) {
  Split s;
  for (std::size_t i = 0; i < labeled.size(); ++i) (labeled[i].positive() ? s.pos : s.neg).push_back(i);
  return s;
}

// First k entries of a partial Fisher-Yates shuffle, returned in pool order.
std::vector<std::size_t> choose(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  if (k >= pool.size()) return pool;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

void check_pool(std::span<const ProposalLabel> labeled, const SamplingPolicy& policy) {
  policy.validate();
  if (labeled.size() < static_cast<std::size_t>(policy.batch_size))
    throw std::runtime_error("proposal pool (" + std::to_string(labeled.size()) +
                             ") smaller than batch size (" + std::to_string(policy.batch_size) + ")");
}

SampledBatch assemble(const std::vector<std::size_t>& pos, const std::vector<int>& mult,
                      const std::vector<std::size_t>& neg_pool, int neg_needed, Rng& rng) {
  if (neg_pool.size() < static_cast<std::size_t>(neg_needed))
    throw std::runtime_error("not enough negatives to fill the batch (" + std::to_string(neg_pool.size()) +
                             " < " + std::to_string(neg_needed) + ")");
  SampledBatch batch;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    batch.entries.push_back({pos[i], mult[i], true});
    batch.pos_count_effective += mult[i];
  }
  batch.pos_count_unique = static_cast<int>(pos.size());
  for (std::size_t idx : choose(neg_pool, static_cast<std::size_t>(neg_needed), rng))
    batch.entries.push_back({idx, 1, false});
  batch.neg_count = neg_needed;
  return batch;
}

}  // namespace

SampledBatch sample_soft(std::span<const ProposalLabel> labeled, const SamplingPolicy& policy,
                         std::uint64_t seed) {
  if (policy.mode != SamplingMode::soft) throw std::invalid_argument("sample_soft needs a soft policy");
  check_pool(labeled, policy);
  Rng rng(seed);
  Split s = split_by_label(labeled);
  const std::size_t n_pos = std::min(s.pos.size(), static_cast<std::size_t>(policy.pos_target()));
  std::vector<std::size_t> pos = choose(std::move(s.pos), n_pos, rng);
  std::vector<int> mult(pos.size(), 1);
  return assemble(pos, mult, s.neg, policy.batch_size - static_cast<int>(n_pos), rng);
}

SampledBatch sample_hard(std::span<const ProposalLabel> labeled, const SamplingPolicy& policy,
                         std::uint64_t seed) {
  if (policy.mode != SamplingMode::hard) throw std::invalid_argument("sample_hard needs a hard policy");
  check_pool(labeled, policy);
  Rng rng(seed);
  Split s = split_by_label(labeled);
  const int target = policy.pos_target();

  if (s.pos.empty()) return assemble({}, {}, s.neg, policy.batch_size, rng);

  std::vector<std::size_t> pos = choose(std::move(s.pos), static_cast<std::size_t>(target), rng);
  const int n = static_cast<int>(pos.size());
  std::vector<int> mult(pos.size(), target / n);
  for (int i = 0; i < target % n; ++i) ++mult[static_cast<std::size_t>(i)];
  return assemble(pos, mult, s.neg, policy.batch_size - target, rng);
}

SampledBatch sample_batch(std::span<const ProposalLabel> labeled, const SamplingPolicy& policy,
                          std::uint64_t seed) {
  return policy.mode == SamplingMode::soft ? sample_soft(labeled, policy, seed)
                                           : sample_hard(labeled, policy, seed);
}

std::pair<int, int> count_positives(const SampledBatch& batch) {
  return {batch.pos_count_unique, batch.pos_count_effective};
}

}  // namespace rcnnlab
