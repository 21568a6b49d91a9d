#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "rcnnlab/sampler.hpp"

using namespace rcnnlab;

namespace {

// n_pos positives and n_neg negatives at shuffled positions.
std::vector<ProposalLabel> labels(int n_pos, int n_neg, std::uint64_t seed = 0) {
  std::vector<ProposalLabel> v(static_cast<std::size_t>(n_pos + n_neg));
  for (int i = 0; i < n_pos; ++i) {
    v[static_cast<std::size_t>(i)].class_id = 1 + i % 3;
    v[static_cast<std::size_t>(i)].max_iou = 0.7;
  }
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

SamplingPolicy policy(SamplingMode mode, int p, int n, int b = 512) { return {mode, {p, n}, b}; }

void check_batch_shape(const SampledBatch& b, std::span<const ProposalLabel> pool, int batch_size) {
  CHECK(b.pos_count_effective + b.neg_count == batch_size);
  std::set<std::size_t> seen;
  int unique_pos = 0, eff_pos = 0, neg = 0;
  bool in_negatives = false;
  for (const auto& e : b.entries) {
    CHECK(seen.insert(e.index).second);
    CHECK(e.positive == pool[e.index].positive());
    CHECK(e.multiplicity >= 1);
    if (e.positive) {
      CHECK_FALSE(in_negatives);  // positives first
      ++unique_pos;
      eff_pos += e.multiplicity;
    } else {
      in_negatives = true;
      CHECK(e.multiplicity == 1);
      neg += 1;
    }
  }
  CHECK(unique_pos == b.pos_count_unique);
  CHECK(eff_pos == b.pos_count_effective);
  CHECK(neg == b.neg_count);
}

}  // namespace

TEST_CASE("ratio parsing") {
  CHECK(parse_ratio("1:9") == SamplingRatio{1, 9});
  CHECK(parse_ratio("1:3").str() == "1:3");
  CHECK_THROWS_AS(parse_ratio("1-9"), std::invalid_argument);
  CHECK_THROWS_AS(parse_ratio("0:3"), std::invalid_argument);
  CHECK_THROWS_AS(parse_ratio("1:"), std::invalid_argument);
  CHECK_THROWS_AS(parse_ratio("a:b"), std::invalid_argument);
  CHECK(policy(SamplingMode::soft, 1, 3).pos_target() == 128);
  CHECK(policy(SamplingMode::soft, 1, 1).pos_target() == 256);
  CHECK(policy(SamplingMode::soft, 1, 9).pos_target() == 51);
  CHECK_THROWS(policy(SamplingMode::soft, 1, 3, 3).validate());
  CHECK_THROWS(policy(SamplingMode::soft, 1, 9, 9).validate());
}

TEST_CASE("soft sampling examples") {
  const auto pol = policy(SamplingMode::soft, 1, 3);
  SUBCASE("plenty of positives") {
    const auto pool = labels(200, 600);
    const auto b = sample_soft(pool, pol, 1);
    CHECK(b.pos_count_unique == 128);
    CHECK(b.neg_count == 384);
  }
  SUBCASE("shortage uses every positive") {
    const auto pool = labels(40, 600);
    const auto b = sample_soft(pool, pol, 1);
    CHECK(b.pos_count_unique == 40);
    CHECK(b.neg_count == 472);
    CHECK(count_positives(b) == std::pair{40, 40});
  }
  SUBCASE("no positives") {
    const auto pool = labels(0, 600);
    const auto b = sample_soft(pool, pol, 1);
    CHECK(b.pos_count_unique == 0);
    CHECK(b.neg_count == 512);
    CHECK(count_positives(b) == std::pair{0, 0});
  }
  SUBCASE("pool smaller than the batch") {
    const auto pool = labels(10, 400);
    CHECK_THROWS_AS(sample_soft(pool, pol, 1), std::runtime_error);
  }
  SUBCASE("not enough negatives to fill the batch") {
    const auto pool = labels(200, 320);  // 128 positives leave room for 384 negatives, but only 320 exist
    CHECK_THROWS_AS(sample_soft(pool, pol, 1), std::runtime_error);
  }
  SUBCASE("mode mismatch") { CHECK_THROWS(sample_soft(labels(10, 600), policy(SamplingMode::hard, 1, 3), 1)); }
}

TEST_CASE("soft sampler is exhaustive-correct over every positive count") {
  const auto pol = policy(SamplingMode::soft, 1, 3);
  for (int n_pos = 0; n_pos <= 512; ++n_pos) {
    const auto pool = labels(n_pos, 512, static_cast<std::uint64_t>(n_pos));
    const auto b = sample_soft(pool, pol, 1000 + static_cast<std::uint64_t>(n_pos));
    CHECK(b.pos_count_unique == std::min(n_pos, 128));
    CHECK(b.pos_count_effective == b.pos_count_unique);
    for (const auto& e : b.entries) CHECK(e.multiplicity == 1);
    check_batch_shape(b, pool, 512);
  }
}

TEST_CASE("hard sampling examples") {
  SUBCASE("one positive in a tiny batch") {
    const auto pool = labels(1, 10);
    const auto b = sample_hard(pool, policy(SamplingMode::hard, 1, 1, 8), 3);
    REQUIRE(b.pos_count_unique == 1);
    CHECK(b.entries.front().multiplicity == 4);
    CHECK(b.neg_count == 4);
    CHECK(count_positives(b) == std::pair{1, 4});
  }
  SUBCASE("enough positives means no copies") {
    const auto b = sample_hard(labels(200, 600), policy(SamplingMode::hard, 1, 3), 3);
    CHECK(b.pos_count_unique == 128);
    CHECK(b.pos_count_effective == 128);
  }
  SUBCASE("no positives falls back to negatives") {
    const auto b = sample_hard(labels(0, 600), policy(SamplingMode::hard, 1, 3), 3);
    CHECK(b.neg_count == 512);
    CHECK(b.pos_count_effective == 0);
  }
}

TEST_CASE("hard sampler is exhaustive-correct over every positive count") {
  const auto pol = policy(SamplingMode::hard, 1, 3);
  for (int n_pos = 0; n_pos <= 512; ++n_pos) {
    const auto pool = labels(n_pos, 512, static_cast<std::uint64_t>(n_pos));
    const auto b = sample_hard(pool, pol, 7 + static_cast<std::uint64_t>(n_pos));
    check_batch_shape(b, pool, 512);
    if (n_pos == 0) {
      CHECK(b.neg_count == 512);
      continue;
    }
    CHECK(b.pos_count_effective == 128);
    CHECK(b.pos_count_unique == std::min(n_pos, 128));
    int lo = 1 << 30, hi = 0;
    int prev = 1 << 30;
    for (const auto& e : b.entries) {
      if (!e.positive) continue;
      lo = std::min(lo, e.multiplicity);
      hi = std::max(hi, e.multiplicity);
      CHECK(e.multiplicity <= prev);  // extra copies sit on the lowest indices
      prev = e.multiplicity;
    }
    CHECK(hi - lo <= 1);
  }
}

TEST_CASE("sampling is a pure function of the seed") {
  const auto pool = labels(90, 700, 4);
  for (auto mode : {SamplingMode::soft, SamplingMode::hard}) {
    const auto pol = policy(mode, 1, 3);
    const auto a = sample_batch(pool, pol, 55), b = sample_batch(pool, pol, 55), c = sample_batch(pool, pol, 56);
    REQUIRE(a.entries.size() == b.entries.size());
    bool same_as_c = a.entries.size() == c.entries.size();
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
      CHECK(a.entries[i].index == b.entries[i].index);
      CHECK(a.entries[i].multiplicity == b.entries[i].multiplicity);
      if (same_as_c && a.entries[i].index != c.entries[i].index) same_as_c = false;
    }
    CHECK_FALSE(same_as_c);
  }
}
