#include <doctest.h>

#include <stdexcept>

#include "modeset/mask.hpp"
#include "modeset/rng.hpp"

using namespace modeset;

namespace {

BinaryMask from_bits(int h, int w, const std::vector<int>& bits) {
  BinaryMask m(h, w);
  for (size_t i = 0; i < bits.size(); ++i) m.values[i] = static_cast<uint8_t>(bits[i]);
  return m;
}

BinaryMask random_mask(int h, int w, Rng& rng, double density = 0.5) {
  BinaryMask m(h, w);
  for (auto& v : m.values) v = rng.uniform() < density ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("iou identity and disjoint cases") {
  BinaryMask a = from_bits(2, 2, {1, 1, 0, 0});
  BinaryMask b = from_bits(2, 2, {0, 0, 1, 1});
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, b) == 0.0);
}

TEST_CASE("iou of shifted squares counts pixels") {
  // 4-pixel square at (0,0), same square shifted right by one: overlap 2,
  // union 6.
  BinaryMask a(3, 4);
  a.set(0, 0, 1);
  a.set(0, 1, 1);
  a.set(1, 0, 1);
  a.set(1, 1, 1);
  BinaryMask b(3, 4);
  b.set(0, 2, 1);
  b.set(0, 1, 1);
  b.set(1, 2, 1);
  b.set(1, 1, 1);
  CHECK(iou(a, b) == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("iou empty-mask conventions") {
  BinaryMask empty(3, 3);
  BinaryMask nonempty = from_bits(3, 3, {1, 0, 0, 0, 0, 0, 0, 0, 0});
  CHECK(iou(empty, empty) == 1.0);
  CHECK(iou(empty, nonempty) == 0.0);
  CHECK(iou(nonempty, empty) == 0.0);
}

TEST_CASE("iou rejects dimension mismatch") {
  CHECK_THROWS_AS(iou(BinaryMask(2, 2), BinaryMask(2, 3)), std::invalid_argument);
}

TEST_CASE("iou is symmetric on random masks") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    BinaryMask a = random_mask(4, 5, rng);
    BinaryMask b = random_mask(4, 5, rng);
    CHECK(iou(a, b) == iou(b, a));
    CHECK(iou(a, a) == 1.0);
  }
}

TEST_CASE("merge_duplicates sums the probability mass of equal masks") {
  BinaryMask a = from_bits(2, 2, {1, 0, 0, 0});
  BinaryMask b = from_bits(2, 2, {0, 1, 0, 0});
  BinaryMask c = from_bits(2, 2, {0, 0, 1, 0});
  ModeSet merged = merge_duplicates({a, b, b, c}, {0.25, 0.25, 0.25, 0.25});
  REQUIRE(merged.size() == 3);
  CHECK(merged.weights[0] == doctest::Approx(0.25));
  CHECK(merged.weights[1] == doctest::Approx(0.5));
  CHECK(merged.weights[2] == doctest::Approx(0.25));
  CHECK(merged.multiplicities == std::vector<int>{1, 2, 1});
  CHECK(merged.masks[1] == b);
}

TEST_CASE("merge_duplicates keeps distinct masks as-is") {
  BinaryMask a = from_bits(1, 3, {1, 0, 0});
  BinaryMask b = from_bits(1, 3, {0, 1, 0});
  ModeSet merged = merge_duplicates({a, b}, {0.7, 0.3});
  CHECK(merged.size() == 2);
  CHECK(merged.weights[0] == 0.7);
  CHECK(merged.weights[1] == 0.3);
}

TEST_CASE("merge_duplicates collapses identical masks fully") {
  BinaryMask a = from_bits(1, 2, {1, 0});
  ModeSet merged = merge_duplicates({a, a, a, a}, {0.25, 0.25, 0.25, 0.25});
  REQUIRE(merged.size() == 1);
  CHECK(merged.weights[0] == doctest::Approx(1.0));
  CHECK(merged.multiplicities[0] == 4);
}

TEST_CASE("merge_duplicates conserves weight and is idempotent") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<BinaryMask> masks;
    std::vector<double> weights;
    int n = 2 + rng.uniform_int(0, 6);
    for (int i = 0; i < n; ++i) {
      masks.push_back(random_mask(2, 3, rng));
      weights.push_back(rng.uniform());
    }
    double sum = 0.0;
    for (double w : weights) sum += w;
    for (double& w : weights) w /= sum;
    // Exact unit sum for the precondition.
    weights[0] += 1.0 - [&] {
      double s = 0.0;
      for (double w : weights) s += w;
      return s;
    }();

    ModeSet merged = merge_duplicates(masks, weights);
    double total = 0.0;
    for (double w : merged.weights) total += w;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    ModeSet again = merge_duplicates(merged.masks, merged.weights);
    REQUIRE(again.size() == merged.size());
    for (size_t k = 0; k < merged.size(); ++k) {
      CHECK(again.masks[k] == merged.masks[k]);
      CHECK(again.weights[k] == doctest::Approx(merged.weights[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("merge_duplicates validates the weight simplex") {
  BinaryMask a(1, 1);
  CHECK_THROWS_AS(merge_duplicates({a}, {0.5}), std::invalid_argument);
  CHECK_THROWS_AS(merge_duplicates({a}, {-1.0}), std::invalid_argument);
  CHECK_THROWS_AS(merge_duplicates({}, {}), std::invalid_argument);
}

TEST_CASE("binarize thresholds with >= at the boundary") {
  SoftMask all_high(2, 2, 0.9);
  SoftMask all_low(2, 2, 0.1);
  SoftMask boundary(1, 1, 0.5);
  CHECK(binarize(all_high).count() == 4);
  CHECK(binarize(all_low).count() == 0);
  CHECK(binarize(boundary).values[0] == 1);
  CHECK_THROWS_AS(binarize(all_high, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(binarize(all_high, 1.0), std::invalid_argument);
}

TEST_CASE("ModeSet validation catches broken invariants") {
  BinaryMask a = from_bits(1, 2, {1, 0});
  BinaryMask b = from_bits(1, 2, {0, 1});
  ModeSet ok{{a, b}, {0.5, 0.5}, {1, 1}};
  CHECK_NOTHROW(ok.validate());
  ModeSet dup{{a, a}, {0.5, 0.5}, {1, 1}};
  CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
  ModeSet bad_sum{{a, b}, {0.5, 0.6}, {1, 1}};
  CHECK_THROWS_AS(bad_sum.validate(), std::invalid_argument);
}
