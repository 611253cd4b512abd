#include <doctest.h>

#include <stdexcept>

#include <algorithm>

#include "modeset/matching.hpp"
#include "modeset/rng.hpp"
#include "oracles.hpp"

using namespace modeset;

namespace {

CostMatrix matrix(int rows, int cols, const std::vector<double>& entries) {
  CostMatrix c(rows, cols);
  c.entries = entries;
  return c;
}

SoftMask soft_from(const std::vector<double>& vals, int h, int w) {
  SoftMask m(h, w);
  m.values = vals;
  return m;
}

BinaryMask bin_from(const std::vector<int>& bits, int h, int w) {
  BinaryMask m(h, w);
  for (size_t i = 0; i < bits.size(); ++i) m.values[i] = static_cast<uint8_t>(bits[i]);
  return m;
}

}  // namespace

TEST_CASE("solve_assignment picks the zero diagonal") {
  CostMatrix c = matrix(3, 3, {0, 5, 5, 5, 0, 5, 5, 5, 0});
  auto [pi, cost] = solve_assignment(c);
  CHECK(pi.assignment == std::vector<int>{0, 1, 2});
  CHECK(cost == 0.0);
}

TEST_CASE("solve_assignment on the rectangular hand case") {
  // Brute force over all 6 partial permutations gives (2,0) at cost 0.9.
  CostMatrix c = matrix(2, 3, {1.0, 2.0, 0.5, 0.4, 3.0, 0.6});
  auto [pi, cost] = solve_assignment(c);
  CHECK(pi.assignment == std::vector<int>{2, 0});
  CHECK(cost == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("solve_assignment equals brute force on random rectangles") {
  Rng rng(123);
  for (int trial = 0; trial < 300; ++trial) {
    int rows = 1 + rng.uniform_int(0, 3);
    int cols = rows + rng.uniform_int(0, 6 - rows);
    CostMatrix c(rows, cols);
    for (auto& e : c.entries) e = rng.uniform();
    auto [pi, cost] = solve_assignment(c);
    auto brute = oracle::brute_force_assignment(c);
    CHECK(cost == brute.cost);
    CHECK(pi.assignment == brute.assignment);
  }
}

TEST_CASE("solve_assignment breaks exact ties lexicographically") {
  // Both columns are identical: (0,1) and (1,0) tie; lexicographic order
  // demands assignment (0,1).
  CostMatrix c = matrix(2, 2, {0.5, 0.5, 0.5, 0.5});
  auto [pi, cost] = solve_assignment(c);
  CHECK(pi.assignment == std::vector<int>{0, 1});
  CHECK(cost == doctest::Approx(1.0));

  // Duplicate proposals: columns 1 and 2 are copies; the smaller index wins.
  CostMatrix d = matrix(2, 3, {0.9, 0.1, 0.1, 0.2, 0.7, 0.7});
  auto [pid, costd] = solve_assignment(d);
  CHECK(pid.assignment == std::vector<int>{1, 0});
  CHECK(costd == doctest::Approx(0.3));
}

TEST_CASE("permuting columns permutes the assignment and keeps the cost") {
  Rng rng(321);
  for (int trial = 0; trial < 50; ++trial) {
    int rows = 1 + rng.uniform_int(0, 2);
    int cols = rows + rng.uniform_int(0, 2);
    CostMatrix c(rows, cols);
    for (auto& e : c.entries) e = rng.uniform();
    auto [pi, cost] = solve_assignment(c);

    std::vector<int> perm(cols);
    for (int j = 0; j < cols; ++j) perm[j] = j;
    for (int j = cols - 1; j > 0; --j) std::swap(perm[j], perm[rng.uniform_int(0, j)]);
    CostMatrix shuffled(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) shuffled.at(i, perm[j]) = c.at(i, j);
    auto [pi2, cost2] = solve_assignment(shuffled);
    CHECK(cost2 == doctest::Approx(cost).epsilon(1e-12));
    for (int i = 0; i < rows; ++i) CHECK(pi2.assignment[i] == perm[pi.assignment[i]]);
  }
}

TEST_CASE("solve_assignment validates its input") {
  CHECK_THROWS_AS(solve_assignment(matrix(2, 1, {1.0, 2.0})), std::invalid_argument);
  CostMatrix c = matrix(1, 2, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(solve_assignment(c), std::invalid_argument);
}

TEST_CASE("mask_distance is zero for a perfect binary prediction") {
  BinaryMask target = bin_from({1, 0, 1, 0}, 2, 2);
  SoftMask pred = soft_from({1.0, 0.0, 1.0, 0.0}, 2, 2);
  CHECK(mask_distance(MaskLoss::OneMinusIou, target, pred) == 0.0);
  CHECK(mask_distance(MaskLoss::Mse, target, pred) == 0.0);
  CHECK(mask_distance(MaskLoss::Dice, target, pred) ==
        doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("mse of an all-0.5 prediction is 0.25") {
  BinaryMask target = bin_from({1, 1, 0, 0}, 2, 2);
  SoftMask pred = soft_from({0.5, 0.5, 0.5, 0.5}, 2, 2);
  CHECK(mask_distance(MaskLoss::Mse, target, pred) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("soft IoU hand evaluation on a 2x2 case") {
  BinaryMask target = bin_from({1, 0, 0, 0}, 2, 2);
  SoftMask pred = soft_from({0.9, 0.1, 0.1, 0.1}, 2, 2);
  // intersection 0.9; union = (1 + 0.9 - 0.9) + 0.1 + 0.1 + 0.1
  double inter = 0.9;
  double uni = (1.0 + 0.9 - 0.9) + 0.1 + 0.1 + 0.1;
  double expected = 1.0 - inter / uni;
  CHECK(mask_distance(MaskLoss::OneMinusIou, target, pred) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("soft IoU of binary predictions equals the hard IoU") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    BinaryMask a(3, 3), b(3, 3);
    for (auto& v : a.values) v = rng.uniform() < 0.5;
    for (auto& v : b.values) v = rng.uniform() < 0.5;
    SoftMask soft(3, 3);
    for (size_t i = 0; i < b.values.size(); ++i) soft.values[i] = b.values[i];
    CHECK(mask_distance(MaskLoss::OneMinusIou, a, soft) ==
          doctest::Approx(1.0 - iou(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("mask distances are nonnegative and vanish only at the target") {
  Rng rng(5);
  BinaryMask target(2, 3);
  for (auto& v : target.values) v = rng.uniform() < 0.5;
  if (target.count() == 0) target.values[0] = 1;
  SoftMask off(2, 3);
  for (size_t i = 0; i < off.values.size(); ++i)
    off.values[i] = std::clamp(target.values[i] + rng.uniform(-0.4, 0.4), 0.0, 1.0);
  for (MaskLoss kind :
       {MaskLoss::OneMinusIou, MaskLoss::Mse, MaskLoss::Dice, MaskLoss::DiceFocal}) {
    CHECK(mask_distance(kind, target, off) >= 0.0);
  }
  SoftMask exact(2, 3);
  for (size_t i = 0; i < exact.values.size(); ++i) exact.values[i] = target.values[i];
  CHECK(mask_distance(MaskLoss::OneMinusIou, target, exact) == 0.0);
  CHECK(mask_distance(MaskLoss::Mse, target, exact) == 0.0);
  CHECK(mask_distance(MaskLoss::Dice, target, exact) < 1e-5);
}

TEST_CASE("mask_distance gradients match finite differences") {
  Rng rng(17);
  BinaryMask target(2, 3);
  for (auto& v : target.values) v = rng.uniform() < 0.5;
  target.values[0] = 1;
  SoftMask pred(2, 3);
  for (auto& v : pred.values) v = rng.uniform(0.05, 0.95);
  const double h = 1e-6;
  for (MaskLoss kind :
       {MaskLoss::OneMinusIou, MaskLoss::Mse, MaskLoss::Dice, MaskLoss::DiceFocal}) {
    auto grad = mask_distance_grad(kind, target, pred);
    for (size_t i = 0; i < pred.values.size(); ++i) {
      double saved = pred.values[i];
      pred.values[i] = saved + h;
      double up = mask_distance(kind, target, pred);
      pred.values[i] = saved - h;
      double down = mask_distance(kind, target, pred);
      pred.values[i] = saved;
      double fd = (up - down) / (2.0 * h);
      CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("match_modes on aligned and reversed proposals") {
  std::vector<BinaryMask> gt = {bin_from({1, 0, 0, 0}, 2, 2), bin_from({0, 0, 0, 1}, 2, 2)};
  ProposalSet aligned;
  for (const auto& g : gt) {
    SoftMask s(2, 2);
    for (size_t i = 0; i < s.values.size(); ++i) s.values[i] = g.values[i];
    aligned.proposals.push_back(s);
    aligned.scores.push_back(0.5);
  }
  auto pi = match_modes(gt, aligned, MaskLoss::OneMinusIou);
  CHECK(pi.assignment == std::vector<int>{0, 1});

  ProposalSet reversed;
  reversed.proposals = {aligned.proposals[1], aligned.proposals[0]};
  reversed.scores = {0.5, 0.5};
  auto pir = match_modes(gt, reversed, MaskLoss::OneMinusIou);
  CHECK(pir.assignment == std::vector<int>{1, 0});
}

TEST_CASE("match_modes equals brute force on random instances") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<BinaryMask> gt;
    for (int i = 0; i < 3; ++i) {
      BinaryMask m(3, 3);
      for (auto& v : m.values) v = rng.uniform() < 0.5;
      gt.push_back(m);
    }
    ProposalSet ps;
    for (int k = 0; k < 5; ++k) {
      SoftMask s(3, 3);
      for (auto& v : s.values) v = rng.uniform();
      ps.proposals.push_back(s);
      ps.scores.push_back(0.5);
    }
    CostMatrix c(3, 5);
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 5; ++k)
        c.at(i, k) = mask_distance(MaskLoss::Mse, gt[i], ps.proposals[k]);
    auto brute = oracle::brute_force_assignment(c);
    auto pi = match_modes(gt, ps, MaskLoss::Mse);
    CHECK(pi.assignment == brute.assignment);
  }
}
