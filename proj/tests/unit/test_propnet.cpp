#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "modeset/propnet.hpp"
#include "modeset/synthgen.hpp"
#include "oracles.hpp"

using namespace modeset;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

TrainConfig tiny_config(int k_hat) {
  TrainConfig cfg;
  cfg.num_proposals = k_hat;
  cfg.hidden1 = 12;
  cfg.hidden2 = 10;
  cfg.sel_hidden = 6;
  cfg.loss_kind = MaskLoss::Mse;
  return cfg;
}

// All-zero parameters: every proposal pixel and score is sigmoid(0) = 0.5.
ModelParams zero_params(int in_channels, int h, int w, const TrainConfig& cfg) {
  Rng rng(0);
  ModelParams p = init_params(in_channels, h, w, cfg, rng);
  p.w1.setZero();
  p.b1.setZero();
  p.w2.setZero();
  p.b2.setZero();
  for (int k = 0; k < p.num_proposals; ++k) {
    p.head_w[k].setZero();
    p.head_b[k].setZero();
  }
  p.sel_w1.setZero();
  p.sel_b1.setZero();
  p.sel_w2.setZero();
  p.sel_b2.setZero();
  return p;
}

BinaryMask bin_from(const std::vector<int>& bits, int h, int w) {
  BinaryMask m(h, w);
  for (size_t i = 0; i < bits.size(); ++i) m.values[i] = static_cast<uint8_t>(bits[i]);
  return m;
}

DatasetItem item_with_modes(std::vector<BinaryMask> masks, std::vector<double> weights) {
  DatasetItem item;
  item.height = masks[0].height;
  item.width = masks[0].width;
  item.channels = 1;
  item.input.assign(item.input_size(), 0.0);
  item.input[0] = 1.0;
  std::vector<int> mult(masks.size(), 1);
  item.modes = ModeSet{std::move(masks), std::move(weights), std::move(mult)};
  return item;
}

ModelParams random_params(int in_channels, int h, int w, const TrainConfig& cfg,
                          uint64_t seed) {
  Rng rng(seed);
  return init_params(in_channels, h, w, cfg, rng);
}

double bce_ref(double t, double d) {
  d = std::clamp(d, 1e-7, 1.0 - 1e-7);
  return -(t * std::log(d) + (1.0 - t) * std::log(1.0 - d));
}

template <typename T>
bool exact_eq(const T& a, const T& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (long i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("forward with zero parameters emits 0.5 everywhere") {
  TrainConfig cfg = tiny_config(3);
  ModelParams p = zero_params(1, 3, 3, cfg);
  std::vector<double> x(9, 0.3);
  ProposalSet ps = forward(p, x);
  REQUIRE(ps.size() == 3);
  for (const auto& prop : ps.proposals)
    for (double v : prop.values) CHECK(v == 0.5);
  for (double d : ps.scores) CHECK(d == 0.5);
}

TEST_CASE("forward is bit-deterministic and bounded") {
  TrainConfig cfg = tiny_config(4);
  ModelParams p = random_params(2, 3, 3, cfg, 77);
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(18);
    for (auto& v : x) v = rng.uniform(-2.0, 2.0);
    ProposalSet a = forward(p, x);
    ProposalSet b = forward(p, x);
    for (size_t k = 0; k < a.size(); ++k) {
      CHECK(a.scores[k] == b.scores[k]);
      CHECK(a.scores[k] >= 0.0);
      CHECK(a.scores[k] <= 1.0);
      for (size_t i = 0; i < a.proposals[k].values.size(); ++i) {
        double v = a.proposals[k].values[i];
        CHECK(v == b.proposals[k].values[i]);
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("loss_fully vanishes for a perfect prediction") {
  BinaryMask a = bin_from({1, 0, 0, 0}, 2, 2);
  BinaryMask b = bin_from({0, 0, 0, 1}, 2, 2);
  DatasetItem item = item_with_modes({a, b}, {0.5, 0.5});
  TrainConfig cfg = tiny_config(4);
  cfg.loss_kind = MaskLoss::OneMinusIou;
  ModelParams p = zero_params(1, 2, 2, cfg);
  // Heads 0/1 reproduce the two modes at sigmoid(+-20); heads 2/3 stay off.
  for (int px = 0; px < 4; ++px) {
    p.head_b[0][px] = a.values[px] ? 20.0 : -20.0;
    p.head_b[1][px] = b.values[px] ? 20.0 : -20.0;
    p.head_b[2][px] = -20.0;
    p.head_b[3][px] = -20.0;
  }
  p.sel_b2 << 20.0, 20.0, -20.0, -20.0;
  LossBreakdown loss = loss_fully(p, item, cfg);
  CHECK(loss.mask_part < 1e-6);
  CHECK(loss.select_part < 1e-6);
  CHECK(loss.total < 1e-6);
}

TEST_CASE("loss_fully with lambda zero is exactly the mask part") {
  DatasetItem item = item_with_modes({bin_from({1, 0, 0, 0}, 2, 2)}, {1.0});
  TrainConfig cfg = tiny_config(2);
  cfg.lambda = 0.0;
  ModelParams p = random_params(1, 2, 2, cfg, 5);
  LossBreakdown loss = loss_fully(p, item, cfg);
  CHECK(loss.total == loss.mask_part);
}

TEST_CASE("loss_fully matches an independent scalar evaluation") {
  // Two modes, four constant-valued proposals, hand-set scores.
  BinaryMask a = bin_from({1, 0, 0, 0}, 2, 2);
  BinaryMask b = bin_from({1, 1, 0, 0}, 2, 2);
  DatasetItem item = item_with_modes({a, b}, {0.5, 0.5});
  TrainConfig cfg = tiny_config(4);
  cfg.lambda = 0.01;
  ModelParams p = zero_params(1, 2, 2, cfg);
  const double prop_vals[4] = {0.7, 0.2, 0.55, 0.4};
  const double score_vals[4] = {0.9, 0.3, 0.6, 0.2};
  for (int k = 0; k < 4; ++k) {
    for (int px = 0; px < 4; ++px) p.head_b[k][px] = logit(prop_vals[k]);
    p.sel_b2[k] = logit(score_vals[k]);
  }

  // Independent evaluation: mse against constant proposals, brute-force
  // matching, then the selection sum.
  auto mse_const = [](const BinaryMask& m, double c) {
    double s = 0.0;
    for (uint8_t v : m.values) s += (c - v) * (c - v);
    return s / m.values.size();
  };
  CostMatrix cost(2, 4);
  for (int k = 0; k < 4; ++k) {
    cost.at(0, k) = mse_const(a, prop_vals[k]);
    cost.at(1, k) = mse_const(b, prop_vals[k]);
  }
  auto brute = oracle::brute_force_assignment(cost);
  double mask_expected = (cost.at(0, brute.assignment[0]) + cost.at(1, brute.assignment[1])) / 2.0;
  double select_expected = 0.0;
  for (int k = 0; k < 4; ++k) {
    bool matched = k == brute.assignment[0] || k == brute.assignment[1];
    select_expected += bce_ref(matched ? 1.0 : 0.0, score_vals[k]);
  }
  select_expected /= 4.0;

  LossBreakdown loss = loss_fully(p, item, cfg);
  CHECK(loss.mask_part == doctest::Approx(mask_expected).epsilon(1e-9));
  CHECK(loss.select_part == doctest::Approx(select_expected).epsilon(1e-9));
  CHECK(loss.total ==
        doctest::Approx(mask_expected + cfg.lambda * select_expected).epsilon(1e-9));
}

TEST_CASE("loss_fully rejects more modes than proposals") {
  DatasetItem item = item_with_modes(
      {bin_from({1, 0, 0, 0}, 2, 2), bin_from({0, 1, 0, 0}, 2, 2),
       bin_from({0, 0, 1, 0}, 2, 2)},
      {0.4, 0.3, 0.3});
  TrainConfig cfg = tiny_config(2);
  ModelParams p = zero_params(1, 2, 2, cfg);
  CHECK_THROWS_AS(loss_fully(p, item, cfg), std::invalid_argument);
}

TEST_CASE("PU selection loss equals ln 2 for all-0.5 scores") {
  DatasetItem item = item_with_modes({bin_from({1, 0, 0, 0}, 2, 2)}, {1.0});
  TrainConfig cfg = tiny_config(4);
  cfg.eta_p = 0.5;
  ModelParams p = zero_params(1, 2, 2, cfg);
  std::vector<LabeledExample> batch{{&item, item.modes.masks[0]}};
  LossBreakdown loss = loss_single_pu(p, batch, cfg);
  CHECK(loss.select_part == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(loss.select_part == doctest::Approx(0.6931).epsilon(1e-3));
}

TEST_CASE("PU loss clamps to ~zero for confident correct scores") {
  BinaryMask label = bin_from({1, 1, 0, 0}, 2, 2);
  DatasetItem item = item_with_modes({label}, {1.0});
  TrainConfig cfg = tiny_config(3);
  ModelParams p = zero_params(1, 2, 2, cfg);
  for (int px = 0; px < 4; ++px) {
    p.head_b[0][px] = label.values[px] ? 20.0 : -20.0;  // head 0 is the best match
    p.head_b[1][px] = -20.0;
    p.head_b[2][px] = -20.0;
  }
  p.sel_b2 << 20.0, -20.0, -20.0;
  std::vector<LabeledExample> batch{{&item, label}};
  LossBreakdown loss = loss_single_pu(p, batch, cfg);
  CHECK(loss.select_part < 1e-6);
}

TEST_CASE("PU loss with eta zero reduces to the unlabeled term") {
  DatasetItem item = item_with_modes({bin_from({1, 1, 0, 0}, 2, 2)}, {1.0});
  TrainConfig cfg = tiny_config(4);
  cfg.eta_p = 0.0;
  ModelParams p = zero_params(1, 2, 2, cfg);
  const double score_vals[4] = {0.9, 0.3, 0.6, 0.2};
  for (int k = 0; k < 4; ++k) p.sel_b2[k] = logit(score_vals[k]);
  // Head 0 is matched (all heads tie at 0.5 outputs; ties go to index 0),
  // so L_U pools the other three scores.
  std::vector<LabeledExample> batch{{&item, item.modes.masks[0]}};
  double lu = (bce_ref(0, 0.3) + bce_ref(0, 0.6) + bce_ref(0, 0.2)) / 3.0;
  LossBreakdown loss = loss_single_pu(p, batch, cfg);
  CHECK(loss.select_part == doctest::Approx(lu).epsilon(1e-9));
}

TEST_CASE("PU loss requires at least two proposals") {
  DatasetItem item = item_with_modes({bin_from({1, 0, 0, 0}, 2, 2)}, {1.0});
  TrainConfig cfg = tiny_config(1);
  ModelParams p = zero_params(1, 2, 2, cfg);
  std::vector<LabeledExample> batch{{&item, item.modes.masks[0]}};
  CHECK_THROWS_AS(loss_single_pu(p, batch, cfg), std::invalid_argument);
}

TEST_CASE("PU select part is nonnegative and at least the positive term") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    TrainConfig cfg = tiny_config(3);
    cfg.eta_p = 0.5;
    ModelParams p = random_params(1, 2, 2, cfg, 1000 + trial);
    DatasetItem item = item_with_modes({bin_from({1, 0, 0, 0}, 2, 2)}, {1.0});
    std::vector<LabeledExample> batch{{&item, item.modes.masks[0]}};
    LossBreakdown loss = loss_single_pu(p, batch, cfg);
    ProposalSet ps = forward(p, item.input);
    // Recover the matched head to bound select_part from below.
    int best = 0;
    double best_d = 1e9;
    for (int k = 0; k < 3; ++k) {
      double d = mask_distance(cfg.loss_kind, item.modes.masks[0], ps.proposals[k]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    double lp1 = bce_ref(1.0, ps.scores[best]);
    CHECK(loss.select_part >= 0.0);
    CHECK(loss.select_part >= cfg.eta_p * lp1 - 1e-12);
  }
}

TEST_CASE("loss_fully is invariant under head permutation") {
  TrainConfig cfg = tiny_config(4);
  cfg.loss_kind = MaskLoss::DiceFocal;
  ModelParams p = random_params(1, 3, 3, cfg, 21);
  DatasetItem item = item_with_modes(
      {bin_from({1, 1, 0, 0, 0, 0, 0, 0, 0}, 3, 3), bin_from({0, 0, 0, 0, 1, 1, 0, 0, 0}, 3, 3)},
      {0.6, 0.4});
  LossBreakdown before = loss_fully(p, item, cfg);

  // Swap heads 0 and 2 together with the selection rows that output their
  // scores; the set prediction loss must not change.
  ModelParams q = p;
  std::swap(q.head_w[0], q.head_w[2]);
  std::swap(q.head_b[0], q.head_b[2]);
  q.sel_w2.row(0).swap(q.sel_w2.row(2));
  std::swap(q.sel_b2[0], q.sel_b2[2]);
  LossBreakdown after = loss_fully(q, item, cfg);
  CHECK(after.total == doctest::Approx(before.total).epsilon(1e-12));
  CHECK(after.mask_part == doctest::Approx(before.mask_part).epsilon(1e-12));
  CHECK(after.select_part == doctest::Approx(before.select_part).epsilon(1e-12));
}

TEST_CASE("finite differences recover the gradient of a quadratic") {
  // Sanity check of the finite-difference scheme itself.
  auto f = [](double x) { return (x - 3.0) * (x - 3.0); };
  double h = 1e-4;
  for (double x : {-1.0, 0.5, 4.0}) {
    double fd = (f(x + h) - f(x - h)) / (2.0 * h);
    CHECK(fd == doctest::Approx(2.0 * (x - 3.0)).epsilon(1e-8));
  }
}

TEST_CASE("reverse-mode gradients match finite differences (fully labeled)") {
  for (MaskLoss kind : {MaskLoss::Mse, MaskLoss::OneMinusIou, MaskLoss::DiceFocal}) {
    TrainConfig cfg = tiny_config(3);
    cfg.loss_kind = kind;
    cfg.lambda = 0.05;
    ModelParams p = random_params(1, 3, 3, cfg, 400 + static_cast<int>(kind));
    DatasetItem item = item_with_modes(
        {bin_from({1, 1, 0, 0, 1, 0, 0, 0, 0}, 3, 3), bin_from({0, 0, 0, 0, 0, 1, 1, 1, 0}, 3, 3)},
        {0.5, 0.5});
    Rng rng(9 + static_cast<int>(kind));
    for (auto& v : item.input) v = rng.uniform(-1.0, 1.0);
    LossClosure closure;
    closure.scenario = Scenario::Full;
    closure.item = &item;
    closure.cfg = cfg;
    CHECK(oracle::max_grad_rel_error(p, closure) < 1e-3);
  }
}

TEST_CASE("reverse-mode gradients match finite differences (PU)") {
  TrainConfig cfg = tiny_config(3);
  cfg.loss_kind = MaskLoss::Mse;
  cfg.lambda = 0.1;
  cfg.eta_p = 0.5;
  ModelParams p = random_params(1, 3, 3, cfg, 500);
  DatasetItem item1 = item_with_modes({bin_from({1, 1, 0, 0, 0, 0, 0, 0, 0}, 3, 3)}, {1.0});
  DatasetItem item2 = item_with_modes({bin_from({0, 0, 0, 0, 0, 0, 1, 1, 0}, 3, 3)}, {1.0});
  Rng rng(10);
  for (auto& v : item1.input) v = rng.uniform(-1.0, 1.0);
  for (auto& v : item2.input) v = rng.uniform(-1.0, 1.0);
  LossClosure closure;
  closure.scenario = Scenario::Single;
  closure.batch = {{&item1, item1.modes.masks[0]}, {&item2, item2.modes.masks[0]}};
  closure.cfg = cfg;
  CHECK(oracle::max_grad_rel_error(p, closure) < 1e-3);
}

TEST_CASE("lambda zero silences the selection head gradients") {
  TrainConfig cfg = tiny_config(3);
  cfg.lambda = 0.0;
  ModelParams p = random_params(1, 3, 3, cfg, 600);
  DatasetItem item = item_with_modes({bin_from({1, 0, 0, 0, 0, 0, 0, 0, 0}, 3, 3)}, {1.0});
  LossClosure closure;
  closure.scenario = Scenario::Full;
  closure.item = &item;
  closure.cfg = cfg;
  ParamGrads g = gradient(p, closure);
  CHECK(g.sel_w1.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.sel_w2.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.sel_b1.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.sel_b2.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.head_w[0].cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("training memorizes a single item") {
  BinaryMask mode = bin_from({0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0}, 4, 4);
  DatasetItem item = item_with_modes({mode}, {1.0});
  TrainConfig cfg;
  cfg.scenario = Scenario::Full;
  cfg.loss_kind = MaskLoss::Mse;
  cfg.num_proposals = 2;
  cfg.hidden1 = 32;
  cfg.hidden2 = 32;
  cfg.sel_hidden = 8;
  cfg.epochs = 200;
  cfg.batch_size = 1;
  cfg.learning_rate = 3e-3;
  cfg.rng_seed = 11;
  TrainResult result = train({item}, cfg);
  LossBreakdown final_loss = loss_fully(result.params, item, cfg);
  CHECK(final_loss.mask_part < 0.01);
}

TEST_CASE("zero epochs returns the initialization") {
  DatasetItem item = item_with_modes({bin_from({1, 0, 0, 0}, 2, 2)}, {1.0});
  TrainConfig cfg = tiny_config(2);
  cfg.epochs = 0;
  cfg.rng_seed = 3;
  TrainResult a = train({item}, cfg);
  TrainResult b = train({item}, cfg);
  CHECK(a.history.empty());
  CHECK(a.best_epoch == 0);
  CHECK(exact_eq(a.params.w1, b.params.w1));
  cfg.epochs = 2;
  TrainResult c = train({item}, cfg);
  CHECK_FALSE(exact_eq(a.params.w1, c.params.w1));
}

TEST_CASE("lambda zero leaves selection parameters at their initialization") {
  DatasetItem item = item_with_modes({bin_from({1, 0, 0, 0}, 2, 2)}, {1.0});
  TrainConfig cfg = tiny_config(2);
  cfg.lambda = 0.0;
  cfg.epochs = 3;
  cfg.rng_seed = 4;
  TrainResult trained = train({item}, cfg);
  cfg.epochs = 0;
  TrainResult init = train({item}, cfg);
  CHECK(exact_eq(trained.params.sel_w1, init.params.sel_w1));
  CHECK(exact_eq(trained.params.sel_w2, init.params.sel_w2));
  CHECK_FALSE(exact_eq(trained.params.head_w[0], init.params.head_w[0]));
}

TEST_CASE("checkpoints round trip bit-exactly") {
  TrainConfig cfg = tiny_config(3);
  cfg.lambda = 0.123;
  cfg.eta_p = 0.25;
  cfg.rng_seed = 99;
  cfg.scenario = Scenario::Single;
  cfg.loss_kind = MaskLoss::DiceFocal;
  ModelParams p = random_params(2, 3, 4, cfg, 777);
  std::string path =
      (std::filesystem::temp_directory_path() / "modeset_ckpt_test.bin").string();
  save_checkpoint(p, cfg, path);
  auto [q, loaded_cfg] = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(exact_eq(q.w1, p.w1));
  CHECK(exact_eq(q.b1, p.b1));
  CHECK(exact_eq(q.w2, p.w2));
  CHECK(exact_eq(q.sel_w1, p.sel_w1));
  CHECK(exact_eq(q.sel_w2, p.sel_w2));
  for (int k = 0; k < p.num_proposals; ++k) {
    CHECK(exact_eq(q.head_w[k], p.head_w[k]));
    CHECK(exact_eq(q.head_b[k], p.head_b[k]));
  }
  CHECK(loaded_cfg.lambda == cfg.lambda);
  CHECK(loaded_cfg.eta_p == cfg.eta_p);
  CHECK(loaded_cfg.rng_seed == cfg.rng_seed);
  CHECK(loaded_cfg.scenario == cfg.scenario);
  CHECK(loaded_cfg.loss_kind == cfg.loss_kind);
}
