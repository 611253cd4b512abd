#pragma once
// The deterministic mode-proposal network: a small dense trunk with K
// independent proposal heads and a selection head, the fully-labeled
// set-prediction loss, the single-label positive-unlabeled loss, exact
// reverse-mode gradients for both, and an Adam training loop.

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "modeset/mask.hpp"
#include "modeset/matching.hpp"
#include "modeset/rng.hpp"

namespace modeset {

enum class Scenario { Full, Single };
Scenario scenario_from_string(const std::string& name);
std::string to_string(Scenario s);

struct TrainConfig {
  Scenario scenario = Scenario::Full;
  MaskLoss loss_kind = MaskLoss::Mse;
  double lambda = 1e-2;        // selection loss weight
  double eta_p = 0.5;          // prior probability of a proposal being positive
  double learning_rate = 1e-3;
  int epochs = 100;
  int batch_size = 32;
  int num_proposals = 16;      // K
  uint64_t rng_seed = 0;
  double val_fraction = 0.2;
  // Architecture sizes; tests shrink these to keep finite differences cheap.
  int hidden1 = 256;
  int hidden2 = 256;
  int sel_hidden = 64;
};

// Dense trunk (input -> hidden1 -> hidden2, ReLU), K proposal heads
// (hidden2 -> H*W, sigmoid) and a selection head (hidden2 -> sel_hidden ->
// K, ReLU then sigmoid). Weight matrices are (out x in).
struct ModelParams {
  int in_channels = 0, height = 0, width = 0;
  int num_proposals = 0;
  int hidden1 = 0, hidden2 = 0, sel_hidden = 0;

  Eigen::MatrixXd w1, w2;
  Eigen::VectorXd b1, b2;
  std::vector<Eigen::MatrixXd> head_w;
  std::vector<Eigen::VectorXd> head_b;
  Eigen::MatrixXd sel_w1, sel_w2;
  Eigen::VectorXd sel_b1, sel_b2;

  int input_dim() const { return in_channels * height * width; }
  int mask_dim() const { return height * width; }
};

// Gradient container with the same tensor shapes as ModelParams.
struct ParamGrads {
  Eigen::MatrixXd w1, w2;
  Eigen::VectorXd b1, b2;
  std::vector<Eigen::MatrixXd> head_w;
  std::vector<Eigen::VectorXd> head_b;
  Eigen::MatrixXd sel_w1, sel_w2;
  Eigen::VectorXd sel_b1, sel_b2;

  static ParamGrads zeros_like(const ModelParams& p);
  void scale(double s);
};

// Xavier-uniform trunk and selection head; proposal heads share one random
// init modulated per head by elementwise factors from U(0.975, 1.025) to
// break the symmetry between heads.
ModelParams init_params(int in_channels, int height, int width, const TrainConfig& cfg,
                        Rng& rng);

// One deterministic forward pass; x is the flattened C*H*W input.
ProposalSet forward(const ModelParams& params, const std::vector<double>& x);

struct LossBreakdown {
  double total = 0.0;
  double mask_part = 0.0;
  double select_part = 0.0;
};

// Set-prediction loss for one fully-labeled item: Hungarian-matched mask
// loss plus lambda times the BCE selection loss with matched proposals as
// positives. Matching uses cfg.loss_kind as the cost and is treated as a
// constant under differentiation.
LossBreakdown loss_fully(const ModelParams& params, const DatasetItem& item,
                         const TrainConfig& cfg);

struct LabeledExample {
  const DatasetItem* item = nullptr;
  BinaryMask label;
};

// Non-negative PU loss over a batch of single-label examples. Per item the
// best-matching proposal is the positive; the selection part is
//   eta_p * L_P(1) + max{0, L_U - eta_p * L_P(0)}.
LossBreakdown loss_single_pu(const ModelParams& params,
                             const std::vector<LabeledExample>& batch,
                             const TrainConfig& cfg);

// A differentiable loss bound to its data: one fully-labeled item or one
// single-label batch. `value` evaluates it; `gradient` differentiates it.
struct LossClosure {
  Scenario scenario = Scenario::Full;
  const DatasetItem* item = nullptr;
  std::vector<LabeledExample> batch;
  TrainConfig cfg;

  LossBreakdown value(const ModelParams& params) const;
};

// Exact reverse-mode derivatives of the composed loss (clamps and ReLU
// kinks differentiate as the computed function does; the matching is a
// constant).
ParamGrads gradient(const ModelParams& params, const LossClosure& closure);

struct EpochStats {
  int epoch = 0;
  double train_total = 0.0, train_mask = 0.0, train_select = 0.0;
  double val_loss = 0.0;
  double val_hm_iou_star = 0.0;
};

struct TrainResult {
  ModelParams params;  // best checkpoint by validation loss
  TrainConfig config;
  std::vector<EpochStats> history;
  int best_epoch = 0;  // 0 means the initialization was never improved on
  double best_val_loss = 0.0;
};

// Deterministic shuffle split; val gets floor(n * val_fraction) items.
std::pair<std::vector<int>, std::vector<int>> train_val_split(int n_items,
                                                              double val_fraction,
                                                              uint64_t seed);

// Minibatch Adam on the scenario's loss. Single-label items are resampled
// from their mode distribution every epoch. Fully deterministic given
// cfg.rng_seed; throws on non-finite loss.
TrainResult train(const std::vector<DatasetItem>& dataset, const TrainConfig& cfg);

// Versioned binary checkpoint of all parameter tensors plus the config;
// round-trip is bit exact.
void save_checkpoint(const ModelParams& params, const TrainConfig& cfg,
                     const std::string& path);
std::pair<ModelParams, TrainConfig> load_checkpoint(const std::string& path);

}  // namespace modeset
