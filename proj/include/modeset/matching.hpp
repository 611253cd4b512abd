#pragma once
// Rectangular optimal-assignment solver and the mask distance functions used
// both for training-time matching and for evaluation-time matching.

#include <string>
#include <utility>
#include <vector>

#include "modeset/mask.hpp"

namespace modeset {

// Rows index ground-truth masks, columns index proposals; rows <= cols.
struct CostMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> entries;  // row-major, size rows*cols

  CostMatrix() = default;
  CostMatrix(int r, int c) : rows(r), cols(c), entries(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return entries[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return entries[static_cast<size_t>(r) * cols + c]; }
};

// assignment[i] = column matched to row i; indices are distinct.
struct PartialPermutation {
  std::vector<int> assignment;
};

enum class MaskLoss { OneMinusIou, Mse, Dice, DiceFocal };

MaskLoss mask_loss_from_string(const std::string& name);
std::string to_string(MaskLoss kind);

// Minimum-cost assignment of every row to a distinct column (rows <= cols).
// Among cost-optimal assignments the lexicographically smallest assignment
// vector is returned, so results are reproducible even under exact ties.
// The returned cost is sum_i c[i, assignment[i]] accumulated in row order.
std::pair<PartialPermutation, double> solve_assignment(const CostMatrix& c);

// Distance between a binary target and a soft prediction of the same size.
//   one_minus_iou : 1 - softIoU, softIoU = sum(t*p) / sum(t + p - t*p)
//   mse           : mean squared pixel error
//   dice          : 1 - 2*sum(t*p) / (sum t + sum p + 1e-6)
//   dice_focal    : 0.5*dice + 0.5*focal, focal with gamma=2 and no class prior
// All kinds are >= 0. For binary predictions one_minus_iou agrees with the
// hard IoU of the binarized masks, including the both-empty convention.
double mask_distance(MaskLoss kind, const BinaryMask& target, const SoftMask& pred);

// Per-pixel gradient of mask_distance with respect to the prediction.
// Differentiates exactly what mask_distance computes, clamps included.
std::vector<double> mask_distance_grad(MaskLoss kind, const BinaryMask& target,
                                       const SoftMask& pred);

// Matching of ground-truth masks to proposals under the given distance.
PartialPermutation match_modes(const std::vector<BinaryMask>& gt,
                               const ProposalSet& proposals, MaskLoss kind);

}  // namespace modeset
