#pragma once
// Reduce a proposal set to a candidate mode set via selection-score
// thresholding and greedy IoU de-duplication.

#include <vector>

#include "modeset/mask.hpp"

namespace modeset {

struct FilterConfig {
  double score_threshold = 0.5;  // keep proposals with score strictly above
  double dedup_iou = 0.95;       // suppress masks at IoU >= this
  bool use_scores = true;
  bool use_dedup = true;
};

struct FilterResult {
  std::vector<int> kept_indices;  // into the original proposal set
  std::vector<BinaryMask> masks;  // binarized survivors, same order
};

// Step 1 (if use_scores): keep indices with score > score_threshold.
// Step 2: binarize survivors at 0.5.
// Step 3 (if use_dedup): in descending-score order (ties by lower index),
// greedily keep a mask only if its IoU with every kept mask is < dedup_iou.
// With dedup on, output order is score order; otherwise index order.
// May return an empty set, signalling no confident mode.
FilterResult filter_proposals(const ProposalSet& ps, const FilterConfig& cfg);

}  // namespace modeset
