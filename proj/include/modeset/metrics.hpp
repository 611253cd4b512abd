#pragma once
// Evaluation metrics: Hungarian-matched IoU in three duplicate conventions,
// pooled selection F1, Brier score / Brier Skill Score, and the alignment of
// estimated candidate weights to ground-truth modes.

#include <optional>
#include <string>
#include <vector>

#include "modeset/mask.hpp"

namespace modeset {

// Mean IoU over unique ground-truth modes after optimal matching to distinct
// proposals (cost 1 - IoU). Ground truths that cannot be matched (more gt
// than proposals, or no proposals at all) score 0.
double hm_iou_star(const ModeSet& gt, const std::vector<BinaryMask>& proposals);

// Same, but the ground-truth list may contain duplicates and each entry
// needs its own distinct proposal.
double hm_iou(const std::vector<BinaryMask>& gt_with_duplicates,
              const std::vector<BinaryMask>& proposals);

// Unique ground truths matched to distinct proposals; the mean IoU is
// weighted by each mask's multiplicity, so duplicates share one proposal.
double hm_iou_multi(const ModeSet& gt, const std::vector<BinaryMask>& proposals);

// Micro-averaged F1 of the selection scores over all proposals of all items.
// Per item, matching unique ground truths to proposals (cost 1 - IoU on the
// binarized proposals) labels matched proposals positive; the prediction is
// score > 0.5. An empty pool (no positives, no predictions) scores 1.
double selection_f1(
    const std::vector<std::pair<const ModeSet*, const ProposalSet*>>& items);

// Brier Skill Score against the uniform forecast over the same support:
//   1 - BS(w_hat, w_true) / (BS(uniform, w_true) + 1e-8)
// with BS the mean squared componentwise error. 1 is perfect; <= 0 is no
// better than uniform.
double bss(const std::vector<double>& w_hat, const std::vector<double>& w_true);

// Variant for independent Bernoulli probability vectors, where the baseline
// forecast is 0.5 per component instead of 1/K.
double bernoulli_bss(const std::vector<double>& p_hat, const std::vector<double>& p_true);

struct AlignedWeights {
  std::vector<double> aligned;  // one weight per gt mode, 0 when unmatched
  double leaked_mass = 0.0;     // total weight of unmatched candidates
};

// Match gt modes to candidates by IoU cost; each gt mode receives the weight
// of its matched candidate. The aligned vector is NOT renormalized: leaked
// mass is diagnostic signal for mass spread across near-duplicates.
AlignedWeights align_weights(const std::vector<BinaryMask>& candidates,
                             const std::vector<double>& w_hat, const ModeSet& gt);

// One evaluation row per filter-flag combination (Selection F1, coverage,
// kept-proposal count).
struct EvalRow {
  std::string scenario;
  bool use_scores = false;
  bool use_dedup = false;
  double selection_f1 = 0.0;
  double hm_iou = 0.0;
  double hm_iou_star = 0.0;
  double hm_iou_multi = 0.0;
  double mean_kept_proposals = 0.0;
};

struct EvalItemRecord {
  int item = 0;
  double hm_iou = 0.0;
  double hm_iou_star = 0.0;
  double hm_iou_multi = 0.0;
  int kept = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::optional<double> bss;  // filled by the decomposition stage when run
  std::vector<std::vector<EvalItemRecord>> per_item;  // parallel to rows

  std::string to_json() const;
  std::string to_csv() const;
};

}  // namespace modeset
