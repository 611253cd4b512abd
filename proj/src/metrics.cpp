#include "modeset/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "modeset/matching.hpp"

namespace modeset {

namespace {

// Matching that maximizes the (multiplicity-weighted) total IoU between
// ground truths and distinct proposals. Returns gt index -> proposal index
// (-1 when unmatched). Handles both orientations of the rectangle; entries
// are written as C - m*iou with a constant C so they stay non-negative and
// the fixed number of matched pairs makes minimization equivalent to
// maximizing the weighted IoU.
std::vector<int> match_max_iou(const std::vector<BinaryMask>& gt,
                               const std::vector<const BinaryMask*>& proposals,
                               const std::vector<double>& gt_weight) {
  const int ng = static_cast<int>(gt.size());
  const int np = static_cast<int>(proposals.size());
  std::vector<int> gt_to_prop(ng, -1);
  if (ng == 0 || np == 0) return gt_to_prop;

  double cmax = 1.0;
  for (double m : gt_weight) cmax = std::max(cmax, m);

  if (ng <= np) {
    CostMatrix c(ng, np);
    for (int i = 0; i < ng; ++i)
      for (int j = 0; j < np; ++j)
        c.at(i, j) = cmax - gt_weight[i] * iou(gt[i], *proposals[j]);
    auto [pi, cost] = solve_assignment(c);
    (void)cost;
    gt_to_prop = pi.assignment;
  } else {
    CostMatrix c(np, ng);
    for (int j = 0; j < np; ++j)
      for (int i = 0; i < ng; ++i)
        c.at(j, i) = cmax - gt_weight[i] * iou(gt[i], *proposals[j]);
    auto [pi, cost] = solve_assignment(c);
    (void)cost;
    for (int j = 0; j < np; ++j) gt_to_prop[pi.assignment[j]] = j;
  }
  return gt_to_prop;
}

std::vector<const BinaryMask*> as_pointers(const std::vector<BinaryMask>& masks) {
  std::vector<const BinaryMask*> out;
  out.reserve(masks.size());
  for (const auto& m : masks) out.push_back(&m);
  return out;
}

double weighted_hm(const std::vector<BinaryMask>& gt, const std::vector<double>& weight,
                   const std::vector<BinaryMask>& proposals) {
  if (gt.empty()) throw std::invalid_argument("hm_iou: empty ground truth");
  double total_weight = 0.0;
  for (double w : weight) total_weight += w;
  if (proposals.empty()) return 0.0;
  auto gt_to_prop = match_max_iou(gt, as_pointers(proposals), weight);
  double score = 0.0;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt_to_prop[i] >= 0) score += weight[i] * iou(gt[i], proposals[gt_to_prop[i]]);
  }
  return score / total_weight;
}

}  // namespace

double hm_iou_star(const ModeSet& gt, const std::vector<BinaryMask>& proposals) {
  std::vector<double> ones(gt.size(), 1.0);
  return weighted_hm(gt.masks, ones, proposals);
}

double hm_iou(const std::vector<BinaryMask>& gt_with_duplicates,
              const std::vector<BinaryMask>& proposals) {
  std::vector<double> ones(gt_with_duplicates.size(), 1.0);
  return weighted_hm(gt_with_duplicates, ones, proposals);
}

double hm_iou_multi(const ModeSet& gt, const std::vector<BinaryMask>& proposals) {
  std::vector<double> mult(gt.size(), 1.0);
  for (size_t i = 0; i < gt.multiplicities.size(); ++i)
    mult[i] = static_cast<double>(std::max(1, gt.multiplicities[i]));
  return weighted_hm(gt.masks, mult, proposals);
}

double selection_f1(
    const std::vector<std::pair<const ModeSet*, const ProposalSet*>>& items) {
  long tp = 0, fp = 0, fn = 0;
  for (const auto& [gt, ps] : items) {
    std::vector<BinaryMask> bin;
    bin.reserve(ps->size());
    for (const auto& p : ps->proposals) bin.push_back(binarize(p));
    std::vector<double> ones(gt->size(), 1.0);
    auto gt_to_prop = match_max_iou(gt->masks, as_pointers(bin), ones);
    std::vector<char> positive(ps->size(), 0);
    for (int j : gt_to_prop)
      if (j >= 0) positive[j] = 1;
    for (size_t k = 0; k < ps->size(); ++k) {
      bool predicted = ps->scores[k] > 0.5;
      if (positive[k] && predicted) ++tp;
      else if (!positive[k] && predicted) ++fp;
      else if (positive[k] && !predicted) ++fn;
    }
  }
  if (2 * tp + fp + fn == 0) return 1.0;
  return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

namespace {

double brier(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace

double bss(const std::vector<double>& w_hat, const std::vector<double>& w_true) {
  if (w_hat.size() != w_true.size() || w_hat.empty())
    throw std::invalid_argument("bss: length mismatch or empty");
  std::vector<double> uniform(w_true.size(), 1.0 / static_cast<double>(w_true.size()));
  return 1.0 - brier(w_hat, w_true) / (brier(uniform, w_true) + 1e-8);
}

double bernoulli_bss(const std::vector<double>& p_hat, const std::vector<double>& p_true) {
  if (p_hat.size() != p_true.size() || p_hat.empty())
    throw std::invalid_argument("bernoulli_bss: length mismatch or empty");
  std::vector<double> half(p_true.size(), 0.5);
  return 1.0 - brier(p_hat, p_true) / (brier(half, p_true) + 1e-8);
}

AlignedWeights align_weights(const std::vector<BinaryMask>& candidates,
                             const std::vector<double>& w_hat, const ModeSet& gt) {
  if (candidates.size() != w_hat.size())
    throw std::invalid_argument("align_weights: candidate/weight length mismatch");
  AlignedWeights out;
  out.aligned.assign(gt.size(), 0.0);
  std::vector<double> ones(gt.size(), 1.0);
  auto gt_to_cand = match_max_iou(gt.masks, as_pointers(candidates), ones);
  std::vector<char> used(candidates.size(), 0);
  for (size_t i = 0; i < gt.size(); ++i) {
    int j = gt_to_cand[i];
    if (j >= 0) {
      out.aligned[i] = w_hat[j];
      used[j] = 1;
    }
  }
  for (size_t j = 0; j < candidates.size(); ++j)
    if (!used[j]) out.leaked_mass += w_hat[j];
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  nlohmann::json rows_json = nlohmann::json::array();
  for (size_t r = 0; r < rows.size(); ++r) {
    const EvalRow& row = rows[r];
    nlohmann::json jr;
    jr["scenario"] = row.scenario;
    jr["use_scores"] = row.use_scores;
    jr["use_dedup"] = row.use_dedup;
    jr["selection_f1"] = row.selection_f1;
    jr["hm_iou"] = row.hm_iou;
    jr["hm_iou_star"] = row.hm_iou_star;
    jr["hm_iou_multi"] = row.hm_iou_multi;
    jr["mean_kept_proposals"] = row.mean_kept_proposals;
    if (r < per_item.size()) {
      nlohmann::json items = nlohmann::json::array();
      for (const auto& rec : per_item[r]) {
        nlohmann::json ji;
        ji["item"] = rec.item;
        ji["hm_iou"] = rec.hm_iou;
        ji["hm_iou_star"] = rec.hm_iou_star;
        ji["hm_iou_multi"] = rec.hm_iou_multi;
        ji["kept"] = rec.kept;
        items.push_back(std::move(ji));
      }
      jr["per_item"] = std::move(items);
    }
    rows_json.push_back(std::move(jr));
  }
  j["rows"] = std::move(rows_json);
  if (bss) j["bss"] = *bss;
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::string out =
      "scenario,use_scores,use_dedup,selection_f1,hm_iou_star,hm_iou,hm_iou_multi,"
      "mean_kept_proposals\n";
  char buf[512];
  for (const EvalRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  row.scenario.c_str(), row.use_scores ? 1 : 0, row.use_dedup ? 1 : 0,
                  row.selection_f1, row.hm_iou_star, row.hm_iou, row.hm_iou_multi,
                  row.mean_kept_proposals);
    out += buf;
  }
  return out;
}

}  // namespace modeset
