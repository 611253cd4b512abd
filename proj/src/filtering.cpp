#include "modeset/filtering.hpp"

#include <algorithm>
#include <stdexcept>

namespace modeset {

FilterResult filter_proposals(const ProposalSet& ps, const FilterConfig& cfg) {
  ps.validate();
  if (!(cfg.score_threshold > 0.0 && cfg.score_threshold < 1.0))
    throw std::invalid_argument("filter_proposals: score_threshold outside (0,1)");
  if (!(cfg.dedup_iou > 0.0 && cfg.dedup_iou <= 1.0))
    throw std::invalid_argument("filter_proposals: dedup_iou outside (0,1]");

  std::vector<int> survivors;
  for (size_t k = 0; k < ps.size(); ++k) {
    if (!cfg.use_scores || ps.scores[k] > cfg.score_threshold)
      survivors.push_back(static_cast<int>(k));
  }

  FilterResult out;
  if (!cfg.use_dedup) {
    for (int k : survivors) {
      out.kept_indices.push_back(k);
      out.masks.push_back(binarize(ps.proposals[k]));
    }
    return out;
  }

  std::stable_sort(survivors.begin(), survivors.end(),
                   [&](int a, int b) { return ps.scores[a] > ps.scores[b]; });
  for (int k : survivors) {
    BinaryMask m = binarize(ps.proposals[k]);
    bool duplicate = false;
    for (const auto& kept : out.masks) {
      if (iou(kept, m) >= cfg.dedup_iou) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) {
      out.kept_indices.push_back(k);
      out.masks.push_back(std::move(m));
    }
  }
  return out;
}

}  // namespace modeset
