#include "modeset/mask.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace modeset {

namespace {

void check_same_dims(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("mask dimension mismatch: " +
                                std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width));
  }
}

// FNV-1a over the mask bytes, used only to bucket candidates for merging.
struct MaskHash {
  size_t operator()(const BinaryMask* m) const {
    uint64_t h = 1469598103934665603ULL;
    for (uint8_t v : m->values) {
      h ^= v;
      h *= 1099511628211ULL;
    }
    return static_cast<size_t>(h);
  }
};

struct MaskEq {
  bool operator()(const BinaryMask* a, const BinaryMask* b) const { return *a == *b; }
};

}  // namespace

void ModeSet::validate() const {
  if (masks.empty()) throw std::invalid_argument("ModeSet: empty support");
  if (masks.size() != weights.size())
    throw std::invalid_argument("ModeSet: mask/weight length mismatch");
  if (!multiplicities.empty() && multiplicities.size() != masks.size())
    throw std::invalid_argument("ModeSet: multiplicity length mismatch");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("ModeSet: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("ModeSet: weights sum to " + std::to_string(sum));
  for (size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].height != masks[0].height || masks[i].width != masks[0].width)
      throw std::invalid_argument("ModeSet: inconsistent mask dimensions");
    for (size_t j = i + 1; j < masks.size(); ++j) {
      if (masks[i] == masks[j])
        throw std::invalid_argument("ModeSet: duplicate masks at " + std::to_string(i) +
                                    "," + std::to_string(j));
    }
  }
}

void ProposalSet::validate() const {
  if (proposals.size() != scores.size())
    throw std::invalid_argument("ProposalSet: proposal/score length mismatch");
  for (double d : scores) {
    if (!(d >= 0.0 && d <= 1.0))
      throw std::invalid_argument("ProposalSet: score outside [0,1]");
  }
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  check_same_dims(a, b);
  long inter = 0, uni = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    inter += a.values[i] & b.values[i];
    uni += a.values[i] | b.values[i];
  }
  if (uni == 0) return 1.0;  // both empty: identical by convention
  return static_cast<double>(inter) / static_cast<double>(uni);
}

ModeSet merge_duplicates(const std::vector<BinaryMask>& masks,
                         const std::vector<double>& weights) {
  if (masks.size() != weights.size())
    throw std::invalid_argument("merge_duplicates: length mismatch");
  if (masks.empty()) throw std::invalid_argument("merge_duplicates: empty input");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("merge_duplicates: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("merge_duplicates: weights sum to " + std::to_string(sum));

  ModeSet out;
  out.masks.reserve(masks.size());  // keys below point into out.masks
  std::unordered_map<const BinaryMask*, size_t, MaskHash, MaskEq> seen;
  for (size_t i = 0; i < masks.size(); ++i) {
    auto it = seen.find(&masks[i]);
    if (it == seen.end()) {
      out.masks.push_back(masks[i]);
      out.weights.push_back(weights[i]);
      out.multiplicities.push_back(1);
      seen.emplace(&out.masks.back(), out.masks.size() - 1);
    } else {
      out.weights[it->second] += weights[i];
      out.multiplicities[it->second] += 1;
    }
  }
  return out;
}

BinaryMask binarize(const SoftMask& m, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("binarize: threshold must be in (0,1)");
  BinaryMask out(m.height, m.width);
  for (size_t i = 0; i < m.values.size(); ++i)
    out.values[i] = m.values[i] >= threshold ? 1 : 0;
  return out;
}

}  // namespace modeset
