#pragma once
// Mask and distribution value types shared by all modules. Everything here is
// an immutable value after construction; all operations are pure.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace modeset {

// Binary segmentation mask, row-major grid of {0,1}.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> values;  // size height*width, each 0 or 1

  BinaryMask() = default;
  BinaryMask(int h, int w, uint8_t fill = 0)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  uint8_t at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
  void set(int r, int c, uint8_t v) { values[static_cast<size_t>(r) * width + c] = v; }
  size_t size() const { return values.size(); }

  // Number of on-pixels.
  long count() const {
    long n = 0;
    for (uint8_t v : values) n += v;
    return n;
  }

  bool operator==(const BinaryMask& o) const {
    return height == o.height && width == o.width && values == o.values;
  }
};

// Continuous mask with per-pixel values in [0,1]; network outputs before
// binarization.
struct SoftMask {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  SoftMask() = default;
  SoftMask(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  double at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
  size_t size() const { return values.size(); }
};

// Discrete distribution over unique masks: the support points and their
// simplex weights. `multiplicities` records how many pre-merge entries
// collapsed into each mask (1 when built without merging); it feeds the
// duplicate-aware coverage metrics.
struct ModeSet {
  std::vector<BinaryMask> masks;
  std::vector<double> weights;
  std::vector<int> multiplicities;

  size_t size() const { return masks.size(); }

  // Throws std::invalid_argument when an invariant is violated:
  // weights >= 0 and sum to 1 within 1e-9, all dims equal, no duplicates.
  void validate() const;
};

// Class-flip structure attached to items generated by the class-flip
// generator: disjoint templates, per-class Bernoulli probabilities and the
// per-mode on/off decisions.
struct FlipStructure {
  std::vector<BinaryMask> templates;               // one per class
  std::vector<double> flip_probs;                  // p_i in [0,1]
  std::vector<std::vector<uint8_t>> flip_matrix;   // [mode][class] in {0,1}
};

// One dataset entry: the input image (channels x height x width, row-major)
// and the ground-truth mode distribution.
struct DatasetItem {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> input;  // size channels*height*width
  ModeSet modes;
  std::optional<FlipStructure> flip;

  size_t input_size() const { return static_cast<size_t>(channels) * height * width; }
};

// Output of one forward pass: K proposal masks plus a selection score per
// proposal.
struct ProposalSet {
  std::vector<SoftMask> proposals;
  std::vector<double> scores;

  size_t size() const { return proposals.size(); }
  void validate() const;
};

// Intersection-over-union of two binary masks of identical dimensions.
// Both empty -> 1 (identical); empty vs nonempty -> 0.
double iou(const BinaryMask& a, const BinaryMask& b);

// Collapse identical masks, summing their weights and counting group sizes.
// Order of first occurrence is preserved. Weights must be >= 0 and sum to 1.
ModeSet merge_duplicates(const std::vector<BinaryMask>& masks,
                         const std::vector<double>& weights);

// Threshold a soft mask; value >= threshold maps to 1. threshold in (0,1).
BinaryMask binarize(const SoftMask& m, double threshold = 0.5);

}  // namespace modeset
