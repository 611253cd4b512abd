#pragma once
// Synthetic ambiguous-segmentation datasets with known mode distributions:
// directional flood-fill data (distinct wedge modes, skewed priors,
// obstacle-induced duplicates) and class-flip data (product-structured mode
// families), plus JSON-lines persistence.

#include <string>
#include <vector>

#include "modeset/mask.hpp"
#include "modeset/rng.hpp"

namespace modeset {

struct DirectionalConfig {
  int height = 16;
  int width = 16;
  int num_directions = 8;
  std::vector<double> prior_weights;  // empty -> default_directional_prior
  double obstacle_density = 0.0;      // in [0,1)
  int num_items = 0;
  uint64_t rng_seed = 0;
};

struct ClassFlipConfig {
  int height = 16;
  int width = 16;
  int num_classes = 4;
  std::vector<double> flip_probs = {0.05, 0.25, 0.75, 0.95};
  int num_items = 0;
  uint64_t rng_seed = 0;
};

// Geometric-decay prior over directions, normalized, interpolating between
// the endpoints 0.004 and 0.502 of the default 8-direction setup.
std::vector<double> default_directional_prior(int num_directions);

// Items with 2-channel inputs (seed indicator, obstacle map). Mode k is the
// 90-degree wedge flood fill from the seed along direction k, clipped by
// obstacles and the border; directions blocked identically merge into one
// mode whose weight is the sum of the blocked directions' priors.
std::vector<DatasetItem> gen_directional(const DirectionalConfig& cfg);

// Build one directional item from an explicit obstacle map and seed point.
// Exposed so blocking scenarios can be constructed exactly in tests.
DatasetItem make_directional_item(const BinaryMask& obstacles, int seed_r, int seed_c,
                                  const std::vector<double>& prior_weights);

// Items with (C+1)-channel one-hot inputs (background + one channel per
// class template). All 2^C flip combinations are enumerated; weights follow
// the per-class Bernoulli product rule; duplicates (empty templates) merge.
std::vector<DatasetItem> gen_classflip(const ClassFlipConfig& cfg);

// Build a class-flip item directly from templates. Exposed so degenerate
// template sets (empty regions) can be constructed in tests.
DatasetItem make_classflip_item(const std::vector<BinaryMask>& templates,
                                const std::vector<double>& flip_probs);

// Draw one mode according to the item's weights.
BinaryMask sample_single_label(const DatasetItem& item, Rng& rng);

// JSON-lines persistence, one item per line, masks as run-length strings.
// Lossless round trip; loading validates all invariants and reports the
// offending line on failure.
void save_dataset(const std::vector<DatasetItem>& items, const std::string& path);
std::vector<DatasetItem> load_dataset(const std::string& path);

// Run-length encoding of a row-major binary mask: comma-separated run
// lengths of alternating value, starting with the run of zeros (possibly
// empty, written as 0). "0,2,3" is 1,1,0,0,0.
std::string rle_encode(const BinaryMask& m);
BinaryMask rle_decode(const std::string& rle, int height, int width);

}  // namespace modeset
