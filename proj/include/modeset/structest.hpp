#pragma once
// Structure-aware probability estimation for class-flip mode families:
// per-class Bernoulli flip probabilities from mode-weight estimates, on/off
// decisions from template overlap, and template recovery from proposals via
// PCA with Otsu or manual thresholding.

#include <vector>

#include "modeset/mask.hpp"

namespace modeset {

struct FlipModel {
  std::vector<BinaryMask> templates;  // pairwise disjoint
  std::vector<double> flip_probs;     // in [0,1]
};

// Probability of one flip combination: prod_i p_i^a_i (1-p_i)^(1-a_i).
double mode_prob(const std::vector<uint8_t>& alpha_row, const std::vector<double>& p);

// Per-class flip probabilities minimizing the weighted Bernoulli negative
// log-likelihood sum_j w_j sum_i [a_ij log p_i + (1-a_ij) log(1-p_i)]. The
// objective separates per class; the minimizer is the weighted marginal
// p_i = sum_j w_j a_ij, returned in closed form.
std::vector<double> estimate_flip_probs(const std::vector<double>& w_hat,
                                        const std::vector<std::vector<uint8_t>>& alpha);

// 1 iff the proposal covers more than `threshold` of the template's pixels:
// sum(proposal * template) / sum(template) > threshold.
int estimate_alphas(const BinaryMask& proposal, const BinaryMask& tmpl,
                    double threshold = 0.5);

// Full alpha matrix for a list of proposals against a list of templates.
std::vector<std::vector<uint8_t>> estimate_alpha_matrix(const std::vector<BinaryMask>& proposals,
                                                        const std::vector<BinaryMask>& templates,
                                                        double threshold = 0.5);

struct TemplateThresholds {
  bool use_otsu = true;
  std::vector<double> manual;  // one per component when use_otsu is false
};

// Recover class templates from a set of proposals: mean-center the proposal
// vectors, take the top `num_classes` principal components (eigendecomposition
// of the proposals x proposals Gram matrix), assign each pixel to the
// component with the largest absolute loading, and threshold the absolute
// loadings (Otsu or manual). Outputs are pairwise disjoint.
std::vector<BinaryMask> estimate_templates_pca(const std::vector<BinaryMask>& proposals,
                                               int num_classes,
                                               const TemplateThresholds& thresholds = {});

// Threshold maximizing between-class variance over a 256-bin histogram of
// the value range. Requires at least two distinct values.
double otsu_threshold(const std::vector<double>& values);

}  // namespace modeset
