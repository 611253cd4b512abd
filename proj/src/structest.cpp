#include "modeset/structest.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace modeset {

double mode_prob(const std::vector<uint8_t>& alpha_row, const std::vector<double>& p) {
  if (alpha_row.size() != p.size())
    throw std::invalid_argument("mode_prob: length mismatch");
  double prob = 1.0;
  for (size_t i = 0; i < p.size(); ++i) prob *= alpha_row[i] ? p[i] : 1.0 - p[i];
  return prob;
}

std::vector<double> estimate_flip_probs(const std::vector<double>& w_hat,
                                        const std::vector<std::vector<uint8_t>>& alpha) {
  if (w_hat.size() != alpha.size())
    throw std::invalid_argument("estimate_flip_probs: weight/alpha count mismatch");
  if (alpha.empty()) throw std::invalid_argument("estimate_flip_probs: empty input");
  const size_t num_classes = alpha[0].size();
  for (const auto& row : alpha)
    if (row.size() != num_classes)
      throw std::invalid_argument("estimate_flip_probs: ragged alpha matrix");
  double wsum = 0.0;
  for (double w : w_hat) {
    if (!(w >= 0.0)) throw std::invalid_argument("estimate_flip_probs: negative weight");
    wsum += w;
  }
  if (wsum <= 0.0) throw std::invalid_argument("estimate_flip_probs: zero total weight");

  std::vector<double> p(num_classes, 0.0);
  for (size_t j = 0; j < alpha.size(); ++j)
    for (size_t i = 0; i < num_classes; ++i)
      if (alpha[j][i]) p[i] += w_hat[j];
  for (double& x : p) x /= wsum;
  return p;
}

int estimate_alphas(const BinaryMask& proposal, const BinaryMask& tmpl, double threshold) {
  if (proposal.height != tmpl.height || proposal.width != tmpl.width)
    throw std::invalid_argument("estimate_alphas: dimension mismatch");
  long area = tmpl.count();
  if (area == 0) throw std::invalid_argument("estimate_alphas: empty template");
  long overlap = 0;
  for (size_t i = 0; i < tmpl.values.size(); ++i)
    overlap += proposal.values[i] & tmpl.values[i];
  return static_cast<double>(overlap) / static_cast<double>(area) > threshold ? 1 : 0;
}

std::vector<std::vector<uint8_t>> estimate_alpha_matrix(const std::vector<BinaryMask>& proposals,
                                                        const std::vector<BinaryMask>& templates,
                                                        double threshold) {
  std::vector<std::vector<uint8_t>> alpha;
  alpha.reserve(proposals.size());
  for (const auto& prop : proposals) {
    std::vector<uint8_t> row;
    row.reserve(templates.size());
    for (const auto& t : templates)
      row.push_back(static_cast<uint8_t>(estimate_alphas(prop, t, threshold)));
    alpha.push_back(std::move(row));
  }
  return alpha;
}

double otsu_threshold(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("otsu_threshold: need >= 2 values");
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (!(hi > lo)) throw std::invalid_argument("otsu_threshold: all values equal");

  constexpr int kBins = 256;
  const double width = (hi - lo) / kBins;
  std::vector<long> hist(kBins, 0);
  for (double v : values) {
    int b = static_cast<int>((v - lo) / width);
    hist[std::clamp(b, 0, kBins - 1)] += 1;
  }
  // Bin centers stand in for the values inside each bin.
  std::vector<double> center(kBins);
  for (int b = 0; b < kBins; ++b) center[b] = lo + (b + 0.5) * width;

  const double total = static_cast<double>(values.size());
  double total_mean = 0.0;
  for (int b = 0; b < kBins; ++b) total_mean += hist[b] * center[b];
  total_mean /= total;

  double best_var = -1.0;
  int best_split = 0;
  double w0 = 0.0, sum0 = 0.0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += hist[b];
    sum0 += hist[b] * center[b];
    if (w0 == 0.0 || w0 == total) continue;
    double mu0 = sum0 / w0;
    double w1 = total - w0;
    double mu1 = (total * total_mean - sum0) / w1;
    double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best_var) {
      best_var = between;
      best_split = b;
    }
  }
  // Boundary between the last class-0 bin and the first class-1 bin.
  return lo + (best_split + 1) * width;
}

std::vector<BinaryMask> estimate_templates_pca(const std::vector<BinaryMask>& proposals,
                                               int num_classes,
                                               const TemplateThresholds& thresholds) {
  const int n = static_cast<int>(proposals.size());
  if (num_classes < 1) throw std::invalid_argument("estimate_templates_pca: need >= 1 class");
  if (n < num_classes + 1)
    throw std::invalid_argument("estimate_templates_pca: need at least C+1 proposals");
  if (!thresholds.use_otsu &&
      static_cast<int>(thresholds.manual.size()) != num_classes)
    throw std::invalid_argument("estimate_templates_pca: need one manual threshold per class");
  const int h = proposals[0].height, w = proposals[0].width;
  const int dim = h * w;
  for (const auto& p : proposals)
    if (p.height != h || p.width != w)
      throw std::invalid_argument("estimate_templates_pca: proposal dims differ");

  Eigen::MatrixXd data(n, dim);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) data(i, d) = proposals[i].values[d];
  Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;

  // Components via the small n x n Gram matrix: if G u = lambda u then
  // data' u / |data' u| is a principal direction.
  Eigen::MatrixXd gram = data * data.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("estimate_templates_pca: eigendecomposition failed");
  const auto& evals = eig.eigenvalues();  // ascending
  double lmax = evals[n - 1];
  if (lmax < 1e-12)
    throw std::runtime_error("estimate_templates_pca: degenerate covariance (identical proposals)");
  if (evals[n - num_classes] < 1e-12 * lmax)
    throw std::runtime_error("estimate_templates_pca: fewer than C directions of variation");

  Eigen::MatrixXd loadings(num_classes, dim);  // absolute loadings per component
  for (int c = 0; c < num_classes; ++c) {
    Eigen::VectorXd u = eig.eigenvectors().col(n - 1 - c);
    Eigen::VectorXd dir = data.transpose() * u;
    dir.normalize();
    loadings.row(c) = dir.cwiseAbs().transpose();
  }

  // Component signs are arbitrary and templates must be disjoint: each pixel
  // belongs to the component with the largest absolute loading only.
  std::vector<int> owner(dim, -1);
  for (int d = 0; d < dim; ++d) {
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (loadings(c, d) > loadings(best, d)) best = c;
    owner[d] = best;
  }

  std::vector<BinaryMask> templates;
  templates.reserve(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    double thr;
    if (thresholds.use_otsu) {
      std::vector<double> vals(loadings.row(c).data(), loadings.row(c).data() + dim);
      thr = otsu_threshold(vals);
    } else {
      thr = thresholds.manual[c];
    }
    BinaryMask t(h, w);
    for (int d = 0; d < dim; ++d)
      t.values[d] = (owner[d] == c && loadings(c, d) > thr) ? 1 : 0;
    templates.push_back(std::move(t));
  }
  return templates;
}

}  // namespace modeset
