#include "modeset/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace modeset {

namespace {

constexpr double kDiceEps = 1e-6;
constexpr double kLogClamp = 1e-7;

// Kuhn-Munkres with potentials on a square matrix, O(n^3). Fills row_to_col
// and the final dual potentials, which are dual-feasible
// (u[i] + v[j] <= a[i][j]) and complementary-slack on matched edges.
// Arrays u, v are 1-indexed like the textbook formulation.
void km_square(const std::vector<double>& a, int n, std::vector<int>& row_to_col,
               std::vector<double>& u, std::vector<double>& v) {
  const double inf = std::numeric_limits<double>::infinity();
  u.assign(n + 1, 0.0);
  v.assign(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = a[static_cast<size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
}

// Optimal cost of assigning the given rows to distinct columns from the given
// pool. Rectangular input is padded square with a constant dummy cost, which
// leaves the assignment of real rows unaffected.
double subproblem_cost(const CostMatrix& c, const std::vector<int>& rows,
                       const std::vector<int>& cols) {
  if (rows.empty()) return 0.0;
  int n = static_cast<int>(cols.size());
  double maxe = 0.0;
  for (int r : rows)
    for (int j : cols) maxe = std::max(maxe, c.at(r, j));
  const double pad = maxe * static_cast<double>(rows.size()) + 1.0;
  std::vector<double> a(static_cast<size_t>(n) * n, pad);
  for (size_t ri = 0; ri < rows.size(); ++ri)
    for (size_t ci = 0; ci < cols.size(); ++ci)
      a[ri * n + ci] = c.at(rows[ri], cols[ci]);
  std::vector<int> row_to_col;
  std::vector<double> u, v;
  km_square(a, n, row_to_col, u, v);
  double cost = 0.0;
  for (size_t ri = 0; ri < rows.size(); ++ri) cost += c.at(rows[ri], cols[row_to_col[ri]]);
  return cost;
}

}  // namespace

MaskLoss mask_loss_from_string(const std::string& name) {
  if (name == "one_minus_iou") return MaskLoss::OneMinusIou;
  if (name == "mse") return MaskLoss::Mse;
  if (name == "dice") return MaskLoss::Dice;
  if (name == "dice_focal") return MaskLoss::DiceFocal;
  throw std::invalid_argument("unknown mask loss kind: " + name);
}

std::string to_string(MaskLoss kind) {
  switch (kind) {
    case MaskLoss::OneMinusIou: return "one_minus_iou";
    case MaskLoss::Mse: return "mse";
    case MaskLoss::Dice: return "dice";
    case MaskLoss::DiceFocal: return "dice_focal";
  }
  return "?";
}

std::pair<PartialPermutation, double> solve_assignment(const CostMatrix& c) {
  if (c.rows > c.cols)
    throw std::invalid_argument("solve_assignment: rows must be <= cols");
  double maxabs = 0.0;
  for (double e : c.entries) {
    if (!std::isfinite(e))
      throw std::invalid_argument("solve_assignment: non-finite cost entry");
    maxabs = std::max(maxabs, std::abs(e));
  }
  PartialPermutation result;
  if (c.rows == 0) return {result, 0.0};

  // Solve the padded square problem once; keep the duals.
  const int n = c.cols;
  const double pad = maxabs * static_cast<double>(c.rows) + 1.0;
  std::vector<double> a(static_cast<size_t>(n) * n, pad);
  for (int i = 0; i < c.rows; ++i)
    for (int j = 0; j < c.cols; ++j) a[static_cast<size_t>(i) * n + j] = c.at(i, j);
  std::vector<int> r2c;
  std::vector<double> u, v;
  km_square(a, n, r2c, u, v);
  double optimal = 0.0;
  for (int i = 0; i < c.rows; ++i) optimal += c.at(i, r2c[i]);
  const double tol = 1e-9 * std::max(1.0, std::abs(optimal));
  const double tol_red = 1e-9 * (1.0 + maxabs);

  // Lexicographic tie-break: fix rows in order, taking the smallest column
  // that still admits an optimal completion. By complementary slackness only
  // zero-reduced-cost edges can appear in any optimal assignment, so columns
  // with positive reduced cost are skipped outright; with a single admissible
  // candidate no subproblem needs solving at all.
  result.assignment.assign(c.rows, -1);
  std::vector<int> free_cols(c.cols);
  for (int j = 0; j < c.cols; ++j) free_cols[j] = j;
  double prefix = 0.0;
  for (int i = 0; i < c.rows; ++i) {
    std::vector<int> tail_rows;
    for (int r = i + 1; r < c.rows; ++r) tail_rows.push_back(r);
    std::vector<int> admissible;
    for (int j : free_cols) {
      if (c.at(i, j) - u[i + 1] - v[j + 1] <= tol_red) admissible.push_back(j);
    }
    int chosen = -1;
    if (admissible.size() == 1) {
      chosen = admissible[0];
    } else {
      for (int j : admissible) {
        std::vector<int> rest_cols;
        for (int q : free_cols)
          if (q != j) rest_cols.push_back(q);
        double total = prefix + c.at(i, j) + subproblem_cost(c, tail_rows, rest_cols);
        if (total <= optimal + tol) {
          chosen = j;
          break;
        }
      }
    }
    if (chosen < 0) {
      // Numerical corner: fall back to an exhaustive scan of this row.
      double best_total = std::numeric_limits<double>::infinity();
      for (int j : free_cols) {
        std::vector<int> rest_cols;
        for (int q : free_cols)
          if (q != j) rest_cols.push_back(q);
        double total = prefix + c.at(i, j) + subproblem_cost(c, tail_rows, rest_cols);
        if (total < best_total) {
          best_total = total;
          chosen = j;
        }
      }
    }
    result.assignment[i] = chosen;
    prefix += c.at(i, chosen);
    free_cols.erase(std::find(free_cols.begin(), free_cols.end(), chosen));
  }

  double cost = 0.0;
  for (int i = 0; i < c.rows; ++i) cost += c.at(i, result.assignment[i]);
  return {result, cost};
}

double mask_distance(MaskLoss kind, const BinaryMask& target, const SoftMask& pred) {
  if (target.height != pred.height || target.width != pred.width)
    throw std::invalid_argument("mask_distance: dimension mismatch");
  const size_t n = target.values.size();
  switch (kind) {
    case MaskLoss::OneMinusIou: {
      double inter = 0.0, uni = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double t = target.values[i], p = pred.values[i];
        inter += t * p;
        uni += t + p - t * p;
      }
      if (uni <= 0.0) return 0.0;  // both empty
      return 1.0 - inter / uni;
    }
    case MaskLoss::Mse: {
      double s = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double d = pred.values[i] - target.values[i];
        s += d * d;
      }
      return s / static_cast<double>(n);
    }
    case MaskLoss::Dice: {
      double inter = 0.0, tsum = 0.0, psum = 0.0;
      for (size_t i = 0; i < n; ++i) {
        tsum += target.values[i];
        psum += pred.values[i];
        inter += target.values[i] * pred.values[i];
      }
      return 1.0 - 2.0 * inter / (tsum + psum + kDiceEps);
    }
    case MaskLoss::DiceFocal: {
      double dice = mask_distance(MaskLoss::Dice, target, pred);
      double focal = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double pt = target.values[i] ? pred.values[i] : 1.0 - pred.values[i];
        pt = std::clamp(pt, kLogClamp, 1.0 - kLogClamp);
        double q = 1.0 - pt;
        focal += -q * q * std::log(pt);
      }
      focal /= static_cast<double>(n);
      return 0.5 * dice + 0.5 * focal;
    }
  }
  throw std::logic_error("unreachable");
}

std::vector<double> mask_distance_grad(MaskLoss kind, const BinaryMask& target,
                                       const SoftMask& pred) {
  if (target.height != pred.height || target.width != pred.width)
    throw std::invalid_argument("mask_distance_grad: dimension mismatch");
  const size_t n = target.values.size();
  std::vector<double> g(n, 0.0);
  switch (kind) {
    case MaskLoss::OneMinusIou: {
      double inter = 0.0, uni = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double t = target.values[i], p = pred.values[i];
        inter += t * p;
        uni += t + p - t * p;
      }
      if (uni <= 0.0) return g;
      for (size_t i = 0; i < n; ++i) {
        double t = target.values[i];
        g[i] = -(t * uni - inter * (1.0 - t)) / (uni * uni);
      }
      return g;
    }
    case MaskLoss::Mse: {
      for (size_t i = 0; i < n; ++i)
        g[i] = 2.0 * (pred.values[i] - target.values[i]) / static_cast<double>(n);
      return g;
    }
    case MaskLoss::Dice: {
      double inter = 0.0, tsum = 0.0, psum = 0.0;
      for (size_t i = 0; i < n; ++i) {
        tsum += target.values[i];
        psum += pred.values[i];
        inter += target.values[i] * pred.values[i];
      }
      double denom = tsum + psum + kDiceEps;
      for (size_t i = 0; i < n; ++i) {
        double t = target.values[i];
        g[i] = -2.0 * (t * denom - inter) / (denom * denom);
      }
      return g;
    }
    case MaskLoss::DiceFocal: {
      std::vector<double> gd = mask_distance_grad(MaskLoss::Dice, target, pred);
      for (size_t i = 0; i < n; ++i) {
        double t = target.values[i];
        double s = t ? 1.0 : -1.0;
        double pt = t ? pred.values[i] : 1.0 - pred.values[i];
        double gf = 0.0;
        if (pt > kLogClamp && pt < 1.0 - kLogClamp) {  // clamp blocks the gradient
          double q = 1.0 - pt;
          gf = (2.0 * q * std::log(pt) - q * q / pt) * s;
        }
        g[i] = 0.5 * gd[i] + 0.5 * gf / static_cast<double>(n);
      }
      return g;
    }
  }
  throw std::logic_error("unreachable");
}

PartialPermutation match_modes(const std::vector<BinaryMask>& gt,
                               const ProposalSet& proposals, MaskLoss kind) {
  if (gt.size() > proposals.size())
    throw std::invalid_argument("match_modes: more ground-truth masks than proposals");
  CostMatrix c(static_cast<int>(gt.size()), static_cast<int>(proposals.size()));
  for (int i = 0; i < c.rows; ++i)
    for (int k = 0; k < c.cols; ++k)
      c.at(i, k) = mask_distance(kind, gt[i], proposals.proposals[k]);
  return solve_assignment(c).first;
}

}  // namespace modeset
