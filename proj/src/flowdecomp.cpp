#include "modeset/flowdecomp.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace modeset {

NoiseSchedule NoiseSchedule::linear() {
  NoiseSchedule s;
  s.alpha = [](double t) { return t; };
  s.beta = [](double t) { return 1.0 - t; };
  s.alpha_dot = [](double) { return 1.0; };
  s.beta_dot = [](double) { return -1.0; };
  return s;
}

Eigen::VectorXd mask_to_vector(const BinaryMask& m) {
  Eigen::VectorXd v(m.values.size());
  for (size_t i = 0; i < m.values.size(); ++i) v[i] = m.values[i];
  return v;
}

BinaryMask vector_to_mask(const Eigen::VectorXd& v, int height, int width, double threshold) {
  BinaryMask m(height, width);
  for (int i = 0; i < v.size(); ++i) m.values[i] = v[i] >= threshold ? 1 : 0;
  return m;
}

Eigen::VectorXd conditional_velocity(const Eigen::VectorXd& y_t, double t,
                                     const Eigen::VectorXd& y, const NoiseSchedule& sched) {
  const double beta = sched.beta(t);
  if (!(beta > 0.0))
    throw std::invalid_argument("conditional_velocity: beta(t) = 0, field singular at t=" +
                                std::to_string(t));
  const double ratio = sched.beta_dot(t) / beta;
  return (sched.alpha_dot(t) - ratio * sched.alpha(t)) * y + ratio * y_t;
}

Eigen::VectorXd mixture_velocity(const Eigen::VectorXd& y_t, double t, const ModeSet& modes,
                                 const NoiseSchedule& sched) {
  const double beta = sched.beta(t);
  if (!(beta > 0.0))
    throw std::invalid_argument("mixture_velocity: beta(t) = 0, field singular");
  const double alpha = sched.alpha(t);
  const size_t k_count = modes.size();
  if (k_count == 0) throw std::invalid_argument("mixture_velocity: empty mode set");

  // log responsibilities: log w_k - ||y_t - alpha*y_k||^2 / (2 beta^2), the
  // shared Gaussian normalizer cancels in the softmax.
  std::vector<double> logr(k_count, -std::numeric_limits<double>::infinity());
  bool any = false;
  for (size_t k = 0; k < k_count; ++k) {
    if (modes.weights[k] <= 0.0) continue;
    Eigen::VectorXd diff = y_t - alpha * mask_to_vector(modes.masks[k]);
    logr[k] = std::log(modes.weights[k]) - diff.squaredNorm() / (2.0 * beta * beta);
    any = true;
  }
  if (!any) throw std::invalid_argument("mixture_velocity: all mode weights are zero");
  double max_log = *std::max_element(logr.begin(), logr.end());
  double norm = 0.0;
  for (double l : logr) norm += std::exp(l - max_log);

  Eigen::VectorXd v = Eigen::VectorXd::Zero(y_t.size());
  for (size_t k = 0; k < k_count; ++k) {
    double r = std::exp(logr[k] - max_log) / norm;
    if (r == 0.0) continue;
    v += r * conditional_velocity(y_t, t, mask_to_vector(modes.masks[k]), sched);
  }
  return v;
}

Eigen::VectorXd velocity_at_zero(const Eigen::VectorXd& y0, const ModeSet& modes) {
  if (modes.size() == 0) throw std::invalid_argument("velocity_at_zero: empty mode set");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(y0.size());
  for (size_t k = 0; k < modes.size(); ++k)
    mean += modes.weights[k] * mask_to_vector(modes.masks[k]);
  return mean - y0;
}

VelocityField oracle_field(const ModeSet& modes, const NoiseSchedule& sched) {
  return [modes, sched](const Eigen::VectorXd& y_t, double t) {
    if (t == 0.0) return velocity_at_zero(y_t, modes);
    return mixture_velocity(y_t, t, modes, sched);
  };
}

VelocityField noisy_field(VelocityField base, double sigma, uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [base = std::move(base), sigma, rng](const Eigen::VectorXd& y_t, double t) {
    Eigen::VectorXd v = base(y_t, t);
    for (int i = 0; i < v.size(); ++i) v[i] += sigma * rng->normal();
    return v;
  };
}

namespace {

// Euclidean projection onto the probability simplex (sort-based).
Eigen::VectorXd project_simplex(const Eigen::VectorXd& y) {
  const int k = static_cast<int>(y.size());
  std::vector<double> u(y.data(), y.data() + k);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, tau = 0.0;
  for (int i = 0; i < k; ++i) {
    cum += u[i];
    double candidate = (cum - 1.0) / (i + 1);
    if (u[i] - candidate > 0.0) tau = candidate;
  }
  Eigen::VectorXd out(k);
  for (int i = 0; i < k; ++i) out[i] = std::max(0.0, y[i] - tau);
  return out;
}

double active_set_condition(const Eigen::MatrixXd& gram, const Eigen::VectorXd& w) {
  std::vector<int> active;
  for (int i = 0; i < w.size(); ++i)
    if (w[i] > 1e-9) active.push_back(i);
  if (active.size() <= 1) return 1.0;
  Eigen::MatrixXd sub(active.size(), active.size());
  for (size_t a = 0; a < active.size(); ++a)
    for (size_t b = 0; b < active.size(); ++b) sub(a, b) = gram(active[a], active[b]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sub);
  double lmin = eig.eigenvalues().minCoeff();
  double lmax = eig.eigenvalues().maxCoeff();
  if (lmax <= 0.0) return std::numeric_limits<double>::infinity();
  if (lmin <= lmax * 1e-300) return std::numeric_limits<double>::infinity();
  return lmax / lmin;
}

}  // namespace

WeightEstimate estimate_weights(const VelocityField& field,
                                const std::vector<BinaryMask>& candidates, int n, Rng& rng) {
  if (candidates.empty()) throw std::invalid_argument("estimate_weights: no candidates");
  if (n < 1) throw std::invalid_argument("estimate_weights: need n >= 1 samples");
  const int k = static_cast<int>(candidates.size());
  const int dim = static_cast<int>(candidates[0].values.size());
  for (const auto& c : candidates)
    if (static_cast<int>(c.values.size()) != dim)
      throw std::invalid_argument("estimate_weights: candidate dims differ");

  Eigen::MatrixXd basis(dim, k);
  for (int j = 0; j < k; ++j) basis.col(j) = mask_to_vector(candidates[j]);

  // Accumulate normal equations over the noise samples in index order:
  //   objective(w) = w' G w - 2 c' w + const, normalized by n*dim.
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd lin = Eigen::VectorXd::Zero(k);
  double constant = 0.0;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd y0(dim);
    for (int d = 0; d < dim; ++d) y0[d] = rng.normal();
    Eigen::VectorXd v = field(y0, 0.0);
    if (static_cast<int>(v.size()) != dim)
      throw std::invalid_argument("estimate_weights: field output has wrong dimension");
    Eigen::MatrixXd a = basis.colwise() - y0;  // dim x k
    gram.noalias() += a.transpose() * a;
    lin.noalias() += a.transpose() * v;
    constant += v.squaredNorm();
  }
  const double scale = static_cast<double>(n) * dim;
  gram /= scale;
  lin /= scale;
  constant /= scale;

  auto objective = [&](const Eigen::VectorXd& w) {
    return w.dot(gram * w) - 2.0 * lin.dot(w) + constant;
  };

  Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / k);
  double fw = objective(w);
  Eigen::VectorXd grad = 2.0 * (gram * w - lin);

  // Equality-constrained solve on the current support. Lands exactly on the
  // face optimum, which the gradient iteration only approaches slowly when
  // the Gram matrix is ill-conditioned (near-duplicate candidates).
  auto face_polish = [&](const Eigen::VectorXd& win) -> Eigen::VectorXd {
    std::vector<int> support;
    for (int i = 0; i < k; ++i)
      if (win[i] > 1e-12) support.push_back(i);
    const int m = static_cast<int>(support.size());
    if (m == 0) return win;
    Eigen::MatrixXd kkt_mat = Eigen::MatrixXd::Zero(m + 1, m + 1);
    Eigen::VectorXd rhs(m + 1);
    for (int a = 0; a < m; ++a) {
      for (int b = 0; b < m; ++b) kkt_mat(a, b) = 2.0 * gram(support[a], support[b]);
      kkt_mat(a, m) = kkt_mat(m, a) = 1.0;
      rhs[a] = 2.0 * lin[support[a]];
    }
    rhs[m] = 1.0;
    Eigen::VectorXd sol = kkt_mat.completeOrthogonalDecomposition().solve(rhs);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(k);
    double total = 0.0;
    for (int a = 0; a < m; ++a) {
      out[support[a]] = std::max(0.0, sol[a]);
      total += out[support[a]];
    }
    if (total <= 0.0) return win;
    out /= total;
    return out;
  };

  // Barzilai-Borwein trial steps with a nonmonotone Armijo safeguard; the
  // initial step comes from a Gershgorin bound on the curvature.
  double lip = 2.0 * gram.cwiseAbs().rowwise().sum().maxCoeff();
  double step = lip > 0.0 ? 1.0 / lip : 1.0;
  const double kkt_tol = 1e-10;
  const int max_iters = 100000;
  std::vector<double> recent{fw};
  Eigen::VectorXd w_prev, grad_prev;
  bool converged = false;
  for (int iter = 0; iter < max_iters; ++iter) {
    double kkt = (w - project_simplex(w - grad)).lpNorm<Eigen::Infinity>();
    if (kkt <= kkt_tol) {
      converged = true;
      break;
    }
    if (iter % 25 == 10) {
      Eigen::VectorXd polished = face_polish(w);
      double fp = objective(polished);
      if (fp <= fw) {
        Eigen::VectorXd pgrad = 2.0 * (gram * polished - lin);
        double pkkt = (polished - project_simplex(polished - pgrad)).lpNorm<Eigen::Infinity>();
        if (fp < fw || pkkt < kkt) {
          w = polished;
          fw = fp;
          grad = pgrad;
          recent.push_back(fw);
          if (recent.size() > 8) recent.erase(recent.begin());
          if (pkkt <= kkt_tol) {
            converged = true;
            break;
          }
        }
      }
    }
    double s = step;
    if (iter > 0) {
      Eigen::VectorXd dw = w - w_prev;
      Eigen::VectorXd dg = grad - grad_prev;
      double curvature = dw.dot(dg);
      if (curvature > 0.0) s = std::clamp(dw.squaredNorm() / curvature, 1e-12, 1e12);
    }
    double f_ref = *std::max_element(recent.begin(), recent.end());
    Eigen::VectorXd cand;
    double fc = fw;
    for (int bt = 0; bt < 80; ++bt) {
      cand = project_simplex(w - s * grad);
      fc = objective(cand);
      if (fc <= f_ref + 1e-4 * grad.dot(cand - w)) break;
      if ((cand - w).lpNorm<Eigen::Infinity>() == 0.0) break;
      s *= 0.5;
    }
    w_prev = w;
    grad_prev = grad;
    w = cand;
    fw = fc;
    grad = 2.0 * (gram * w - lin);
    step = s;
    recent.push_back(fw);
    if (recent.size() > 8) recent.erase(recent.begin());
  }

  WeightEstimate est;
  est.weights.assign(w.data(), w.data() + k);
  est.residual = std::max(0.0, fw);
  est.n_samples = n;
  est.condition_number = active_set_condition(gram, w);
  if (!converged)
    throw SolverError("estimate_weights: no convergence after " + std::to_string(max_iters) +
                          " iterations, residual " + std::to_string(est.residual),
                      est);
  return est;
}

BinaryMask sample_ode_from(Eigen::VectorXd y0, const VelocityField& field,
                           const NoiseSchedule& /*sched*/, int height, int width, int steps) {
  if (steps < 1) throw std::invalid_argument("sample_ode: need steps >= 1");
  const double dt = 1.0 / steps;
  for (int s = 0; s < steps; ++s) {
    double t = static_cast<double>(s) * dt;
    y0 += dt * field(y0, t);
  }
  return vector_to_mask(y0, height, width);
}

BinaryMask sample_ode(const VelocityField& field, const NoiseSchedule& sched, int height,
                      int width, int steps, Rng& rng) {
  Eigen::VectorXd y0(static_cast<size_t>(height) * width);
  for (int i = 0; i < y0.size(); ++i) y0[i] = rng.normal();
  return sample_ode_from(std::move(y0), field, sched, height, width, steps);
}

}  // namespace modeset
