#pragma once
// Flow-matching machinery for discrete mode mixtures: noise schedules, the
// analytic conditional and mixture velocity fields, a demonstration Euler
// sampler, and the simplex-constrained least-squares estimator that recovers
// mode probabilities from velocity evaluations at t=0.

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <vector>

#include "modeset/mask.hpp"
#include "modeset/rng.hpp"

namespace modeset {

// Interpolation schedule y_t = alpha(t)*y + beta(t)*y0 with alpha(0)=0,
// beta(0)=1, alpha(1)=1, beta(1)=0 and boundary derivatives alpha_dot(0)=1,
// beta_dot(0)=-1, which the t=0 simplification relies on.
struct NoiseSchedule {
  std::function<double(double)> alpha, beta, alpha_dot, beta_dot;

  // alpha = t, beta = 1 - t. The simplest admissible schedule.
  static NoiseSchedule linear();
};

// Velocity evaluation contract: (y_t, t) -> velocity, with any conditioning
// context captured by the closure.
using VelocityField = std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)>;

Eigen::VectorXd mask_to_vector(const BinaryMask& m);
BinaryMask vector_to_mask(const Eigen::VectorXd& v, int height, int width,
                          double threshold = 0.5);

// Velocity of the conditional path toward a fixed target y:
//   (alpha_dot - beta_dot/beta * alpha) * y + beta_dot/beta * y_t
// Defined for t with beta(t) > 0.
Eigen::VectorXd conditional_velocity(const Eigen::VectorXd& y_t, double t,
                                     const Eigen::VectorXd& y, const NoiseSchedule& sched);

// Mixture of mode-conditional velocities with Gaussian posterior
// responsibilities, computed in log space:
//   r_k = softmax_k[ log w_k + log N(y_t; alpha_t y_k, beta_t^2 I) ]
Eigen::VectorXd mixture_velocity(const Eigen::VectorXd& y_t, double t, const ModeSet& modes,
                                 const NoiseSchedule& sched);

// Closed form of the mixture velocity at t=0: sum_k w_k (y_k - y0).
Eigen::VectorXd velocity_at_zero(const Eigen::VectorXd& y0, const ModeSet& modes);

// The analytic field induced by a ModeSet under the given schedule.
VelocityField oracle_field(const ModeSet& modes, const NoiseSchedule& sched);

// Wrap a field with additive N(0, sigma^2 I) noise per evaluation, to study
// how estimation degrades under an imperfect field. Evaluations consume the
// wrapped generator in call order, so results depend on evaluation order.
VelocityField noisy_field(VelocityField base, double sigma, uint64_t seed);

struct WeightEstimate {
  std::vector<double> weights;   // on the simplex
  double residual = 0.0;         // final objective value (mean squared residual)
  int n_samples = 0;
  double condition_number = 1.0; // of the Gram matrix restricted to the active set
};

// Thrown when the simplex solver hits its iteration cap; carries the best
// iterate so callers can inspect how far it got.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& msg, WeightEstimate best)
      : std::runtime_error(msg), best_estimate(std::move(best)) {}
  WeightEstimate best_estimate;
};

// Estimate mode probabilities from n field evaluations at t=0:
//   min_w sum_i || field(y0_i, 0) - sum_k w_k (y_k - y0_i) ||^2
//   s.t. w >= 0, sum w = 1
// solved on normal equations by projected gradient (Barzilai-Borwein trial
// steps, Armijo backtracking, sort-based simplex projection) with periodic
// exact solves on the active face, to a KKT residual of 1e-10 (or 1e5
// iterations, which raises SolverError). The objective is normalized by the
// total number of scalar equations so tolerances are scale-independent.
WeightEstimate estimate_weights(const VelocityField& field,
                                const std::vector<BinaryMask>& candidates, int n, Rng& rng);

// Euler integration of dy = v dt from t=0 up to t = 1 - 1/steps, starting at
// the given y0, then thresholded. Demonstration-only sampler.
BinaryMask sample_ode_from(Eigen::VectorXd y0, const VelocityField& field,
                           const NoiseSchedule& sched, int height, int width, int steps);

// Same, starting from y0 ~ N(0, I).
BinaryMask sample_ode(const VelocityField& field, const NoiseSchedule& sched, int height,
                      int width, int steps, Rng& rng);

}  // namespace modeset
