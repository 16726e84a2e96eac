#pragma once

#include "igs/dynamics.hpp"
#include "igs/linalg.hpp"
#include "igs/policies.hpp"
#include "igs/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace igs {

// Psi = (a, a0, a1, b0, b1, zeta, gamma) of an incrementally gain stable system:
//   sum_{t=0}^{T} min{|D_t|^{a ^ a0}, |D_t|^{a v a1}}
//     <= zeta |xi1 - xi2|^a + gamma sum_{t=0}^{T-1} max{|u_t|^b0, |u_t|^b1}
// with D_t the gap between the input-driven and the autonomous trajectory.
struct IgsParams {
  double a = 1.0;
  double a0 = 1.0;
  double a1 = 1.0;
  double b0 = 1.0;
  double b1 = 1.0;
  double zeta = 1.0;
  double gamma = 1.0;

  // Exponents >= 1, a0 <= a1, b0 <= b1, zeta and gamma positive.
  void validate() const;
  // Restricted form used by the learning theory: a = a0, b0 = b1,
  // zeta >= 1, gamma >= 1, a >= b0.
  bool satisfies_restricted_form() const;

  double a_lo() const { return std::min(a, a0); }  // a ^ a0
  double a_hi() const { return std::max(a, a1); }  // a v a1

  bool operator==(const IgsParams&) const = default;
};

// Incremental Lyapunov certificate V(x, y) with sandwich
// alpha_lo |x-y|^a <= V(x,y) <= alpha_hi |x-y|^a and decrement
//   V(f(x,u), f(y,0)) - V(x,y) <= -frak_a min{|x-y|^a0, |x-y|^a1} + frak_b max{|u|^b0, |u|^b1}.
struct IncLyapunov {
  std::function<double(const Vector&, const Vector&)> value;
  // Gradient of V in its first argument; optional, used by penalty training.
  std::function<Vector(const Vector&, const Vector&)> gradient_x;
  double a = 1.0;
  double alpha_lo = 1.0;
  double alpha_hi = 1.0;
  double frak_a = 1.0;
  double frak_b = 1.0;
  double a0 = 1.0;
  double a1 = 1.0;
  double b0 = 1.0;
  double b1 = 1.0;
  // Quadratic certificates keep their matrix: V(x,y) = (x-y)' X (x-y).
  std::optional<Matrix> quadratic_form;

  // Decrement residual LHS - RHS at (x, y, u) for the given system.
  double decrement_residual(const DynamicsSystem& system, const Vector& x, const Vector& y,
                            const Vector& u) const;
};

struct CertificationReport {
  std::size_t samples = 0;
  std::size_t violations = 0;
  double worst_residual = -std::numeric_limits<double>::infinity();
  std::vector<double> witness;
  double tolerance = 1e-9;

  nlohmann::json to_json() const;
};

// Default tolerance for "the inequality holds".
inline constexpr double kHoldsTolerance = 1e-9;

// Sampled checks draw samples in fixed-size chunks; chunk c uses the stream
// derive_seed(seed, c), so results do not depend on the worker count.
inline constexpr std::size_t kSampleChunk = 4096;

// ---------------------------------------------------------------------------
// Trajectory quantities

// sum_{t=0}^{T} |t1.states[t] - t2.states[t]|_2
double discrepancy_sum(const Trajectory& t1, const Trajectory& t2);

enum class LossMode { kModelBased, kModelFree };

// sum_{t=0}^{T-1} |M(x_t)(pi1(x_t) - pi2(x_t))|_2 along roll's states, with
// M = g (model based) or the identity (model free).
double imitation_loss(const DynamicsSystem& system, const Trajectory& roll, const Policy& pi1,
                      const Policy& pi2, LossMode mode = LossMode::kModelBased);

// ---------------------------------------------------------------------------
// Closed-form constants and bounds

// min or max over i of |x|^{e_i}; all exponents must be >= 1.
enum class MinMax { kMin, kMax };
double min_max_power(double x, std::span<const double> exponents, MinMax mode);

IgsParams igs_from_lyapunov(const IncLyapunov& cert);
IgsParams contraction_igs_params(double rho, double mu_lo, double mu_hi, double input_lipschitz);
IgsParams p_system_igs_params(double p, double eta);

// Certificate V(x,y) = |x-y| of the scalar p-system with frak_a = eta/2^{2+p}
// and frak_b = eta.
IncLyapunov p_system_lyapunov(double p, double eta);

// ((L(1+2B))^T - 1) / (L(1+2B) - 1) * loss; requires L(1+2B) > 1.
double gronwall_bound(double lipschitz, double bound, std::size_t horizon, double loss);

// 4 (gamma v 1)^{1/(a^a0)} T^{1 - 1/(a v a1)} max{loss^{b0/(a v a1)}, loss^{b1/(a^a0)}}
double disc_bound_inputs(const IgsParams& psi, std::size_t horizon, double loss);

struct IcBound {
  double per_step;
  double summed;
};
IcBound disc_bound_ics(const IgsParams& psi, std::size_t horizon, double ic_gap);

// Solves A'XA - X + Q = 0 with Q = (1 - gamma^2) P* + eps I and packages
// V(x,y) = (x-y)'X(x-y) with all exponents 2 and sandwich constants
// lambda_min(X), lambda_max(X). Splitting the cross term with Young's
// inequality (weight k) gives the decrement constants
//   frak_a = lambda_min(Q)/2,  frak_b = (1 + 1/k) lambda_max(X),
//   k = lambda_min(Q) / (2 (lambda_max(X) - lambda_min(Q))).
// Requires rho(A_cl) < gamma < 1 and eps > 0.
IncLyapunov build_robust_lqr_certificate(const Matrix& closed_loop, const Matrix& p_star,
                                         double gamma, double eps);

// ---------------------------------------------------------------------------
// Sampled falsification checks

struct IgsCase {
  Vector xi1;
  Vector xi2;
  std::vector<Vector> inputs;  // horizon = inputs.size()
};
using IgsCaseSampler = std::function<IgsCase(Rng&)>;

// Residual LHS - RHS of the IGS inequality for one case. Divergent rollouts
// yield +infinity.
double igs_residual(const IgsParams& psi, const DynamicsSystem& system, const IgsCase& c);

// Exponents must be valid; zeta and gamma are taken as given.
CertificationReport check_igs_on_trajectories(const IgsParams& psi, const DynamicsSystem& system,
                                              const IgsCaseSampler& sampler, std::size_t samples,
                                              std::uint64_t seed,
                                              double tolerance = kHoldsTolerance);

struct DecrementSample {
  Vector x;
  Vector y;
  Vector u;
};
using DecrementSampler = std::function<DecrementSample(Rng&)>;

CertificationReport check_lyapunov_decrement(const IncLyapunov& cert, const DynamicsSystem& system,
                                             const DecrementSampler& sampler, std::size_t samples,
                                             std::uint64_t seed,
                                             double tolerance = kHoldsTolerance);

using PointSampler = std::function<Vector(Rng&)>;

// J(x)' M(f(x,0)) J(x) <= rho M(x) with J from central differences (step 1e-6),
// tested by Cholesky of rho M(x) - J'M(f)J + slack I. The residual is the
// largest eigenvalue of J'M(f)J - rho M(x).
CertificationReport check_contraction_metric(const DynamicsSystem& system, const MetricFn& metric,
                                             double rho, const PointSampler& sampler,
                                             std::size_t samples, std::uint64_t seed,
                                             double slack = 1e-8);

// Same check over an explicit list of points.
CertificationReport check_contraction_metric(const DynamicsSystem& system, const MetricFn& metric,
                                             double rho, const std::vector<Vector>& points,
                                             double slack = 1e-8);

Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                                  double step = 1e-6);

// Scalar p-system inequalities, as residuals (<= 0 when the property holds):
//   2^{-(2+p)} min{|x-y|, |x-y|^{1+p}} - sgn(x-y)[h(x) - h(y)]
double p_system_sign_inequality_residual(double x, double y, double p);
//   -sgn(x-y) * ((x-y) - eta [h(x) - h(y)])   for x != y
double p_system_sign_preservation_residual(double x, double y, double p, double eta);

// Generic sampled scalar check used for the two residuals above.
using ScalarResidual = std::function<double(Rng&, std::vector<double>& witness)>;
CertificationReport check_sampled(const ScalarResidual& residual, std::size_t samples,
                                  std::uint64_t seed, double tolerance = kHoldsTolerance);

}  // namespace igs
