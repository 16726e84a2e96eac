#include "igs/stability.hpp"

#include "igs/errors.hpp"
#include "igs/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace igs {

namespace {

double sgn(double v) { return (v > 0.0) - (v < 0.0); }

// |x|^lo and |x|^hi reduced to the two-exponent form.
double min_pow(double x, double lo, double hi) {
  return std::min(std::pow(x, lo), std::pow(x, hi));
}
double max_pow(double x, double lo, double hi) {
  return std::max(std::pow(x, lo), std::pow(x, hi));
}

void merge(CertificationReport& into, const CertificationReport& chunk) {
  into.samples += chunk.samples;
  into.violations += chunk.violations;
  if (chunk.worst_residual > into.worst_residual) {
    into.worst_residual = chunk.worst_residual;
    into.witness = chunk.witness;
  }
}

void record(CertificationReport& report, double residual, std::vector<double>&& witness) {
  ++report.samples;
  if (std::isnan(residual)) residual = std::numeric_limits<double>::infinity();
  if (residual > report.tolerance) ++report.violations;
  if (residual > report.worst_residual) {
    report.worst_residual = residual;
    report.witness = std::move(witness);
  }
}

std::vector<double> concat(std::initializer_list<const Vector*> parts) {
  std::vector<double> out;
  for (const Vector* p : parts) out.insert(out.end(), p->data(), p->data() + p->size());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void IgsParams::validate() const {
  for (double e : {a, a0, a1, b0, b1})
    if (!(e >= 1.0)) throw PreconditionError("IGS exponents must be >= 1");
  if (!(a0 <= a1)) throw PreconditionError("IGS parameters require a0 <= a1");
  if (!(b0 <= b1)) throw PreconditionError("IGS parameters require b0 <= b1");
  if (!(zeta > 0.0) || !(gamma > 0.0) || !std::isfinite(zeta) || !std::isfinite(gamma))
    throw PreconditionError("IGS gains zeta and gamma must be positive and finite");
}

bool IgsParams::satisfies_restricted_form() const {
  return a == a0 && b0 == b1 && zeta >= 1.0 && gamma >= 1.0 && a >= b0;
}

double IncLyapunov::decrement_residual(const DynamicsSystem& system, const Vector& x,
                                       const Vector& y, const Vector& u) const {
  const Vector fx = system.step(x, u);
  const Vector fy = system.step(y, Vector::Zero(system.input_dim()));
  const double lhs = value(fx, fy) - value(x, y);
  const double gap = (x - y).norm();
  const double un = u.norm();
  const double rhs = -frak_a * min_pow(gap, a0, a1) + frak_b * max_pow(un, b0, b1);
  return lhs - rhs;
}

nlohmann::json CertificationReport::to_json() const {
  nlohmann::json j;
  j["samples"] = samples;
  j["violations"] = violations;
  // JSON has no infinities; an empty report has no worst residual.
  if (std::isfinite(worst_residual))
    j["worst_residual"] = worst_residual;
  else
    j["worst_residual"] = nullptr;
  j["witness"] = witness;
  return j;
}

// ---------------------------------------------------------------------------

double discrepancy_sum(const Trajectory& t1, const Trajectory& t2) {
  if (t1.states.size() != t2.states.size())
    throw DimensionError("discrepancy_sum: trajectories have different horizons");
  double sum = 0.0;
  for (std::size_t t = 0; t < t1.states.size(); ++t) {
    if (t1.states[t].size() != t2.states[t].size())
      throw DimensionError("discrepancy_sum: state dimensions differ");
    sum += (t1.states[t] - t2.states[t]).norm();
  }
  return sum;
}

double imitation_loss(const DynamicsSystem& system, const Trajectory& roll, const Policy& pi1,
                      const Policy& pi2, LossMode mode) {
  if (pi1.in_dim() != system.state_dim() || pi2.in_dim() != system.state_dim() ||
      pi1.out_dim() != system.input_dim() || pi2.out_dim() != system.input_dim())
    throw DimensionError("imitation_loss: policy dimensions do not match the system");
  const std::size_t horizon = roll.horizon();
  if (horizon < 1) throw PreconditionError("imitation_loss: horizon must be at least 1");
  double sum = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    const Vector& x = roll.states[t];
    const Vector diff = pi1.evaluate(x) - pi2.evaluate(x);
    sum += mode == LossMode::kModelBased ? system.apply_gain(x, diff).norm() : diff.norm();
  }
  return sum;
}

// ---------------------------------------------------------------------------

double min_max_power(double x, std::span<const double> exponents, MinMax mode) {
  if (exponents.empty()) throw PreconditionError("min_max_power: empty exponent list");
  for (double e : exponents)
    if (!(e >= 1.0)) throw PreconditionError("min_max_power: exponents must be >= 1");
  const auto [lo, hi] = std::minmax_element(exponents.begin(), exponents.end());
  const double ax = std::abs(x);
  return mode == MinMax::kMin ? min_pow(ax, *lo, *hi) : max_pow(ax, *lo, *hi);
}

IgsParams igs_from_lyapunov(const IncLyapunov& cert) {
  const double denom = std::min(cert.alpha_lo, cert.frak_a);
  if (!(denom > 0.0))
    throw PreconditionError("igs_from_lyapunov: min(alpha_lo, frak_a) must be positive");
  IgsParams psi{cert.a, cert.a0, cert.a1, cert.b0, cert.b1, cert.alpha_hi / denom,
                cert.frak_b / denom};
  return psi;
}

IgsParams contraction_igs_params(double rho, double mu_lo, double mu_hi, double input_lipschitz) {
  if (!(rho > 0.0 && rho < 1.0))
    throw PreconditionError("contraction_igs_params: rho must lie in (0, 1)");
  if (!(mu_lo > 0.0 && mu_lo <= mu_hi))
    throw PreconditionError("contraction_igs_params: need 0 < mu_lo <= mu_hi");
  if (!(input_lipschitz > 0.0))
    throw PreconditionError("contraction_igs_params: L_u must be positive");
  const double factor = std::sqrt(mu_hi / mu_lo) / (1.0 - std::sqrt(rho));
  return IgsParams{1.0, 1.0, 1.0, 1.0, 1.0, factor, input_lipschitz * factor};
}

IgsParams p_system_igs_params(double p, double eta) {
  const double limit = p_system_eta_limit(p);
  if (!(p > 0.0)) throw PreconditionError("p_system_igs_params: p must be positive");
  if (!(eta > 0.0 && eta < limit)) {
    std::ostringstream os;
    os << "p_system_igs_params: the constants hold as long as 0 < eta < 4/(5+p) = " << limit
       << ", got eta = " << eta;
    throw PreconditionError(os.str());
  }
  const double c = std::pow(2.0, 2.0 + p);
  return IgsParams{1.0, 1.0, 1.0 + p, 1.0, 1.0, c / eta, c};
}

IncLyapunov p_system_lyapunov(double p, double eta) {
  if (!(eta >= 0.0 && eta < p_system_eta_limit(p)))
    throw PreconditionError("p_system_lyapunov: requires 0 <= eta < 4/(5+p)");
  IncLyapunov cert;
  cert.value = [](const Vector& x, const Vector& y) { return (x - y).norm(); };
  cert.gradient_x = [](const Vector& x, const Vector& y) {
    const Vector d = x - y;
    const double n = d.norm();
    return n > 0.0 ? Vector(d / n) : Vector(Vector::Zero(d.size()));
  };
  cert.a = 1.0;
  cert.alpha_lo = 1.0;
  cert.alpha_hi = 1.0;
  cert.frak_a = eta / std::pow(2.0, 2.0 + p);
  cert.frak_b = eta;
  cert.a0 = 1.0;
  cert.a1 = 1.0 + p;
  cert.b0 = 1.0;
  cert.b1 = 1.0;
  return cert;
}

double gronwall_bound(double lipschitz, double bound, std::size_t horizon, double loss) {
  const double r = lipschitz * (1.0 + 2.0 * bound);
  if (!(r > 1.0))
    throw PreconditionError("gronwall_bound: requires L(1+2B) > 1, got " + std::to_string(r));
  if (loss == 0.0) return 0.0;
  return (std::pow(r, static_cast<double>(horizon)) - 1.0) / (r - 1.0) * loss;
}

double disc_bound_inputs(const IgsParams& psi, std::size_t horizon, double loss) {
  if (!(loss >= 0.0)) throw PreconditionError("disc_bound_inputs: loss must be nonnegative");
  const double lo = psi.a_lo();
  const double hi = psi.a_hi();
  const double T = static_cast<double>(horizon);
  return 4.0 * std::pow(std::max(psi.gamma, 1.0), 1.0 / lo) * std::pow(T, 1.0 - 1.0 / hi) *
         std::max(std::pow(loss, psi.b0 / hi), std::pow(loss, psi.b1 / lo));
}

IcBound disc_bound_ics(const IgsParams& psi, std::size_t horizon, double ic_gap) {
  if (!(ic_gap >= 0.0)) throw PreconditionError("disc_bound_ics: gap must be nonnegative");
  const double lo = psi.a_lo();
  const double hi = psi.a_hi();
  const double T = static_cast<double>(horizon);
  const double scale = std::pow(std::max(psi.zeta, 1.0), 1.0 / lo);
  const double gap_term = std::max(std::pow(ic_gap, psi.a / lo), std::pow(ic_gap, psi.a / hi));
  return IcBound{scale * gap_term, 2.0 * scale * std::pow(T, 1.0 - 1.0 / hi) * gap_term};
}

IncLyapunov build_robust_lqr_certificate(const Matrix& closed_loop, const Matrix& p_star,
                                         double gamma, double eps) {
  linalg::require_square(closed_loop, "A_cl");
  linalg::require_square(p_star, "P*");
  if (p_star.rows() != closed_loop.rows())
    throw DimensionError("robust certificate: P* must match A_cl");
  const double rho = linalg::spectral_radius(closed_loop);
  if (!(rho < 1.0))
    throw PreconditionError("robust certificate: closed loop is unstable (spectral radius " +
                            std::to_string(rho) + ")");
  if (!(gamma > rho && gamma < 1.0))
    throw PreconditionError("robust certificate: gamma must lie in (rho(A_cl), 1)");
  if (!(eps > 0.0)) throw PreconditionError("robust certificate: eps must be positive");
  if (!linalg::is_positive_definite(p_star))
    throw PreconditionError("robust certificate: P* must be positive definite");
  const Eigen::Index n = closed_loop.rows();
  const Matrix Q = (1.0 - gamma * gamma) * p_star + eps * Matrix::Identity(n, n);
  Matrix X = linalg::solve_discrete_lyapunov(closed_loop, Q);
  X = 0.5 * (X + X.transpose());
  const double q_min = linalg::min_eigenvalue_symmetric(Q);
  const double x_min = linalg::min_eigenvalue_symmetric(X);
  const double x_max = linalg::max_eigenvalue_symmetric(X);

  IncLyapunov cert;
  cert.quadratic_form = X;
  cert.value = [X](const Vector& x, const Vector& y) {
    const Vector d = x - y;
    return d.dot(X * d);
  };
  cert.gradient_x = [X](const Vector& x, const Vector& y) { return Vector(2.0 * X * (x - y)); };
  cert.a = cert.a0 = cert.a1 = cert.b0 = cert.b1 = 2.0;
  cert.alpha_lo = x_min;
  cert.alpha_hi = x_max;
  const double spread = x_max - q_min;
  if (spread > 1e-12 * x_max) {
    const double k = q_min / (2.0 * spread);
    cert.frak_a = 0.5 * q_min;
    cert.frak_b = (1.0 + 1.0 / k) * x_max;
  } else {
    // X = Q up to rounding: the image of the closed loop contributes nothing.
    cert.frak_a = q_min;
    cert.frak_b = x_max;
  }
  return cert;
}

// ---------------------------------------------------------------------------

CertificationReport check_sampled(const ScalarResidual& residual, std::size_t samples,
                                  std::uint64_t seed, double tolerance) {
  const std::size_t chunks = (samples + kSampleChunk - 1) / kSampleChunk;
  std::vector<CertificationReport> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    Rng rng = make_rng(derive_seed(seed, c));
    CertificationReport& rep = partial[c];
    rep.tolerance = tolerance;
    const std::size_t lo = c * kSampleChunk;
    const std::size_t hi = std::min(samples, lo + kSampleChunk);
    for (std::size_t i = lo; i < hi; ++i) {
      std::vector<double> witness;
      const double r = residual(rng, witness);
      record(rep, r, std::move(witness));
    }
  });
  CertificationReport report;
  report.tolerance = tolerance;
  for (const auto& p : partial) merge(report, p);
  return report;
}

double igs_residual(const IgsParams& psi, const DynamicsSystem& system, const IgsCase& c) {
  const std::size_t horizon = c.inputs.size();
  const double lo = psi.a_lo();
  const double hi = psi.a_hi();
  const Vector zero_u = Vector::Zero(system.input_dim());
  Vector x = c.xi1;
  Vector y = c.xi2;
  if (x.size() != system.state_dim() || y.size() != system.state_dim())
    throw DimensionError("igs_residual: initial conditions do not match the system");
  double lhs = 0.0;
  double input_sum = 0.0;
  for (std::size_t t = 0;; ++t) {
    const double gap = (x - y).norm();
    if (!std::isfinite(gap)) return std::numeric_limits<double>::infinity();
    lhs += min_pow(gap, lo, hi);
    if (t == horizon) break;
    const Vector& u = c.inputs[t];
    input_sum += max_pow(u.norm(), psi.b0, psi.b1);
    x = system.step(x, u);
    y = system.step(y, zero_u);
  }
  const double rhs = psi.zeta * std::pow((c.xi1 - c.xi2).norm(), psi.a) + psi.gamma * input_sum;
  return lhs - rhs;
}

CertificationReport check_igs_on_trajectories(const IgsParams& psi, const DynamicsSystem& system,
                                              const IgsCaseSampler& sampler, std::size_t samples,
                                              std::uint64_t seed, double tolerance) {
  // Only the exponents are checked: a claimed Psi with out-of-range gains is
  // still a claim that can be falsified.
  IgsParams shape = psi;
  shape.zeta = shape.gamma = 1.0;
  shape.validate();
  return check_sampled(
      [&](Rng& rng, std::vector<double>& witness) {
        const IgsCase c = sampler(rng);
        const double r = igs_residual(psi, system, c);
        witness = concat({&c.xi1, &c.xi2});
        witness.push_back(static_cast<double>(c.inputs.size()));
        return r;
      },
      samples, seed, tolerance);
}

CertificationReport check_lyapunov_decrement(const IncLyapunov& cert, const DynamicsSystem& system,
                                             const DecrementSampler& sampler, std::size_t samples,
                                             std::uint64_t seed, double tolerance) {
  if (!cert.value) throw PreconditionError("check_lyapunov_decrement: certificate has no V");
  if (!(cert.a0 <= cert.a1 && cert.b0 <= cert.b1))
    throw PreconditionError("check_lyapunov_decrement: need a0 <= a1 and b0 <= b1");
  return check_sampled(
      [&](Rng& rng, std::vector<double>& witness) {
        const DecrementSample s = sampler(rng);
        witness = concat({&s.x, &s.y, &s.u});
        return cert.decrement_residual(system, s.x, s.y, s.u);
      },
      samples, seed, tolerance);
}

Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                                  double step) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  Vector xp = x;
  Vector xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp[j] = x[j] + step;
    xm[j] = x[j] - step;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * step);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return J;
}

namespace {

double contraction_residual(const DynamicsSystem& system, const MetricFn& metric, double rho,
                            const Vector& x, double slack, bool& violated) {
  const Vector zero_u = Vector::Zero(system.input_dim());
  auto f = [&](const Vector& z) { return system.step(z, zero_u); };
  const Matrix J = finite_difference_jacobian(f, x);
  const Matrix Mx = metric(x);
  const Matrix Mf = metric(f(x));
  if (!linalg::is_positive_definite(Mx) || !linalg::is_positive_definite(Mf)) {
    violated = true;
    return std::numeric_limits<double>::infinity();
  }
  const Matrix lhs = J.transpose() * Mf * J;
  const Matrix gap = rho * Mx - lhs;
  violated = !linalg::is_positive_definite(gap, slack);
  return linalg::max_eigenvalue_symmetric(lhs - rho * Mx);
}

}  // namespace

CertificationReport check_contraction_metric(const DynamicsSystem& system, const MetricFn& metric,
                                             double rho, const std::vector<Vector>& points,
                                             double slack) {
  CertificationReport report;
  report.tolerance = slack;
  for (const Vector& x : points) {
    bool violated = false;
    const double r = contraction_residual(system, metric, rho, x, slack, violated);
    ++report.samples;
    if (violated) ++report.violations;
    if (r > report.worst_residual) {
      report.worst_residual = r;
      report.witness = concat({&x});
    }
  }
  return report;
}

CertificationReport check_contraction_metric(const DynamicsSystem& system, const MetricFn& metric,
                                             double rho, const PointSampler& sampler,
                                             std::size_t samples, std::uint64_t seed,
                                             double slack) {
  // Violations come from the Cholesky test; the residual reported is the
  // eigenvalue gap, which exceeds `slack` exactly when Cholesky fails.
  return check_sampled(
      [&](Rng& rng, std::vector<double>& witness) {
        const Vector x = sampler(rng);
        bool violated = false;
        const double r = contraction_residual(system, metric, rho, x, slack, violated);
        witness = concat({&x});
        if (violated) return std::max(r, std::nextafter(slack, 1.0));
        return std::min(r, slack);
      },
      samples, seed, slack);
}

double p_system_sign_inequality_residual(double x, double y, double p) {
  const double d = std::abs(x - y);
  const double lower = std::pow(2.0, -(2.0 + p)) * std::min(d, std::pow(d, 1.0 + p));
  return lower - sgn(x - y) * (p_system_h(x, p) - p_system_h(y, p));
}

double p_system_sign_preservation_residual(double x, double y, double p, double eta) {
  const double z = (x - y) - eta * (p_system_h(x, p) - p_system_h(y, p));
  // sgn(z) = sgn(x - y) <=> sgn(x-y) z > 0 for x != y.
  return -sgn(x - y) * z;
}

}  // namespace igs
