#include <doctest.h>

#include "igs/dynamics.hpp"
#include "igs/errors.hpp"
#include "igs/rng.hpp"
#include "igs/stability.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

using namespace igs;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Trajectory scalar_traj(std::initializer_list<double> states) {
  Trajectory t;
  for (double s : states) t.states.push_back(vec({s}));
  t.initial_condition = t.states.front();
  t.inputs.assign(t.states.size() - 1, vec({0}));
  return t;
}

std::shared_ptr<const PSystem> prop6(double p, double eta) {
  return make_p_system({p, eta, PSystemVariant::kProp6, 1, nullptr});
}

IgsCaseSampler prop6_cases(double xi_max, double u_max, int t_max) {
  return [=](Rng& rng) {
    std::uniform_real_distribution<double> xi(-xi_max, xi_max);
    std::uniform_real_distribution<double> u(-u_max, u_max);
    std::uniform_int_distribution<int> T(1, t_max);
    IgsCase c;
    c.xi1 = vec({xi(rng)});
    c.xi2 = vec({xi(rng)});
    const int horizon = T(rng);
    for (int t = 0; t < horizon; ++t) c.inputs.push_back(vec({u(rng)}));
    return c;
  };
}

bool operator_eq(const IgsParams& a, const IgsParams& b) {
  auto close = [](double x, double y) { return std::abs(x - y) <= 1e-12 * std::max(1.0, std::abs(y)); };
  return close(a.a, b.a) && close(a.a0, b.a0) && close(a.a1, b.a1) && close(a.b0, b.b0) &&
         close(a.b1, b.b1) && close(a.zeta, b.zeta) && close(a.gamma, b.gamma);
}

}  // namespace

TEST_CASE("discrepancy sum") {
  const Trajectory a = scalar_traj({0, 1, 2});
  const Trajectory z = scalar_traj({0, 0, 0});
  CHECK(discrepancy_sum(a, a) == 0.0);
  CHECK(discrepancy_sum(a, z) == 3.0);
  const Trajectory a3 = scalar_traj({0, -3, -6});
  CHECK(discrepancy_sum(a3, z) == 3.0 * discrepancy_sum(a, z));
  CHECK_THROWS_AS(discrepancy_sum(a, scalar_traj({0, 1})), DimensionError);
}

TEST_CASE("imitation loss") {
  Rng rng = make_rng(1);
  const auto sys = make_lti(Matrix::Identity(2, 2) * 0.5, Matrix::Identity(2, 2));
  const auto pi1 = std::make_shared<const MlpPolicy>(random_mlp(2, 4, 2, Activation::kTanh, 1));
  const auto star = std::make_shared<const MlpPolicy>(random_mlp(2, 4, 2, Activation::kTanh, 2));
  const Trajectory roll = rollout_closed(*sys, *pi1, gaussian_vector(rng, 2), 12);
  CHECK(imitation_loss(*sys, roll, *pi1, *pi1) == 0.0);

  // pi1 - pi2 = c on every state: build with a constant-output system.
  const Vector c = vec({0.3, -0.4});
  auto constant = std::make_shared<const FunctionSystem>(
      2, 2, [](const Vector& x) { return x; },
      [](const Vector&) { return Matrix(Matrix::Identity(2, 2)); });
  class ConstPolicy final : public Policy {
   public:
    explicit ConstPolicy(Vector v) : v_(std::move(v)) {}
    Eigen::Index in_dim() const override { return 2; }
    Eigen::Index out_dim() const override { return 2; }
    std::string kind() const override { return "const"; }
    Matrix evaluate_batch(const Matrix& s) const override {
      return v_.replicate(1, s.cols());
    }
    nlohmann::json to_json() const override { return {}; }

   protected:
    Vector evaluate_unchecked(const Vector&) const override { return v_; }

   private:
    Vector v_;
  };
  const ConstPolicy cp(c);
  const LinearPolicy zero(Matrix::Zero(2, 2));
  CHECK(imitation_loss(*constant, roll, cp, zero) == doctest::Approx(12 * c.norm()).epsilon(1e-14));

  // ((1-a) pi1 + a star) against star is (1-a) times pi1 against star.
  const double a = 0.3;
  const auto m = mix(pi1, star, a);
  CHECK(imitation_loss(*sys, roll, *m, *star) ==
        doctest::Approx((1 - a) * imitation_loss(*sys, roll, *pi1, *star)).epsilon(1e-12));

  // Model-free form ignores the gain.
  const auto scaled = make_lti(Matrix::Identity(2, 2) * 0.5, 3.0 * Matrix::Identity(2, 2));
  CHECK(imitation_loss(*scaled, roll, *pi1, *star, LossMode::kModelBased) ==
        doctest::Approx(3.0 * imitation_loss(*scaled, roll, *pi1, *star, LossMode::kModelFree)));
}

TEST_CASE("IGS falsification on the prop6 closed loop") {
  const auto sys = prop6(1.0, 0.5);
  const IgsParams psi = p_system_igs_params(1.0, 0.5);
  CHECK(operator_eq(psi, IgsParams{1, 1, 2, 1, 1, 16, 8}));

  SUBCASE("equal initial conditions and zero input") {
    IgsCase c{vec({1.3}), vec({1.3}), std::vector<Vector>(20, vec({0}))};
    CHECK(igs_residual(psi, *sys, c) <= 0.0);
  }
  SUBCASE("random cases") {
    const auto report = check_igs_on_trajectories(psi, *sys, prop6_cases(5, 1, 200), 10000, 3);
    CHECK(report.samples == 10000);
    CHECK(report.violations == 0);
    CHECK(report.worst_residual <= kHoldsTolerance);
  }
  SUBCASE("zero gains are falsified") {
    IgsParams bad = psi;
    bad.zeta = bad.gamma = 0.0;
    const auto report = check_igs_on_trajectories(bad, *sys, prop6_cases(5, 1, 50), 200, 3);
    CHECK(report.violations > 0);
    CHECK(report.worst_residual > kHoldsTolerance);
    CHECK(report.witness.size() == 3);
  }
  SUBCASE("report is independent of the worker count") {
    const auto sampler = prop6_cases(5, 1, 20);
    setenv("IGS_THREADS", "1", 1);
    const auto one = check_igs_on_trajectories(psi, *sys, sampler, 9000, 7);
    setenv("IGS_THREADS", "3", 1);
    const auto three = check_igs_on_trajectories(psi, *sys, sampler, 9000, 7);
    unsetenv("IGS_THREADS");
    CHECK(one.worst_residual == three.worst_residual);
    CHECK(one.witness == three.witness);
    CHECK(one.violations == three.violations);
  }
}

TEST_CASE("IGS inequality reduces to the small-signal form") {
  // All |D_t| <= 1 and |u_t| <= 1: LHS is sum |D|^{a v a1}, input term gamma sum |u|^b0.
  const auto sys = prop6(2.0, 0.5);
  const IgsParams psi = p_system_igs_params(2.0, 0.5);
  IgsCase c{vec({0.4}), vec({0.1}), {vec({0.2}), vec({-0.1}), vec({0.05})}};
  const Trajectory t1 = rollout_open(*sys, c.xi1, c.inputs);
  const Trajectory t2 = rollout_open(*sys, c.xi2, std::vector<Vector>(3, vec({0})));
  double lhs = 0.0;
  for (int t = 0; t <= 3; ++t) lhs += std::pow(std::abs(t1.states[t][0] - t2.states[t][0]), 3.0);
  const double rhs = psi.zeta * 0.3 + psi.gamma * (0.2 + 0.1 + 0.05);
  CHECK(igs_residual(psi, *sys, c) == doctest::Approx(lhs - rhs).epsilon(1e-12));
}

TEST_CASE("Lyapunov decrement") {
  const auto sys = prop6(1.0, 0.5);
  const IncLyapunov cert = p_system_lyapunov(1.0, 0.5);
  CHECK(cert.frak_a == 0.0625);
  CHECK(cert.frak_b == 0.5);
  CHECK(cert.decrement_residual(*sys, vec({2}), vec({2}), vec({0})) == 0.0);
  // LHS = |0.75 - 0| - 1 = -0.25, RHS = -0.0625 min{1, 1}.
  const double lhs = std::abs(sys->step(vec({1}), vec({0}))[0]) - 1.0;
  CHECK(lhs == doctest::Approx(-0.25));
  CHECK(cert.decrement_residual(*sys, vec({1}), vec({0}), vec({0})) ==
        doctest::Approx(-0.25 + 0.0625));

  for (double p : {0.5, 1.0, 2.0, 3.0, 5.0}) {
    const double eta = 0.9 * p_system_eta_limit(p);
    const auto s = prop6(p, eta);
    const auto c = p_system_lyapunov(p, eta);
    const auto report = check_lyapunov_decrement(
        c, *s,
        [](Rng& rng) {
          std::uniform_real_distribution<double> d(-10, 10);
          return DecrementSample{vec({d(rng)}), vec({d(rng)}), vec({d(rng)})};
        },
        50000, 11);
    CHECK(report.violations == 0);
  }

  IncLyapunov no_input = cert;
  no_input.frak_b = 0.0;
  const auto report = check_lyapunov_decrement(
      no_input, *sys,
      [](Rng& rng) {
        std::uniform_real_distribution<double> d(-3, 3);
        const Vector x = vec({d(rng)});
        return DecrementSample{x, x, vec({5.0})};
      },
      100, 1);
  CHECK(report.violations > 0);
}

TEST_CASE("p-system scalar inequalities") {
  for (double p : {0.5, 1.0, 2.0, 3.0, 5.0}) {
    const double eta = 0.9 * p_system_eta_limit(p);
    const auto sign = check_sampled(
        [p](Rng& rng, std::vector<double>& w) {
          std::uniform_real_distribution<double> d(-10, 10);
          const double x = d(rng), y = d(rng);
          w = {x, y};
          return p_system_sign_inequality_residual(x, y, p);
        },
        100000, 5, 1e-12);
    CHECK(sign.violations == 0);
    const auto keep = check_sampled(
        [p, eta](Rng& rng, std::vector<double>& w) {
          std::uniform_real_distribution<double> d(-10, 10);
          const double x = d(rng), y = d(rng);
          w = {x, y};
          return x == y ? -1.0 : p_system_sign_preservation_residual(x, y, p, eta);
        },
        100000, 6, 0.0);
    CHECK(keep.violations == 0);
  }
}

TEST_CASE("closed-form IGS parameters") {
  IncLyapunov unit;
  CHECK(operator_eq(igs_from_lyapunov(unit), IgsParams{1, 1, 1, 1, 1, 1, 1}));

  IncLyapunov c;
  c.a = 1;
  c.a0 = 1;
  c.a1 = 2;
  c.alpha_lo = 1;
  c.alpha_hi = 2;
  c.frak_a = 0.5;
  c.frak_b = 3;
  CHECK(operator_eq(igs_from_lyapunov(c), IgsParams{1, 1, 2, 1, 1, 4, 6}));
  CHECK(operator_eq(igs_from_lyapunov(p_system_lyapunov(1.0, 0.5)), IgsParams{1, 1, 2, 1, 1, 16, 8}));
  c.frak_a = 0.0;
  CHECK_THROWS_AS(igs_from_lyapunov(c), PreconditionError);

  CHECK(operator_eq(contraction_igs_params(0.25, 1, 4, 2), IgsParams{1, 1, 1, 1, 1, 4, 8}));
  CHECK(contraction_igs_params(0.36, 3, 3, 1).zeta == doctest::Approx(1.0 / (1.0 - 0.6)));
  CHECK(contraction_igs_params(1e-300, 1, 9, 1).zeta == doctest::Approx(3.0));
  CHECK_THROWS_AS(contraction_igs_params(1.0, 1, 1, 1), PreconditionError);
  CHECK_THROWS_AS(contraction_igs_params(0.0, 1, 1, 1), PreconditionError);

  CHECK(operator_eq(p_system_igs_params(2.0, 0.5), IgsParams{1, 1, 3, 1, 1, 32, 16}));
  CHECK_THROWS_AS(p_system_igs_params(1.0, 4.0 / 6.0), PreconditionError);
  try {
    p_system_igs_params(1.0, 1.0);
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("as long as 0 < eta < 4/(5+p)") != std::string::npos);
  }
}

TEST_CASE("restricted form") {
  CHECK(IgsParams{2, 2, 3, 1, 1, 1, 1}.satisfies_restricted_form());
  CHECK_FALSE(IgsParams{2, 1, 3, 1, 1, 1, 1}.satisfies_restricted_form());
  CHECK_FALSE(IgsParams{1, 1, 2, 1, 1, 0.5, 1}.satisfies_restricted_form());
  CHECK_THROWS_AS(IgsParams({1, 2, 1, 1, 1, 1, 1}).validate(), PreconditionError);
  CHECK_THROWS_AS(IgsParams({0.5, 1, 1, 1, 1, 1, 1}).validate(), PreconditionError);
}

TEST_CASE("bounds") {
  SUBCASE("gronwall") {
    CHECK(gronwall_bound(1, 1, 5, 0.0) == 0.0);
    CHECK(gronwall_bound(1, 1, 2, 1.0) == doctest::Approx(4.0));
    CHECK(gronwall_bound(0.9, 2, 1, 2.5) == doctest::Approx(2.5));
    CHECK_THROWS_AS(gronwall_bound(0.5, 0.5, 3, 1.0), PreconditionError);
  }
  SUBCASE("inputs") {
    const IgsParams contracting{1, 1, 1, 1, 1, 7, 1};
    CHECK(disc_bound_inputs(contracting, 3, 0.0) == 0.0);
    for (std::size_t T : {1, 10, 1000}) CHECK(disc_bound_inputs(contracting, T, 3.0) == 12.0);
    CHECK(disc_bound_inputs(IgsParams{1, 1, 2, 1, 1, 5, 2}, 16, 1.0) == doctest::Approx(32.0));
  }
  SUBCASE("initial conditions") {
    const IgsParams psi{1, 1, 1, 1, 1, 2, 1};
    const IcBound zero = disc_bound_ics(psi, 4, 0.0);
    CHECK(zero.per_step == 0.0);
    CHECK(zero.summed == 0.0);
    CHECK(disc_bound_ics(psi, 4, 3.0).summed == doctest::Approx(12.0));
    const IgsParams small{1, 1, 2, 1, 1, 0.3, 1};
    const IgsParams one{1, 1, 2, 1, 1, 1.0, 1};
    CHECK(disc_bound_ics(small, 9, 2.0).summed == disc_bound_ics(one, 9, 2.0).summed);
  }
  SUBCASE("monotone in T, loss, zeta and gamma") {
    Rng rng = make_rng(12);
    std::uniform_real_distribution<double> e(1, 3), g(0.1, 10), l(0, 5);
    std::uniform_int_distribution<int> T(1, 500);
    for (int i = 0; i < 2000; ++i) {
      IgsParams psi;
      psi.a = e(rng);
      psi.a0 = e(rng);
      psi.a1 = psi.a0 + e(rng) - 1;
      psi.b0 = e(rng);
      psi.b1 = psi.b0 + e(rng) - 1;
      psi.zeta = g(rng);
      psi.gamma = g(rng);
      const std::size_t t1 = T(rng), t2 = t1 + T(rng);
      const double l1 = l(rng), l2 = l1 + l(rng);
      CHECK(disc_bound_inputs(psi, t1, l1) <= disc_bound_inputs(psi, t2, l1));
      CHECK(disc_bound_inputs(psi, t1, l1) <= disc_bound_inputs(psi, t1, l2));
      CHECK(disc_bound_ics(psi, t1, l1).summed <= disc_bound_ics(psi, t2, l1).summed);
      CHECK(disc_bound_ics(psi, t1, l1).summed <= disc_bound_ics(psi, t1, l2).summed);
      IgsParams bigger = psi;
      bigger.zeta *= 1.5;
      bigger.gamma *= 1.5;
      CHECK(disc_bound_inputs(psi, t1, l1) <= disc_bound_inputs(bigger, t1, l1));
      CHECK(disc_bound_ics(psi, t1, l1).summed <= disc_bound_ics(bigger, t1, l1).summed);
    }
  }
}

TEST_CASE("min_max_power") {
  const std::vector<double> e{1, 2, 3};
  CHECK(min_max_power(1.0, e, MinMax::kMin) == 1.0);
  CHECK(min_max_power(1.0, e, MinMax::kMax) == 1.0);
  CHECK(min_max_power(0.5, e, MinMax::kMin) == 0.125);
  CHECK(min_max_power(2.0, e, MinMax::kMin) == 2.0);
  const std::vector<double> bad{0.5, 2};
  CHECK_THROWS_AS(min_max_power(2.0, bad, MinMax::kMin), PreconditionError);

  Rng rng = make_rng(2);
  std::uniform_real_distribution<double> ex(1, 6), xs(-4, 4);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> es(1 + i % 6);
    for (double& v : es) v = ex(rng);
    const double x = xs(rng);
    double lo = INFINITY, hi = -INFINITY;
    for (double v : es) {
      lo = std::min(lo, std::pow(std::abs(x), v));
      hi = std::max(hi, std::pow(std::abs(x), v));
    }
    CHECK(min_max_power(x, es, MinMax::kMin) == lo);
    CHECK(min_max_power(x, es, MinMax::kMax) == hi);
  }
}

TEST_CASE("contraction metric checks") {
  SUBCASE("linear contraction holds with equality") {
    const auto sys = make_lti(Matrix::Constant(1, 1, 0.5), Matrix::Identity(1, 1));
    const MetricFn I = [](const Vector&) { return Matrix(Matrix::Identity(1, 1)); };
    const auto report = check_contraction_metric(*sys, I, 0.25, std::vector<Vector>{vec({1}), vec({-3})});
    CHECK(report.violations == 0);
    const auto tight = check_contraction_metric(*sys, I, 0.2, std::vector<Vector>{vec({1})});
    CHECK(tight.violations == 1);
  }
  SUBCASE("log system") {
    ContractingParams params;
    params.dim = 1;
    const auto ex = make_contracting_example(ContractingKind::kLogSystem, params);
    std::vector<Vector> grid;
    for (int i = 0; i <= 1000; ++i) grid.push_back(vec({-10.0 + 20.0 * i / 1000.0}));
    // Observed worst ratio on the grid, then check with that rho.
    double worst = 0.0;
    for (const auto& x : grid) {
      const double J = 2 * x[0] / (1 + x[0] * x[0]);
      const double fx = std::log1p(x[0] * x[0]);
      worst = std::max(worst, J * J * ex.metric(vec({fx}))(0, 0) / ex.metric(x)(0, 0));
    }
    CHECK(worst < 1.0);
    const auto report = check_contraction_metric(*ex.system, ex.metric, worst + 1e-6, grid);
    CHECK(report.violations == 0);
  }
  SUBCASE("gradient descent") {
    Rng rng = make_rng(1);
    Matrix Q = gaussian_matrix(rng, 3, 3);
    Q = Q * Q.transpose() + Matrix::Identity(3, 3);
    ContractingParams params;
    params.dim = 3;
    params.quadratic = Q;
    params.eta = 1.0 / linalg::max_eigenvalue_symmetric(Q);
    const auto ex = make_contracting_example(ContractingKind::kGradientDescent, params);
    const double op = linalg::operator_norm(Matrix::Identity(3, 3) - params.eta * Q);
    const auto report = check_contraction_metric(
        *ex.system, ex.metric, op * op,
        [](Rng& r) { return uniform_vector(r, 3, -10, 10); }, 1000, 4);
    CHECK(report.violations == 0);
  }
  SUBCASE("non-PD metric is a violation") {
    const auto sys = make_lti(Matrix::Constant(1, 1, 0.5), Matrix::Identity(1, 1));
    const MetricFn neg = [](const Vector&) { return Matrix(-Matrix::Identity(1, 1)); };
    CHECK(check_contraction_metric(*sys, neg, 0.5, std::vector<Vector>{vec({1})}).violations == 1);
  }
}

TEST_CASE("robust LQR certificate") {
  SUBCASE("scalar closed form") {
    const auto cert = build_robust_lqr_certificate(Matrix::Constant(1, 1, 0.5),
                                                   Matrix::Identity(1, 1), std::sqrt(0.75), 0.25);
    REQUIRE(cert.quadratic_form);
    CHECK((*cert.quadratic_form)(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(cert.a == 2.0);
  }
  SUBCASE("defining equation and decrement on the closed loop") {
    Rng rng = make_rng(21);
    for (int trial = 0; trial < 10; ++trial) {
      Matrix A = gaussian_matrix(rng, 5, 5);
      A *= 1.5 / Eigen::EigenSolver<Matrix>(A, false).eigenvalues().cwiseAbs().maxCoeff();
      const Matrix B = gaussian_matrix(rng, 5, 2);
      const Matrix Q = 1e-2 * Matrix::Identity(5, 5);
      const Matrix R = Matrix::Identity(2, 2);
      const Matrix P = linalg::solve_dare(A, B, Q, R);
      const Matrix Acl = A + B * linalg::lqr_gain(A, B, Q, R);
      const double rho = linalg::spectral_radius(Acl);
      const double gamma = std::sqrt((1 + rho * rho) / 2);
      const auto cert = build_robust_lqr_certificate(Acl, P, gamma, 1e-3);
      const Matrix& X = *cert.quadratic_form;
      const Matrix Qc = (1 - gamma * gamma) * P + 1e-3 * Matrix::Identity(5, 5);
      CHECK((Acl.transpose() * X * Acl - X + Qc).norm() < 1e-10 * std::max(1.0, X.norm()));
      CHECK(cert.alpha_lo > 0.0);
      const auto loop = make_lti(Acl, Matrix::Identity(5, 5));
      const auto report = check_lyapunov_decrement(
          cert, *loop,
          [](Rng& r) {
            return DecrementSample{gaussian_vector(r, 5, 2), gaussian_vector(r, 5, 2),
                                   gaussian_vector(r, 5, 0.5)};
          },
          2000, 3, 1e-9 * X.norm());
      CHECK(report.violations == 0);
      // Sandwich bounds.
      for (int i = 0; i < 100; ++i) {
        const Vector x = gaussian_vector(rng, 5), y = gaussian_vector(rng, 5);
        const double v = cert.value(x, y), d2 = (x - y).squaredNorm();
        CHECK(v >= cert.alpha_lo * d2 * (1 - 1e-12));
        CHECK(v <= cert.alpha_hi * d2 * (1 + 1e-12));
        CHECK(cert.value(x, x) == 0.0);
      }
    }
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(build_robust_lqr_certificate(Matrix::Constant(1, 1, 1.2),
                                                 Matrix::Identity(1, 1), 0.9, 1e-3),
                    PreconditionError);
    CHECK_THROWS_AS(build_robust_lqr_certificate(Matrix::Constant(1, 1, 0.5),
                                                 Matrix::Identity(1, 1), 0.4, 1e-3),
                    PreconditionError);
    CHECK_THROWS_AS(build_robust_lqr_certificate(Matrix::Constant(1, 1, 0.5),
                                                 Matrix::Identity(1, 1), 0.9, 0.0),
                    PreconditionError);
  }
}

TEST_CASE("certification report json") {
  CertificationReport r;
  r.samples = 3;
  r.violations = 1;
  r.worst_residual = 0.5;
  r.witness = {1.0, 2.0};
  const auto j = r.to_json();
  CHECK(j["samples"] == 3);
  CHECK(j["violations"] == 1);
  CHECK(j["worst_residual"] == 0.5);
  CHECK(j["witness"].size() == 2);
}
