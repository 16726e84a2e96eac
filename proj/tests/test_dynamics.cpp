#include <doctest.h>

#include "igs/dynamics.hpp"
#include "igs/errors.hpp"
#include "igs/rng.hpp"

#include <cmath>
#include <memory>
#include <sstream>

using namespace igs;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

PolicyPtr zero_policy(Eigen::Index n, Eigen::Index d) {
  return std::make_shared<const LinearPolicy>(Matrix::Zero(d, n));
}

std::shared_ptr<const PSystem> experiment_system(double p, std::uint64_t seed, Eigen::Index n = 10) {
  PSystemSpec spec;
  spec.p = p;
  spec.variant = PSystemVariant::kExperiment;
  spec.dim = n;
  spec.h = std::make_shared<const MlpPolicy>(random_mlp(n, 32, n, Activation::kTanh, seed));
  return make_p_system(spec);
}

}  // namespace

TEST_CASE("p-system steps") {
  const auto prop6 = make_p_system({1.0, 0.5, PSystemVariant::kProp6, 1, nullptr});
  CHECK(prop6->step(vec({1}), vec({0}))[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(prop6->step(vec({0}), vec({0}))[0] == 0.0);
  CHECK(prop6->input_gain(vec({3.7}))(0, 0) == 0.5);
  CHECK_THROWS_AS(prop6->step(vec({1, 2}), vec({0})), DimensionError);
  CHECK_THROWS_AS(prop6->step(vec({1}), vec({0, 0})), DimensionError);
  try {
    prop6->step(vec({1}), vec({0, 0}));
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("u") != std::string::npos);
  }

  const auto exp2 = make_p_system({2.0, 0.5, PSystemVariant::kExperiment, 1, nullptr});
  CHECK(exp2->step(vec({2}), vec({0}))[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(exp2->input_gain(vec({1}))(0, 0) == 0.5);
}

TEST_CASE("p-system step size limit") {
  CHECK(p_system_eta_limit(1.0) == doctest::Approx(4.0 / 6.0));
  CHECK_THROWS_AS(make_p_system({1.0, 4.0 / 6.0, PSystemVariant::kProp6, 1, nullptr}),
                  PreconditionError);
  CHECK_THROWS_AS(make_p_system({1.0, -0.1, PSystemVariant::kProp6, 1, nullptr}),
                  PreconditionError);
  // The experiment variant keeps its fixed coefficient 0.5 at every p.
  CHECK_NOTHROW(make_p_system({5.0, 0.5, PSystemVariant::kExperiment, 1, nullptr}));
}

TEST_CASE("experiment p-system with the expert matches the expert closed loop") {
  for (double p : {1.0, 3.0, 5.0}) {
    const auto sys = experiment_system(p, 17);
    const PolicyPtr expert = p_system_expert(sys->spec());
    Rng rng = make_rng(2);
    const Vector xi = gaussian_vector(rng, 10);
    const Trajectory traj = rollout_closed(*sys, *expert, xi, 30);
    Vector x = xi;
    for (int t = 0; t <= 30; ++t) {
      CHECK((traj.states[t] - x).norm() <= 1e-12 * std::max(1.0, x.norm()));
      x = (x.array() - 0.5 * x.array() * x.array().abs().pow(p) / (1.0 + 0.5 * x.array().abs().pow(p)))
              .matrix();
    }
  }
}

TEST_CASE("experiment p-system decomposes into expert loop plus gained input") {
  const double p = 2.0;
  const auto sys = experiment_system(p, 5);
  const PolicyPtr expert = p_system_expert(sys->spec());
  Rng rng = make_rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vector x = gaussian_vector(rng, 10, 2.0);
    const Vector v = gaussian_vector(rng, 10);
    const Vector lhs = sys->step(x, expert->evaluate(x) + v);
    const Vector gain = (1.0 / (1.0 + x.array().abs().pow(p))).matrix();
    const Vector rhs = sys->expert_closed_loop_drift(x) + gain.cwiseProduct(v);
    CHECK((lhs - rhs).norm() < 1e-12);
  }
  // h = 0 and u = 0 is the expert closed loop.
  const auto bare = make_p_system({p, 0.5, PSystemVariant::kExperiment, 10, nullptr});
  const Vector x = gaussian_vector(rng, 10);
  CHECK((bare->step(x, Vector::Zero(10)) - sys->expert_closed_loop_drift(x)).norm() < 1e-15);
}

TEST_CASE("rollouts") {
  SUBCASE("zero policy from the origin stays at zero") {
    const auto sys = make_p_system({1.0, 0.5, PSystemVariant::kProp6, 1, nullptr});
    const Trajectory t = rollout_closed(*sys, *zero_policy(1, 1), vec({0}), 10);
    for (const auto& s : t.states) CHECK(s[0] == 0.0);
    CHECK(t.states.size() == 11);
    CHECK(t.inputs.size() == 10);
  }
  SUBCASE("geometric decay") {
    const auto sys = make_lti(Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 1.0));
    const Trajectory t = rollout_closed(*sys, *zero_policy(1, 1), vec({8}), 3);
    CHECK(t.states[0][0] == 8.0);
    CHECK(t.states[1][0] == 4.0);
    CHECK(t.states[2][0] == 2.0);
    CHECK(t.states[3][0] == 1.0);
  }
  SUBCASE("horizon must be positive for closed loop") {
    const auto sys = make_lti(Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 1.0));
    CHECK_THROWS_AS(rollout_closed(*sys, *zero_policy(1, 1), vec({8}), 0), PreconditionError);
  }
  SUBCASE("open loop") {
    const auto sys = make_p_system({1.0, 0.5, PSystemVariant::kProp6, 1, nullptr});
    const Trajectory empty = rollout_open(*sys, vec({2}), {});
    CHECK(empty.states.size() == 1);
    CHECK(empty.states[0][0] == 2.0);
    const Trajectory one = rollout_open(*sys, vec({0}), {vec({1})});
    CHECK(one.states[1][0] == 0.5);
    CHECK_THROWS_AS(rollout_open(*sys, vec({0}), {vec({1, 1})}), DimensionError);
  }
  SUBCASE("replay reproduces closed-loop states bit for bit") {
    const auto sys = experiment_system(3.0, 9);
    const auto policy = std::make_shared<const MlpPolicy>(
        random_mlp(10, 16, 10, Activation::kTanh, 4));
    Rng rng = make_rng(5);
    const Trajectory t = rollout_closed(*sys, *policy, gaussian_vector(rng, 10), 50);
    const Trajectory r = rollout_open(*sys, t.initial_condition, t.inputs);
    for (std::size_t i = 0; i < t.states.size(); ++i) CHECK(r.states[i] == t.states[i]);
    CHECK(replay_error(*sys, t) == 0.0);
  }
  SUBCASE("divergence reports the first bad index") {
    const auto sys = make_lti(Matrix::Constant(1, 1, 10.0), Matrix::Constant(1, 1, 1.0));
    try {
      rollout_closed(*sys, *zero_policy(1, 1), vec({1}), 20);
      FAIL("expected divergence");
    } catch (const RolloutDivergence& e) {
      CHECK(e.index() == 10);  // 10^10 > 1e9
      CHECK(e.partial().states.size() == 10);
    }
  }
}

TEST_CASE("lti systems") {
  const auto id = make_lti(Matrix::Identity(2, 2), Matrix::Zero(2, 1));
  CHECK(id->step(vec({3, -1}), vec({5})) == vec({3, -1}));
  const auto half = make_lti(0.5 * Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  CHECK(half->step(vec({2, 4}), vec({1, 0})) == vec({2, 2}));
  CHECK_THROWS_AS(make_lti(Matrix::Identity(2, 2), Matrix::Zero(3, 1)), DimensionError);
  Matrix A(2, 2);
  A << 3.0, 1.0, 0.0, -2.0;
  CHECK(linalg::spectral_radius(make_lti(A, Matrix::Zero(2, 1))->A()) ==
        doctest::Approx(linalg::spectral_radius(A)));
}

TEST_CASE("control-affine linearity and zero preservation") {
  Rng rng = make_rng(10);
  const auto sys = experiment_system(2.0, 12, 4);
  for (int i = 0; i < 50; ++i) {
    const Vector x = gaussian_vector(rng, 4, 2.0);
    const Vector u1 = gaussian_vector(rng, 4);
    const Vector u2 = gaussian_vector(rng, 4);
    const double a = std::uniform_real_distribution<double>(0, 1)(rng);
    const Vector lhs = sys->step(x, a * u1 + (1 - a) * u2);
    const Vector rhs = a * sys->step(x, u1) + (1 - a) * sys->step(x, u2);
    CHECK((lhs - rhs).norm() < 1e-12);
  }
  CHECK(sys->step(Vector::Zero(4), Vector::Zero(4)).isZero(0.0));
  CHECK(sys->drift(Vector::Zero(4)).isZero(0.0));
}

TEST_CASE("contracting examples") {
  ContractingParams params;
  params.dim = 1;
  const auto log_sys = make_contracting_example(ContractingKind::kLogSystem, params);
  CHECK(log_sys.system->step(vec({0}), vec({0}))[0] == 0.0);
  CHECK(log_sys.metric(vec({0}))(0, 0) == doctest::Approx(1.0));

  params.quadratic = Matrix::Identity(1, 1);
  params.eta = 0.5;
  const auto gd = make_contracting_example(ContractingKind::kGradientDescent, params);
  CHECK(gd.system->step(vec({3}), vec({0}))[0] == doctest::Approx(1.5));
  params.eta = 1.5;
  CHECK_THROWS_AS(make_contracting_example(ContractingKind::kGradientDescent, params),
                  PreconditionError);

  ContractingParams pw;
  pw.dim = 2;
  Matrix A1(2, 2), A2(2, 2);
  A1 << 0.5, 0.1, 0.0, 0.4;
  A2 << 0.3, 0.0, 0.2, 0.5;
  pw.modes = {A1, A2};
  pw.region = [](const Vector& x) -> std::size_t { return x[0] >= 0 ? 0 : 1; };
  pw.certificate = Matrix::Identity(2, 2);
  const auto pl = make_contracting_example(ContractingKind::kPiecewiseLinear, pw);
  CHECK((pl.system->step(vec({1, 1}), vec({0, 0})) - A1 * vec({1, 1})).norm() == 0.0);
  pw.modes = {2.0 * Matrix::Identity(2, 2)};
  CHECK_THROWS_AS(make_contracting_example(ContractingKind::kPiecewiseLinear, pw),
                  PreconditionError);
}

TEST_CASE("trajectory csv round trip") {
  const auto sys = experiment_system(1.0, 3, 3);
  const auto policy = std::make_shared<const MlpPolicy>(random_mlp(3, 4, 3, Activation::kTanh, 2));
  Rng rng = make_rng(4);
  const Trajectory t = rollout_closed(*sys, *policy, gaussian_vector(rng, 3), 5);
  std::stringstream ss;
  write_trajectory_csv(ss, t);
  std::string header;
  std::getline(std::stringstream(ss.str()), header);
  CHECK(header == "t,x_0,x_1,x_2,u_0,u_1,u_2");
  const Trajectory r = read_trajectory_csv(ss);
  REQUIRE(r.states.size() == t.states.size());
  for (std::size_t i = 0; i < t.states.size(); ++i) CHECK(r.states[i] == t.states[i]);
  for (std::size_t i = 0; i < t.inputs.size(); ++i) CHECK(r.inputs[i] == t.inputs[i]);
}
