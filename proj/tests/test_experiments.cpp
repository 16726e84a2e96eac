#include <doctest.h>

#include "igs/errors.hpp"
#include "igs/experiments.hpp"
#include "igs/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

using namespace igs;

namespace {

ExperimentConfig small_p_sweep() {
  std::istringstream ini(
      "[global]\nstudy = p_sweep\ntrials = 2\n"
      "[p_sweep]\np = 1, 3\nm = 10\nhorizon = 10\nepochs = 5\ndim = 3\nexpert_hidden = 8\n"
      "learner_hidden = 8\ntrain_epochs = 10\ntest_rollouts = 9\n");
  return parse_experiment_config(ini);
}

ExperimentConfig small_lq() {
  std::istringstream ini(
      "[global]\nstudy = lq_stability\ntrials = 2\n"
      "[lq_stability]\nn = 3\nd = 2\nhorizon = 10\nbudgets = 10\nepochs = 5\nhidden = 8\n"
      "train_epochs = 10\ntest_rollouts = 11\n");
  return parse_experiment_config(ini);
}

std::string csv(const std::vector<ResultRecord>& records) {
  std::ostringstream os;
  write_results_csv(os, records);
  return os.str();
}

const ResultRecord& find(const std::vector<ResultRecord>& rs, std::uint64_t seed,
                         const std::string& alg, const std::string& param,
                         const std::string& metric) {
  for (const auto& r : rs)
    if (r.seed == seed && r.algorithm == alg && r.param == param && r.metric == metric) return r;
  throw std::runtime_error("record not found: " + alg + " " + param + " " + metric);
}

}  // namespace

TEST_CASE("percentiles") {
  CHECK(percentile({3, 1, 2, 5, 4}, 0.5) == 3.0);
  CHECK(percentile({3, 1, 2, 5, 4}, 0.2) == doctest::Approx(1.8));
  CHECK(percentile({3, 1, 2, 5, 4}, 0.8) == doctest::Approx(4.2));
  CHECK(percentile({7}, 0.2) == 7.0);
  CHECK(percentile({1, 2}, 0.5) == 1.5);
  CHECK_THROWS_AS(percentile({}, 0.5), PreconditionError);

  Rng rng = make_rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v;
    const int n = 1 + trial % 17;
    for (int i = 0; i < n; ++i) v.push_back(gaussian_vector(rng, 1)[0]);
    const ResultRecord r = summarize("s", 0, "a", "p", "m", v);
    CHECK(r.p20 <= r.median);
    CHECK(r.median <= r.p80);
  }
}

TEST_CASE("results CSV") {
  const std::vector<ResultRecord> rs{{"p_sweep", 3, "bc", "1", "goal_deviation", 0.1, 1.0 / 3, 2e-12}};
  CHECK(csv(rs) ==
        "study,seed,algorithm,param,metric,median,p20,p80\n"
        "p_sweep,3,bc,1,goal_deviation,0.1,0.3333333333,2e-12\n");
  CHECK(format_number(0.0001) == "0.0001");
  CHECK(format_number(250) == "250");
}

TEST_CASE("configuration") {
  SUBCASE("defaults") {
    std::istringstream empty;
    const ExperimentConfig c = parse_experiment_config(empty);
    CHECK(c.study == Study::kPSweep);
    CHECK(c.p_sweep.m == 100);
    CHECK(c.p_sweep.horizon == 50);
    CHECK(c.p_sweep.epochs == 25);
    CHECK(c.p_sweep.alpha == 0.15);
    CHECK(c.trials == 5);
    CHECK(c.trial_seeds() == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
    CHECK_FALSE(c.full_scale);
  }
  SUBCASE("full scale") {
    std::istringstream ini("[global]\nscale = full\n");
    const ExperimentConfig c = parse_experiment_config(ini);
    CHECK(c.full_scale);
    CHECK(c.p_sweep.m == 250);
    CHECK(c.p_sweep.horizon == 100);
    CHECK(c.p_sweep.test_rollouts == 500);
    CHECK(c.p_sweep.learner_hidden == 64);
  }
  SUBCASE("file values and overrides") {
    std::istringstream ini("[global]\nseed = 7\nseeds = 4, 9\n[lq_stability]\nnu = 1e-4, 1e-3, 1e-2\n");
    const ExperimentConfig c =
        parse_experiment_config(ini, {"lq_stability.budgets=30,60", "global.study=lq_stability"});
    CHECK(c.seed == 7);
    CHECK(c.trial_seeds() == std::vector<std::uint64_t>{4, 9});
    CHECK(c.lq.nu == std::vector<double>{1e-4, 1e-3, 1e-2});
    CHECK(c.lq.budgets == std::vector<std::size_t>{30, 60});
    CHECK(c.study == Study::kLqStability);
  }
  SUBCASE("environment seed") {
    setenv("IGS_SEED", "42", 1);
    std::istringstream a("[global]\nseed = 7\n");
    CHECK(parse_experiment_config(a).seed == 42);
    std::istringstream b("[global]\nseed = 7\n");
    CHECK(parse_experiment_config(b, {"global.seed=5"}).seed == 5);
    unsetenv("IGS_SEED");
  }
  SUBCASE("rejections") {
    auto parse = [](const std::string& text, std::vector<std::string> o = {}) {
      std::istringstream in(text);
      return parse_experiment_config(in, o);
    };
    CHECK_THROWS_AS(parse("[p_sweep]\nwidth = 3\n"), PreconditionError);
    CHECK_THROWS_AS(parse("[p_sweep]\nm = ten\n"), PreconditionError);
    CHECK_THROWS_AS(parse("[p_sweep]\nm = -4\n"), PreconditionError);
    CHECK_THROWS_AS(parse("[p_sweep]\nm = 30\n"), PreconditionError);  // E = 25 does not divide
    CHECK_THROWS_AS(parse("[global]\nstudy = laikago\n"), PreconditionError);
    CHECK_THROWS_AS(parse("", {"trials=3"}), PreconditionError);
    CHECK_THROWS_AS(parse("", {"global.trials"}), PreconditionError);
    CHECK_THROWS_AS(parse("[p_sweep]\nalgorithms = bc, smile\n"), PreconditionError);
    CHECK_THROWS_AS(parse("[global\n"), PreconditionError);
  }
}

TEST_CASE("p sweep") {
  const ExperimentConfig cfg = small_p_sweep();

  SUBCASE("oracle learner scores zero") {
    const auto rs = run_p_sweep(cfg, oracle_learner());
    CHECK(rs.size() == 2 * 2 * 4 * 3);
    for (const auto& r : rs) {
      CHECK(r.median == 0.0);
      CHECK(r.p20 == 0.0);
      CHECK(r.p80 == 0.0);
    }
  }
  SUBCASE("trained learners") {
    ExperimentConfig c = cfg;
    c.p_sweep.algorithms = {"bc", "cmile"};
    const auto rs = run_p_sweep(c);
    CHECK(rs.size() == 2 * 2 * 2 * 3);
    for (const auto& r : rs) {
      CHECK(r.study == "p_sweep");
      CHECK(r.p20 <= r.median);
      CHECK(r.median <= r.p80);
      if (r.metric == "goal_deviation") CHECK(r.median > 0.0);
    }
    CHECK(csv(rs) == csv(run_p_sweep(c)));
    setenv("IGS_THREADS", "3", 1);
    CHECK(csv(rs) == csv(run_p_sweep(c)));
    unsetenv("IGS_THREADS");
  }
  SUBCASE("one expert per trial") {
    const auto a = p_sweep_system(cfg.p_sweep, 1.0, 3);
    const auto b = p_sweep_system(cfg.p_sweep, 5.0, 3);
    const auto c = p_sweep_system(cfg.p_sweep, 1.0, 4);
    CHECK(a.h->to_json() == b.h->to_json());
    CHECK(a.h->to_json() != c.h->to_json());
    CHECK(a.variant == PSystemVariant::kExperiment);
  }
}

TEST_CASE("lq stability") {
  const ExperimentConfig cfg = small_lq();

  SUBCASE("instance") {
    const LqInstance inst = make_lq_instance(cfg.lq, 1e-2, 5);
    CHECK(linalg::spectral_radius(inst.A) == doctest::Approx(cfg.lq.open_loop_rho).epsilon(1e-9));
    CHECK(linalg::spectral_radius(inst.A + inst.B * inst.K) < 1.0);
    const Matrix Q = 1e-2 * Matrix::Identity(3, 3);
    CHECK(linalg::dare_residual(inst.A, inst.B, Q, Matrix::Identity(2, 2), inst.p_star) < 1e-8);
    CHECK(inst.certificate.quadratic_form.has_value());
    const LqInstance other_nu = make_lq_instance(cfg.lq, 1e-4, 5);
    CHECK(other_nu.A == inst.A);
    CHECK(other_nu.B == inst.B);
  }
  SUBCASE("expert goal error matches a direct simulation") {
    const auto rs = run_lq_stability(cfg);
    for (std::uint64_t seed : cfg.trial_seeds()) {
      for (double nu : cfg.lq.nu) {
        const LqInstance inst = make_lq_instance(cfg.lq, nu, seed);
        const Matrix Acl = inst.A + inst.B * inst.K;
        std::vector<double> errs;
        for (Vector x : lq_test_initial_conditions(cfg.lq, seed)) {
          for (std::size_t t = 0; t < cfg.lq.horizon; ++t) x = Acl * x;
          errs.push_back(x.norm());
        }
        const auto& r = find(rs, seed, "expert", "nu=" + format_number(nu), "goal_error");
        CHECK(r.median == doctest::Approx(percentile(errs, 0.5)).epsilon(1e-9));
      }
    }
  }
  SUBCASE("oracle learner reproduces the expert") {
    const auto rs = run_lq_stability(cfg, oracle_learner());
    for (std::uint64_t seed : cfg.trial_seeds())
      for (double nu : cfg.lq.nu) {
        const std::string p = "nu=" + format_number(nu);
        const double expert = find(rs, seed, "expert", p, "goal_error").median;
        CHECK(find(rs, seed, "cmile", p + ";m=10", "goal_error").median ==
              doctest::Approx(expert).epsilon(1e-12));
        CHECK(find(rs, seed, "cmile_lyap", p + ";m=10", "goal_error").median ==
              doctest::Approx(expert).epsilon(1e-12));
      }
  }
  SUBCASE("zero penalty weight equals no penalty") {
    ExperimentConfig c = cfg;
    c.lq.penalty_weight = 0.0;
    const auto rs = run_lq_stability(c);
    for (const auto& r : rs) {
      if (r.algorithm != "cmile_lyap") continue;
      const auto& plain = find(rs, r.seed, "cmile", r.param, r.metric);
      CHECK(plain.median == r.median);
      CHECK(plain.p20 == r.p20);
      CHECK(plain.p80 == r.p80);
    }
  }
}

TEST_CASE("bounds") {
  SUBCASE("zero perturbation") {
    const auto inst = prop6_bounds_instance(1.0, 0.5);
    const auto c = evaluate_input_case(inst, Vector::Constant(1, 2.0),
                                       std::vector<Vector>(16, Vector::Zero(1)));
    CHECK(c.measured == 0.0);
    CHECK(c.gronwall == 0.0);
    CHECK(c.igs == 0.0);
    const auto ic = evaluate_ic_case(inst, Vector::Constant(1, 2.0), Vector::Constant(1, 2.0), 16);
    CHECK(ic.measured == 0.0);
    CHECK(ic.bound == 0.0);
  }
  SUBCASE("measured discrepancy stays below both bounds") {
    Rng rng = make_rng(3);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (const auto& inst : {prop6_bounds_instance(2.0, 0.5), contracting_bounds_instance()}) {
      for (int trial = 0; trial < 200; ++trial) {
        const std::size_t T = 1 + static_cast<std::size_t>(trial % 60);
        std::vector<Vector> inputs(T);
        for (auto& u : inputs) u = Vector::Constant(1, unit(rng));
        const Vector xi = Vector::Constant(1, 5.0 * unit(rng));
        const auto c = evaluate_input_case(inst, xi, inputs);
        CHECK(c.measured <= c.igs + 1e-9);
        CHECK(c.measured <= c.gronwall + 1e-9);
        const auto ic = evaluate_ic_case(inst, xi, Vector::Constant(1, 5.0 * unit(rng)), T);
        CHECK(ic.measured <= ic.bound + 1e-9);
      }
    }
  }
  SUBCASE("the IGS bound beats the Gronwall bound on long horizons") {
    const auto inst = contracting_bounds_instance();
    std::size_t crossover = 0;
    for (std::size_t T = 1; T <= 256; ++T) {
      const auto c = evaluate_input_case(inst, Vector::Zero(1),
                                         std::vector<Vector>(T, Vector::Constant(1, 0.1)));
      if (c.igs >= c.gronwall) crossover = T;
    }
    CHECK(crossover < 64);
  }
  SUBCASE("demo study") {
    std::istringstream ini(
        "[global]\nstudy = bounds_demo\ntrials = 1\n[bounds_demo]\nhorizons = 8, 64\n"
        "magnitudes = 0, 0.5\ncases = 5\n");
    const ExperimentConfig cfg = parse_experiment_config(ini);
    const auto rs = run_experiment(cfg);
    CHECK(rs.size() == 2 * 2 * 10);
    for (const auto& r : rs)
      if (r.param.ends_with(";mag=0"))
        CHECK(r.median == 0.0);
    CHECK(find(rs, 0, "contracting:igs", "T=64;mag=0.5", "disc").median <
          find(rs, 0, "contracting:gronwall", "T=64;mag=0.5", "disc").median);
    CHECK(csv(rs) == csv(run_experiment(cfg)));
  }
}
