#pragma once

#include "igs/dynamics.hpp"
#include "igs/learning.hpp"
#include "igs/stability.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace igs {

enum class Study { kPSweep, kLqStability, kBoundsDemo };

std::string to_string(Study s);
Study study_from_string(const std::string& s);

struct PSweepConfig {
  std::vector<double> p{1.0, 3.0, 5.0};
  std::size_t m = 100;
  std::size_t horizon = 50;
  int epochs = 25;
  double alpha = 0.15;
  Eigen::Index dim = 10;
  Eigen::Index expert_hidden = 32;
  Eigen::Index learner_hidden = 32;
  int train_epochs = 300;
  double learning_rate = 0.01;
  std::size_t batch_size = 512;
  std::size_t test_rollouts = 100;
  // Training loss; evaluation always uses the model-based loss.
  LossMode loss_mode = LossMode::kModelFree;
  // Any of bc, cmile, cmile_agg, dagger.
  std::vector<std::string> algorithms{"bc", "cmile", "cmile_agg", "dagger"};
};

struct LqStabilityConfig {
  Eigen::Index n = 10;
  Eigen::Index d = 4;
  std::size_t horizon = 25;
  double open_loop_rho = 1.5;  // A is rescaled to this spectral radius
  double ic_std = 2.0;         // N(0, 4)
  std::vector<double> nu{1e-4, 1e-2};
  std::vector<std::size_t> budgets{20, 200};
  int epochs = 10;
  double alpha = 0.2;
  Eigen::Index hidden = 32;
  int train_epochs = 500;
  double learning_rate = 0.01;
  std::size_t batch_size = 512;
  double penalty_weight = 1.0;
  double certificate_eps = 1e-3;
  std::size_t test_rollouts = 100;
};

struct BoundsDemoConfig {
  double p = 1.0;
  double eta = 0.5;
  std::vector<std::size_t> horizons{8, 16, 32, 64, 128};
  std::vector<double> magnitudes{0.0, 0.01, 0.1, 1.0};
  std::size_t cases = 50;
  double ic_radius = 5.0;
};

struct ExperimentConfig {
  Study study = Study::kPSweep;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // overrides seed .. seed + trials - 1
  std::size_t trials = 5;
  bool full_scale = false;
  std::string output = "results.csv";
  PSweepConfig p_sweep;
  LqStabilityConfig lq;
  BoundsDemoConfig bounds;

  std::vector<std::uint64_t> trial_seeds() const;
  void validate() const;
};

// INI file with sections [global], [p_sweep], [lq_stability], [bounds_demo].
// Overrides are "section.key=value" and win over the file and IGS_SEED.
// Lists are comma separated. Unknown keys are rejected.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});
ExperimentConfig parse_experiment_config(std::istream& in,
                                         const std::vector<std::string>& overrides = {});

struct ResultRecord {
  std::string study;
  std::uint64_t seed = 0;
  std::string algorithm;
  std::string param;
  std::string metric;
  double median = 0.0;
  double p20 = 0.0;
  double p80 = 0.0;
};

// Linear interpolation between closest ranks, q in [0, 1].
double percentile(std::vector<double> values, double q);
ResultRecord summarize(std::string study, std::uint64_t seed, std::string algorithm,
                       std::string param, std::string metric, const std::vector<double>& values);

std::string format_number(double x);  // %.10g
void write_results_csv(std::ostream& out, const std::vector<ResultRecord>& records);

// ---------------------------------------------------------------------------
// Studies

// Experiment p-system with an expert h drawn from the trial seed; the same h
// is used for every p of one trial.
PSystemSpec p_sweep_system(const PSweepConfig& cfg, double p, std::uint64_t seed);

// Learning setup shared by the sweep and the train command: N(0, I) initial
// conditions, tanh learner, streams derived from the trial seed.
CMILeConfig p_sweep_learning_config(const PSweepConfig& cfg, SystemPtr system, PolicyPtr expert,
                                    std::uint64_t seed);

// bc, cmile, cmile_agg or dagger.
LearnResult run_algorithm(const std::string& name, const CMILeConfig& cfg,
                          const Learner& learner = default_learner());

std::vector<ResultRecord> run_p_sweep(const ExperimentConfig& cfg,
                                      const Learner& learner = default_learner());

struct LqInstance {
  Matrix A;
  Matrix B;
  Matrix K;
  Matrix p_star;
  IncLyapunov certificate;
};
// Random unstable (A, B) for the seed and the LQR expert for Q = nu I, R = I.
LqInstance make_lq_instance(const LqStabilityConfig& cfg, double nu, std::uint64_t seed);

// Test initial conditions of one seed, N(0, ic_std^2 I).
std::vector<Vector> lq_test_initial_conditions(const LqStabilityConfig& cfg, std::uint64_t seed);

std::vector<ResultRecord> run_lq_stability(const ExperimentConfig& cfg,
                                           const Learner& learner = default_learner());

struct BoundsInstance {
  std::string name;
  SystemPtr system;
  IgsParams psi;
  double lipschitz = 1.0;
  double bound = 1.0;
  double gain = 1.0;  // |g| so that the imitation loss is gain * sum |u_t|
};
BoundsInstance prop6_bounds_instance(double p, double eta);
// x' = 0.5 x + u
BoundsInstance contracting_bounds_instance();

struct InputBoundCase {
  double measured = 0.0;
  double gronwall = 0.0;
  double igs = 0.0;
};
// Same initial condition, inputs versus zero input.
InputBoundCase evaluate_input_case(const BoundsInstance& inst, const Vector& xi,
                                   const std::vector<Vector>& inputs);

struct IcBoundCase {
  double measured = 0.0;
  double bound = 0.0;
};
// Zero input from two initial conditions.
IcBoundCase evaluate_ic_case(const BoundsInstance& inst, const Vector& xi1, const Vector& xi2,
                             std::size_t horizon);

std::vector<ResultRecord> run_bounds_demo(const ExperimentConfig& cfg);

std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg);

}  // namespace igs
