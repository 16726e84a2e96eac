#pragma once

#include "igs/dynamics.hpp"
#include "igs/policies.hpp"
#include "igs/rng.hpp"
#include "igs/stability.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace igs {

struct StabilityPenalty {
  IncLyapunov certificate;  // needs value and gradient_x
  double weight = 0.0;
};

struct TrainConfig {
  int epochs = 300;  // optimizer passes over the data
  double learning_rate = 0.01;
  std::size_t batch_size = 512;  // states per minibatch
  std::uint64_t seed = 0;
  std::optional<double> projection_radius;  // |theta|_2 <= radius after every step
  std::optional<StabilityPenalty> stability_penalty;
  LossMode loss_mode = LossMode::kModelBased;
  // Holdout-based early stopping: stop once the holdout loss has increased
  // `early_stopping_patience` times; 0 disables it.
  int early_stopping_patience = 0;
  double holdout_fraction = 0.05;

  // Architecture of freshly initialised learners.
  Eigen::Index hidden = 32;
  Activation activation = Activation::kTanh;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Losses and gradients

// Mean over trajectories of imitation_loss(system, traj, pi, target, mode).
double empirical_loss(const std::vector<Trajectory>& trajs, const DynamicsSystem& system,
                      const Policy& pi, const Policy& target, LossMode mode);

// Gradient in theta of sum over all (non-terminal) states of
// |M(x)(pi(x, theta) - target(x))|_2. Zero residuals contribute 0.
Vector loss_gradient(const std::vector<Trajectory>& trajs, const MlpPolicy& policy,
                     const Policy& target, const DynamicsSystem& system, LossMode mode);

// |empirical_loss(test) - empirical_loss(train)|
double generalization_gap(const std::vector<Trajectory>& train, const std::vector<Trajectory>& test,
                          const DynamicsSystem& system, const Policy& pi, const Policy& target,
                          LossMode mode);

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;

  static AdamState zeros(Eigen::Index n) { return {Vector::Zero(n), Vector::Zero(n), 0}; }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

// One bias-corrected Adam update; `state` is advanced in place.
Vector adam_step(const Vector& params, const Vector& grads, AdamState& state, double lr);

// ---------------------------------------------------------------------------
// Constrained ERM

struct CermTask {
  const DynamicsSystem* system = nullptr;
  const std::vector<Trajectory>* trajs = nullptr;  // rolled out under pi_roll
  PolicyPtr pi_roll;
  PolicyPtr pi_star;
  double c = 0.0;      // trust-region level (logged, not enforced)
  double w = 0.0;      // residual expert weight of the candidate mixture
  double alpha = 1.0;  // mixing rate; enters the closed loop of the stability penalty
  // Starting point; a fresh random_mlp(train.seed) when null.
  std::shared_ptr<const MlpPolicy> warm_start;
  std::uint64_t stream = 0;  // distinguishes shuffling streams between calls
};

struct CermResult {
  std::shared_ptr<const MlpPolicy> policy;
  double train_loss = 0.0;     // empirical loss against pi_star after training
  double penalty = 0.0;        // stability penalty after training (0 when off)
  int optimizer_epochs = 0;    // epochs actually run
};

// Adam over MLP parameters on (1/m) sum_i l_{pi_roll}(xi_i; pi, pi_star), plus
// weight * (1/m) * sum over states of max(0, r(x)) when a stability penalty is
// configured, where r is the decrement residual of the certificate at (x, 0)
// for the closed loop driven by (1/(1-w))[(1-alpha) pi_roll + alpha pi - w pi_star].
// Throws TrainingError naming the batch when the objective becomes non-finite.
CermResult cerm(const CermTask& task, const TrainConfig& train);

// Replaceable learner used by the iterative algorithms.
using Learner = std::function<PolicyPtr(const CermTask&, const TrainConfig&)>;

Learner default_learner();
// Always returns pi_star.
Learner oracle_learner();

// ---------------------------------------------------------------------------
// Iterative algorithms

using IcSampler = std::function<Vector(Rng&)>;

struct CMILeConfig {
  std::size_t trajectories = 250;  // m
  int epochs = 25;                 // E, divides m
  double alpha = 0.15;
  std::size_t horizon = 100;
  // c_1 .. c_{E-2}; when empty, trust values are only logged.
  std::vector<double> trust_constants;
  PolicyPtr expert;
  SystemPtr system;
  IcSampler ic_sampler;
  TrainConfig train;
  std::uint64_t seed = 0;
  // Directory for per-epoch policy checkpoints and the audit CSV; empty = none.
  std::string checkpoint_dir;

  void validate() const;
  // Warnings for the theory-mode step conditions, given Psi and L_Delta.
  std::vector<std::string> theory_warnings(const IgsParams& psi, double l_delta) const;
};

struct EpochRecord {
  int k = 0;
  std::string policy_id;  // data-generating policy
  std::size_t trajectories = 0;
  std::size_t training_trajectories = 0;
  double train_loss = 0.0;
  double trust_value = 0.0;
  std::optional<double> c_k;
  bool trust_exceeded = false;
  double wallclock_ms = 0.0;
};

struct LearnResult {
  PolicyPtr policy;
  std::vector<EpochRecord> records;
  // Data-generating policies pi_0 .. pi_{E-1} followed by the returned policy
  // (mixing algorithms), and the learner output of every epoch.
  std::vector<PolicyPtr> iterates;
  std::vector<PolicyPtr> learned;
};

LearnResult behavior_cloning(const CMILeConfig& cfg, const Learner& learner = default_learner());
LearnResult cmile(const CMILeConfig& cfg, const Learner& learner = default_learner());
LearnResult cmile_agg(const CMILeConfig& cfg, const Learner& learner = default_learner());
LearnResult dagger(const CMILeConfig& cfg, const Learner& learner = default_learner());

// Closed-loop rollouts from the given initial conditions, in index order.
// Divergence is reported as a DivergenceError naming the trajectory.
std::vector<Trajectory> collect_rollouts(const DynamicsSystem& system, const Policy& policy,
                                         const std::vector<Vector>& ics, std::size_t horizon);

// k,train_loss,trust_value,c_k,wallclock_ms
void write_audit_csv(std::ostream& out, const std::vector<EpochRecord>& records);

}  // namespace igs
