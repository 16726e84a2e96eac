#include "igs/learning.hpp"

#include "igs/errors.hpp"
#include "igs/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace igs {

namespace {

// Seed streams shared by all iterative algorithms, so that epoch k of every
// algorithm draws the same initial conditions.
constexpr std::uint64_t kIcStream = 0x1c;
constexpr std::uint64_t kHoldoutStream = 0x401d;
constexpr std::uint64_t kShuffleStream = 0x5f1e;
constexpr std::uint64_t kInitStream = 0x1417;

std::size_t state_count(const std::vector<Trajectory>& trajs) {
  std::size_t n = 0;
  for (const auto& t : trajs) n += t.horizon();
  return n;
}

// Non-terminal states of all trajectories as columns.
Matrix stack_states(const std::vector<Trajectory>& trajs, Eigen::Index n) {
  Matrix X(n, static_cast<Eigen::Index>(state_count(trajs)));
  Eigen::Index j = 0;
  for (const auto& t : trajs)
    for (std::size_t s = 0; s < t.horizon(); ++s) {
      if (t.states[s].size() != n) throw DimensionError("trajectory state has the wrong dimension");
      X.col(j++) = t.states[s];
    }
  return X;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

// Residual norms |M(x_j) r_j| and the matching upstream M'M r_j / |M r_j|.
void residual_terms(const DynamicsSystem& system, LossMode mode, const Matrix& X, const Matrix& R,
                    Vector& norms, Matrix* upstream) {
  const Eigen::Index N = X.cols();
  norms.resize(N);
  if (upstream) upstream->resize(R.rows(), N);
  for (Eigen::Index j = 0; j < N; ++j) {
    if (mode == LossMode::kModelFree) {
      const double nr = R.col(j).norm();
      norms[j] = nr;
      if (upstream) {
        if (nr > 0.0)
          upstream->col(j) = R.col(j) / nr;
        else
          upstream->col(j).setZero();
      }
    } else {
      const Vector x = X.col(j);
      const Vector gr = system.apply_gain(x, R.col(j));
      const double nr = gr.norm();
      norms[j] = nr;
      if (upstream) {
        if (nr > 0.0)
          upstream->col(j) = system.apply_gain_transpose(x, gr) / nr;
        else
          upstream->col(j).setZero();
      }
    }
  }
}

void check_policy_dims(const DynamicsSystem& system, const Policy& pi, const char* name) {
  if (pi.in_dim() != system.state_dim() || pi.out_dim() != system.input_dim())
    throw DimensionError(std::string(name) + ": policy dimensions do not match the system");
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw PreconditionError("train: learning_rate must be positive");
  if (batch_size < 1) throw PreconditionError("train: batch_size must be at least 1");
  if (epochs < 0) throw PreconditionError("train: epochs must be nonnegative");
  if (hidden < 1) throw PreconditionError("train: hidden width must be positive");
  if (projection_radius && !(*projection_radius > 0.0))
    throw PreconditionError("train: projection radius must be positive");
  if (early_stopping_patience < 0) throw PreconditionError("train: patience must be nonnegative");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw PreconditionError("train: holdout fraction must lie in (0, 1)");
  if (stability_penalty) {
    if (!(stability_penalty->weight >= 0.0))
      throw PreconditionError("train: penalty weight must be nonnegative");
    if (!stability_penalty->certificate.value || !stability_penalty->certificate.gradient_x)
      throw PreconditionError("train: penalty certificate needs V and its gradient");
  }
}

// ---------------------------------------------------------------------------

double empirical_loss(const std::vector<Trajectory>& trajs, const DynamicsSystem& system,
                      const Policy& pi, const Policy& target, LossMode mode) {
  if (trajs.empty()) throw PreconditionError("empirical_loss: empty trajectory set");
  double sum = 0.0;
  for (const auto& t : trajs) sum += imitation_loss(system, t, pi, target, mode);
  return sum / static_cast<double>(trajs.size());
}

Vector loss_gradient(const std::vector<Trajectory>& trajs, const MlpPolicy& policy,
                     const Policy& target, const DynamicsSystem& system, LossMode mode) {
  check_policy_dims(system, policy, "loss_gradient");
  check_policy_dims(system, target, "loss_gradient");
  const Matrix X = stack_states(trajs, system.state_dim());
  if (X.cols() == 0) return Vector::Zero(policy.parameter_count());
  const Matrix R = policy.evaluate_batch(X) - target.evaluate_batch(X);
  Vector norms;
  Matrix upstream;
  residual_terms(system, mode, X, R, norms, &upstream);
  return policy.grad_wrt_params_batch(X, upstream);
}

double generalization_gap(const std::vector<Trajectory>& train, const std::vector<Trajectory>& test,
                          const DynamicsSystem& system, const Policy& pi, const Policy& target,
                          LossMode mode) {
  return std::abs(empirical_loss(test, system, pi, target, mode) -
                  empirical_loss(train, system, pi, target, mode));
}

Vector adam_step(const Vector& params, const Vector& grads, AdamState& state, double lr) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: gradient size mismatch");
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw DimensionError("adam_step: optimizer state size mismatch");
  ++state.step;
  state.m = kAdamBeta1 * state.m + (1.0 - kAdamBeta1) * grads;
  state.v = kAdamBeta2 * state.v + (1.0 - kAdamBeta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  const Vector m_hat = state.m / c1;
  const Vector v_hat = state.v / c2;
  return params - lr * (m_hat.array() / (v_hat.array().sqrt() + kAdamEpsilon)).matrix();
}

// ---------------------------------------------------------------------------

namespace {

struct PenaltyData {
  const StabilityPenalty* penalty = nullptr;
  Matrix roll;    // pi_roll at the training states
  double scale_roll = 0.0;  // (1 - alpha) / (1 - w)
  double scale_pi = 0.0;    // alpha / (1 - w)
  double scale_star = 0.0;  // w / (1 - w)
};

struct Objective {
  const DynamicsSystem& system;
  LossMode mode;
  const Matrix& X;
  const Matrix& target;
  const PenaltyData& pen;
};

// Loss (and penalty) on the columns `idx` of the training states, each term
// multiplied by `scale`. Accumulates the parameter gradient when requested.
double batch_objective(const Objective& obj, const MlpPolicy& pi,
                       const std::vector<Eigen::Index>& idx, double scale, Vector* grad,
                       double* penalty_out = nullptr) {
  const Eigen::Index N = static_cast<Eigen::Index>(idx.size());
  Matrix Xb(obj.X.rows(), N);
  Matrix Tb(obj.target.rows(), N);
  for (Eigen::Index j = 0; j < N; ++j) {
    Xb.col(j) = obj.X.col(idx[j]);
    Tb.col(j) = obj.target.col(idx[j]);
  }
  const Matrix out = pi.evaluate_batch(Xb);
  Vector norms;
  Matrix upstream;
  residual_terms(obj.system, obj.mode, Xb, out - Tb, norms, grad ? &upstream : nullptr);
  double value = scale * norms.sum();
  if (grad) upstream *= scale;

  double penalty = 0.0;
  if (obj.pen.penalty) {
    const IncLyapunov& cert = obj.pen.penalty->certificate;
    const double weight = obj.pen.penalty->weight * scale;
    const Vector zero = Vector::Zero(obj.X.rows());
    for (Eigen::Index j = 0; j < N; ++j) {
      const Vector x = Xb.col(j);
      const Vector u = obj.pen.scale_roll * obj.pen.roll.col(idx[j]) +
                       obj.pen.scale_pi * out.col(j) - obj.pen.scale_star * Tb.col(j);
      const Vector next = step_fast(obj.system, x, u);
      const double gap = x.norm();
      const double r = cert.value(next, zero) - cert.value(x, zero) +
                       cert.frak_a * std::min(std::pow(gap, cert.a0), std::pow(gap, cert.a1));
      if (r > 0.0) {
        penalty += weight * r;
        if (grad)
          upstream.col(j) += weight * obj.pen.scale_pi *
                             obj.system.apply_gain_transpose(x, cert.gradient_x(next, zero));
      }
    }
  }
  if (penalty_out) *penalty_out = penalty;
  if (grad) *grad = pi.grad_wrt_params_batch(Xb, upstream);
  return value + penalty;
}

}  // namespace

CermResult cerm(const CermTask& task, const TrainConfig& train) {
  train.validate();
  if (!task.system || !task.trajs || !task.pi_roll || !task.pi_star)
    throw PreconditionError("cerm: incomplete task");
  if (task.trajs->empty()) throw PreconditionError("cerm: empty trajectory set");
  if (!(task.w >= 0.0 && task.w < 1.0)) throw PreconditionError("cerm: w must lie in [0, 1)");
  if (!(task.alpha > 0.0 && task.alpha <= 1.0))
    throw PreconditionError("cerm: alpha must lie in (0, 1]");
  const DynamicsSystem& system = *task.system;
  check_policy_dims(system, *task.pi_roll, "cerm pi_roll");
  check_policy_dims(system, *task.pi_star, "cerm pi_star");

  MlpPolicy pi = task.warm_start ? *task.warm_start
                                 : random_mlp(system.state_dim(), train.hidden, system.input_dim(),
                                              train.activation,
                                              derive_seed(train.seed, kInitStream, task.stream));
  check_policy_dims(system, pi, "cerm warm start");

  const Matrix X = stack_states(*task.trajs, system.state_dim());
  const Matrix target = task.pi_star->evaluate_batch(X);
  const double m = static_cast<double>(task.trajs->size());

  PenaltyData pen;
  if (train.stability_penalty && train.stability_penalty->weight != 0.0) {
    pen.penalty = &*train.stability_penalty;
    pen.roll = task.pi_roll->evaluate_batch(X);
    pen.scale_roll = (1.0 - task.alpha) / (1.0 - task.w);
    pen.scale_pi = task.alpha / (1.0 - task.w);
    pen.scale_star = task.w / (1.0 - task.w);
  }
  const Objective obj{system, train.loss_mode, X, target, pen};

  // Training / holdout split of the state columns.
  std::vector<Eigen::Index> train_idx(static_cast<std::size_t>(X.cols()));
  std::iota(train_idx.begin(), train_idx.end(), Eigen::Index{0});
  std::vector<Eigen::Index> holdout_idx;
  if (train.early_stopping_patience > 0 && X.cols() >= 2) {
    Rng rng = make_rng(derive_seed(train.seed, kHoldoutStream, task.stream));
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    const auto n_hold = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(train.holdout_fraction * X.cols())));
    holdout_idx.assign(train_idx.end() - static_cast<std::ptrdiff_t>(n_hold), train_idx.end());
    train_idx.resize(train_idx.size() - n_hold);
    std::sort(train_idx.begin(), train_idx.end());
  }

  Vector theta = pi.parameters();
  AdamState adam = AdamState::zeros(theta.size());
  Vector best_theta = theta;
  double best_holdout = std::numeric_limits<double>::infinity();
  double last_holdout = std::numeric_limits<double>::infinity();
  int increases = 0;
  int epochs_run = 0;
  std::size_t batch_id = 0;
  std::vector<Eigen::Index> order = train_idx;
  std::vector<Eigen::Index> batch;

  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    Rng rng = make_rng(derive_seed(train.seed, derive_seed(kShuffleStream, task.stream), epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += train.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + train.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                   order.begin() + static_cast<std::ptrdiff_t>(hi));
      // Unbiased minibatch estimate of the (1/m)-normalized objective.
      const double scale =
          static_cast<double>(X.cols()) / (m * static_cast<double>(batch.size()));
      Vector grad;
      const double value = batch_objective(obj, pi, batch, scale, &grad);
      if (!std::isfinite(value) || !grad.allFinite())
        throw TrainingError("cerm: non-finite objective in batch " + std::to_string(batch_id),
                            batch_id);
      theta = adam_step(theta, grad, adam, train.learning_rate);
      if (train.projection_radius) {
        const double norm = theta.norm();
        if (norm > *train.projection_radius) theta *= *train.projection_radius / norm;
      }
      pi = pi.with_parameters(theta);
      ++batch_id;
    }
    epochs_run = epoch + 1;
    if (!holdout_idx.empty()) {
      const double h = batch_objective(obj, pi, holdout_idx, 1.0, nullptr);
      if (h < best_holdout) {
        best_holdout = h;
        best_theta = theta;
      }
      if (h > last_holdout && ++increases >= train.early_stopping_patience) break;
      last_holdout = h;
    }
  }
  if (!holdout_idx.empty() && std::isfinite(best_holdout)) pi = pi.with_parameters(best_theta);

  CermResult result;
  result.optimizer_epochs = epochs_run;
  result.train_loss = empirical_loss(*task.trajs, system, pi, *task.pi_star, train.loss_mode);
  if (pen.penalty) {
    double penalty = 0.0;
    std::vector<Eigen::Index> all(static_cast<std::size_t>(X.cols()));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    batch_objective(obj, pi, all, 1.0 / m, nullptr, &penalty);
    result.penalty = penalty;
  }
  result.policy = std::make_shared<const MlpPolicy>(std::move(pi));
  return result;
}

Learner default_learner() {
  return [](const CermTask& task, const TrainConfig& train) -> PolicyPtr {
    return cerm(task, train).policy;
  };
}

Learner oracle_learner() {
  return [](const CermTask& task, const TrainConfig&) { return task.pi_star; };
}

// ---------------------------------------------------------------------------

void CMILeConfig::validate() const {
  if (trajectories < 1) throw PreconditionError("cmile: m must be positive");
  if (epochs < 1) throw PreconditionError("cmile: E must be positive");
  if (trajectories % static_cast<std::size_t>(epochs) != 0)
    throw PreconditionError("cmile: E must divide m");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw PreconditionError("cmile: alpha must lie in (0, 1]");
  if (horizon < 1) throw PreconditionError("cmile: horizon must be at least 1");
  if (!expert || !system || !ic_sampler)
    throw PreconditionError("cmile: expert, system and initial-condition sampler are required");
  check_policy_dims(*system, *expert, "cmile expert");
  if (!trust_constants.empty() &&
      trust_constants.size() != static_cast<std::size_t>(std::max(epochs - 2, 0)))
    throw PreconditionError("cmile: expected E-2 trust constants");
  for (double c : trust_constants)
    if (!(c >= 0.0)) throw PreconditionError("cmile: trust constants must be nonnegative");
  train.validate();
}

std::vector<std::string> CMILeConfig::theory_warnings(const IgsParams& psi, double l_delta) const {
  std::vector<std::string> out;
  const double e_min = std::log(1.0 / alpha) / alpha;
  if (static_cast<double>(epochs) < e_min) {
    std::ostringstream os;
    os << "E = " << epochs << " is below (1/alpha) log(1/alpha) = " << e_min;
    out.push_back(os.str());
  }
  const double T = static_cast<double>(horizon);
  const double alpha_max = std::min(
      0.5, 1.0 / (l_delta * std::pow(psi.gamma, 1.0 / psi.a) * std::pow(T, 1.0 - 1.0 / psi.a1)));
  if (alpha > alpha_max) {
    std::ostringstream os;
    os << "alpha = " << alpha << " exceeds the step limit " << alpha_max;
    out.push_back(os.str());
  }
  return out;
}

std::vector<Trajectory> collect_rollouts(const DynamicsSystem& system, const Policy& policy,
                                         const std::vector<Vector>& ics, std::size_t horizon) {
  std::vector<Trajectory> out(ics.size());
  parallel_for(ics.size(), [&](std::size_t i) {
    try {
      out[i] = rollout_closed(system, policy, ics[i], horizon);
    } catch (const DivergenceError& e) {
      throw DivergenceError("trajectory " + std::to_string(i) + ": " + e.what(), i);
    }
  });
  return out;
}

void write_audit_csv(std::ostream& out, const std::vector<EpochRecord>& records) {
  out << "k,train_loss,trust_value,c_k,wallclock_ms\n";
  char buf[64];
  for (const auto& r : records) {
    out << r.k << ',';
    std::snprintf(buf, sizeof buf, "%.10g", r.train_loss);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.10g", r.trust_value);
    out << buf << ',';
    if (r.c_k) {
      std::snprintf(buf, sizeof buf, "%.10g", *r.c_k);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.3f\n", r.wallclock_ms);
    out << buf;
  }
}

namespace {

std::vector<Vector> draw_ics(const CMILeConfig& cfg, int k, std::size_t count) {
  Rng rng = make_rng(derive_seed(cfg.seed, kIcStream, static_cast<std::uint64_t>(k)));
  std::vector<Vector> ics;
  ics.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Vector xi = cfg.ic_sampler(rng);
    if (xi.size() != cfg.system->state_dim())
      throw DimensionError("initial-condition sampler returned the wrong dimension");
    ics.push_back(std::move(xi));
  }
  return ics;
}

std::vector<Trajectory> epoch_rollouts(const CMILeConfig& cfg, const Policy& policy, int k) {
  const std::size_t per = cfg.trajectories / static_cast<std::size_t>(cfg.epochs);
  try {
    return collect_rollouts(*cfg.system, policy, draw_ics(cfg, k, per), cfg.horizon);
  } catch (const DivergenceError& e) {
    throw DivergenceError("epoch " + std::to_string(k) + ", " + e.what(), e.index());
  }
}

void write_checkpoint(const CMILeConfig& cfg, const std::string& name, const Policy& policy) {
  if (cfg.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  std::ofstream out(std::filesystem::path(cfg.checkpoint_dir) / (name + ".json"));
  out << policy.to_json().dump() << '\n';
}

void write_audit(const CMILeConfig& cfg, const std::vector<EpochRecord>& records) {
  if (cfg.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  std::ofstream out(std::filesystem::path(cfg.checkpoint_dir) / "audit.csv");
  write_audit_csv(out, records);
}

struct MixingRun {
  LearnResult result;
  PolicyPtr last_hat;
};

MixingRun run_mixing(const CMILeConfig& cfg, const Learner& learner, bool aggregate) {
  cfg.validate();
  const LossMode mode = cfg.train.loss_mode;
  const DynamicsSystem& system = *cfg.system;
  const double a = cfg.alpha;
  const int E = cfg.epochs;
  const double residual_weight = std::pow(1.0 - a, E);

  MixingRun run;
  PolicyPtr pi = cfg.expert;
  std::shared_ptr<const MlpPolicy> last_learned;
  std::vector<Trajectory> pool;

  for (int k = 0; k < E; ++k) {
    const auto start = std::chrono::steady_clock::now();
    const bool final_epoch = k == E - 1;
    std::vector<Trajectory> trajs = epoch_rollouts(cfg, *pi, k);
    run.result.iterates.push_back(pi);

    EpochRecord rec;
    rec.k = k;
    rec.policy_id = "pi_" + std::to_string(k);
    rec.trajectories = trajs.size();
    double c = 0.0;
    if (final_epoch) {
      c = residual_weight / a * empirical_loss(trajs, system, *pi, *cfg.expert, mode);
      rec.c_k = c;
    } else if (k == 0) {
      rec.c_k = 0.0;
    } else if (!cfg.trust_constants.empty()) {
      c = cfg.trust_constants[static_cast<std::size_t>(k - 1)];
      rec.c_k = c;
    }

    if (aggregate) pool.insert(pool.end(), trajs.begin(), trajs.end());
    const std::vector<Trajectory>& data = aggregate ? pool : trajs;
    rec.training_trajectories = data.size();

    CermTask task;
    task.system = &system;
    task.trajs = &data;
    task.pi_roll = pi;
    task.pi_star = cfg.expert;
    task.c = c;
    task.w = final_epoch ? residual_weight : 0.0;
    task.alpha = a;
    task.warm_start = last_learned;
    task.stream = static_cast<std::uint64_t>(k);
    PolicyPtr hat = learner(task, cfg.train);
    if (!hat) throw PreconditionError("learner returned no policy");
    check_policy_dims(system, *hat, "learner output");
    if (auto mlp = std::dynamic_pointer_cast<const MlpPolicy>(hat)) last_learned = mlp;

    rec.train_loss = empirical_loss(data, system, *hat, *cfg.expert, mode);
    rec.trust_value = empirical_loss(trajs, system, *hat, *pi, mode);
    rec.trust_exceeded = rec.c_k && rec.trust_value > *rec.c_k;

    if (final_epoch)
      pi = demix_final(pi, hat, cfg.expert, a, E);
    else
      pi = mix(pi, hat, a);
    run.last_hat = hat;
    run.result.learned.push_back(hat);
    write_checkpoint(cfg, "policy_" + std::to_string(k + 1), *pi);
    rec.wallclock_ms = elapsed_ms(start);
    run.result.records.push_back(std::move(rec));
  }
  run.result.policy = pi;
  run.result.iterates.push_back(pi);
  write_audit(cfg, run.result.records);
  return run;
}

}  // namespace

LearnResult behavior_cloning(const CMILeConfig& cfg, const Learner& learner) {
  CMILeConfig bc = cfg;
  bc.epochs = 1;
  bc.alpha = 1.0;
  bc.trust_constants.clear();
  MixingRun run = run_mixing(bc, learner, false);
  run.result.policy = run.last_hat;
  return run.result;
}

LearnResult cmile(const CMILeConfig& cfg, const Learner& learner) {
  return run_mixing(cfg, learner, false).result;
}

LearnResult cmile_agg(const CMILeConfig& cfg, const Learner& learner) {
  return run_mixing(cfg, learner, true).result;
}

LearnResult dagger(const CMILeConfig& cfg, const Learner& learner) {
  cfg.validate();
  const LossMode mode = cfg.train.loss_mode;
  const DynamicsSystem& system = *cfg.system;
  const Eigen::Index n = system.state_dim();

  std::vector<Trajectory> pool;
  std::vector<Vector> validation;
  std::vector<PolicyPtr> candidates;
  LearnResult result;
  PolicyPtr hat;

  for (int k = 0; k < cfg.epochs; ++k) {
    const auto start = std::chrono::steady_clock::now();
    const double beta = std::pow(1.0 - cfg.alpha, k);
    PolicyPtr roll = k == 0 ? cfg.expert
                            : std::make_shared<const AffinePolicy>(std::vector<PolicyTerm>{
                                  {beta, cfg.expert}, {1.0 - beta, hat}});
    std::vector<Trajectory> trajs = epoch_rollouts(cfg, *roll, k);

    // Hold out a fixed fraction of this epoch's visited states.
    const std::size_t total = state_count(trajs);
    const auto n_hold = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(cfg.train.holdout_fraction * total)));
    std::vector<std::size_t> perm(total);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = make_rng(derive_seed(cfg.seed, kHoldoutStream, static_cast<std::uint64_t>(k)));
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<char> held(total, 0);
    if (n_hold < total)
      for (std::size_t i = 0; i < n_hold; ++i) held[perm[i]] = 1;
    std::size_t flat = 0;
    for (const auto& t : trajs) {
      Trajectory kept;
      kept.initial_condition = t.initial_condition;
      for (std::size_t s = 0; s < t.horizon(); ++s, ++flat) {
        if (held[flat]) {
          validation.push_back(t.states[s]);
        } else {
          kept.states.push_back(t.states[s]);
          kept.inputs.push_back(t.inputs[s]);
        }
      }
      if (kept.inputs.empty()) continue;
      kept.states.push_back(t.states.back());
      pool.push_back(std::move(kept));
    }

    CermTask task;
    task.system = &system;
    task.trajs = &pool;
    task.pi_roll = roll;
    task.pi_star = cfg.expert;
    task.alpha = 1.0;
    task.stream = static_cast<std::uint64_t>(k);
    hat = learner(task, cfg.train);
    if (!hat) throw PreconditionError("learner returned no policy");
    check_policy_dims(system, *hat, "learner output");
    candidates.push_back(hat);
    result.iterates.push_back(roll);
    result.learned.push_back(hat);

    EpochRecord rec;
    rec.k = k;
    rec.policy_id = k == 0 ? "expert" : "beta_mix_" + std::to_string(k);
    rec.trajectories = trajs.size();
    rec.training_trajectories = pool.size();
    rec.train_loss = empirical_loss(pool, system, *hat, *cfg.expert, mode);
    rec.trust_value = empirical_loss(trajs, system, *hat, *roll, mode);
    write_checkpoint(cfg, "policy_" + std::to_string(k + 1), *hat);
    rec.wallclock_ms = elapsed_ms(start);
    result.records.push_back(std::move(rec));
  }

  // Best candidate on the pooled validation states; earliest wins ties.
  Matrix V(n, static_cast<Eigen::Index>(validation.size()));
  for (std::size_t j = 0; j < validation.size(); ++j)
    V.col(static_cast<Eigen::Index>(j)) = validation[j];
  const Matrix star = cfg.expert->evaluate_batch(V);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& cand : candidates) {
    Vector norms;
    residual_terms(system, mode, V, cand->evaluate_batch(V) - star, norms, nullptr);
    const double loss = V.cols() > 0 ? norms.mean() : 0.0;
    if (loss < best || !result.policy) {
      best = loss;
      result.policy = cand;
    }
  }
  result.iterates.push_back(result.policy);
  write_audit(cfg, result.records);
  return result;
}

}  // namespace igs
