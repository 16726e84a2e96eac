#pragma once

#include "igs/errors.hpp"
#include "igs/linalg.hpp"
#include "igs/policies.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace igs {

// Known regularity constants of a system, when available.
struct SystemBounds {
  std::optional<double> input_gain_bound;  // sup_x |g(x)|_op
  std::optional<double> lipschitz;
};

// Discrete-time control-affine system x' = f(x) + g(x) u.
class DynamicsSystem {
 public:
  DynamicsSystem(Eigen::Index state_dim, Eigen::Index input_dim, SystemBounds bounds = {},
                 bool zero_fixed_point = true);
  virtual ~DynamicsSystem() = default;

  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index input_dim() const { return input_dim_; }
  const SystemBounds& bounds() const { return bounds_; }
  // Whether the system is declared to satisfy f(0) = 0.
  bool zero_fixed_point() const { return zero_fixed_point_; }

  virtual std::string name() const = 0;
  virtual Vector drift(const Vector& x) const = 0;
  virtual Matrix input_gain(const Vector& x) const = 0;

  // g(x) u and g(x)' w; overridden where g has structure (diagonal, constant).
  virtual Vector apply_gain(const Vector& x, const Vector& u) const;
  virtual Vector apply_gain_transpose(const Vector& x, const Vector& w) const;

  // f(x) + g(x) u with dimension checks naming the offending argument.
  Vector step(const Vector& x, const Vector& u) const;

 protected:
  virtual Vector step_unchecked(const Vector& x, const Vector& u) const;
  void check_state(const Vector& x, const char* name) const;

 private:
  Eigen::Index state_dim_;
  Eigen::Index input_dim_;
  SystemBounds bounds_;
  bool zero_fixed_point_;

  friend Vector step_fast(const DynamicsSystem&, const Vector&, const Vector&);
};

using SystemPtr = std::shared_ptr<const DynamicsSystem>;

// Unchecked step for inner loops whose shapes were validated up front.
inline Vector step_fast(const DynamicsSystem& s, const Vector& x, const Vector& u) {
  return s.step_unchecked(x, u);
}

// System given by a pair of callables.
class FunctionSystem final : public DynamicsSystem {
 public:
  using DriftFn = std::function<Vector(const Vector&)>;
  using GainFn = std::function<Matrix(const Vector&)>;

  FunctionSystem(Eigen::Index state_dim, Eigen::Index input_dim, DriftFn drift, GainFn gain,
                 std::string name = "function", SystemBounds bounds = {},
                 bool zero_fixed_point = true);

  std::string name() const override { return name_; }
  Vector drift(const Vector& x) const override { return drift_(x); }
  Matrix input_gain(const Vector& x) const override;

 private:
  DriftFn drift_;
  GainFn gain_;
  std::string name_;
};

// x' = A x + B u.
class LtiSystem final : public DynamicsSystem {
 public:
  LtiSystem(Matrix A, Matrix B);

  std::string name() const override { return "lti"; }
  const Matrix& A() const { return a_; }
  const Matrix& B() const { return b_; }
  Vector drift(const Vector& x) const override { return a_ * x; }
  Matrix input_gain(const Vector&) const override { return b_; }
  Vector apply_gain(const Vector&, const Vector& u) const override { return b_ * u; }
  Vector apply_gain_transpose(const Vector&, const Vector& w) const override {
    return b_.transpose() * w;
  }

 protected:
  Vector step_unchecked(const Vector& x, const Vector& u) const override {
    return a_ * x + b_ * u;
  }

 private:
  Matrix a_;
  Matrix b_;
};

std::shared_ptr<const LtiSystem> make_lti(const Matrix& A, const Matrix& B);

enum class PSystemVariant {
  // Scalar-form update x - eta x|x|^p / (1 + |x|^p) + eta u, applied per
  // coordinate; input gain eta I.
  kProp6,
  // Element-wise x - eta x|x|^p / (1 + eta |x|^p) + (h(x) + u) / (1 + |x|^p).
  kExperiment,
};

struct PSystemSpec {
  double p = 1.0;
  double eta = 0.5;
  PSystemVariant variant = PSystemVariant::kProp6;
  Eigen::Index dim = 1;
  PolicyPtr h;  // experiment variant only; null means h = 0
};

class PSystem final : public DynamicsSystem {
 public:
  explicit PSystem(PSystemSpec spec);

  std::string name() const override;
  const PSystemSpec& spec() const { return spec_; }
  Vector drift(const Vector& x) const override;
  Matrix input_gain(const Vector& x) const override;
  Vector apply_gain(const Vector& x, const Vector& u) const override;
  Vector apply_gain_transpose(const Vector& x, const Vector& w) const override;

  // Drift of the expert closed loop (pi* = -h), i.e. without the h term.
  Vector expert_closed_loop_drift(const Vector& x) const;
  // Diagonal of the input gain at x.
  Vector gain_diagonal(const Vector& x) const;

 private:
  PSystemSpec spec_;
};

// Largest admissible step size 4 / (5 + p) (exclusive) of the scalar p-system.
double p_system_eta_limit(double p);

// Throws PreconditionError when eta is outside (0, 4/(5+p)) for the prop6
// variant. The experiment variant keeps its fixed coefficient for every p.
std::shared_ptr<const PSystem> make_p_system(const PSystemSpec& spec);

// Expert for the experiment variant: pi* = -h (exact negation of the output
// layer when h is an MLP). For the prop6 variant the expert is u = 0.
PolicyPtr p_system_expert(const PSystemSpec& spec);

// h(x) = x |x|^p / (1 + |x|^p) of the scalar p-system.
double p_system_h(double x, double p);

// System f(x) + g(x) pi(x) driven additively by v (input gain = identity).
class ClosedLoopSystem final : public DynamicsSystem {
 public:
  ClosedLoopSystem(SystemPtr open_loop, PolicyPtr policy);

  std::string name() const override { return "closed_loop(" + open_loop_->name() + ")"; }
  Vector drift(const Vector& x) const override;
  Matrix input_gain(const Vector&) const override;
  Vector apply_gain(const Vector&, const Vector& v) const override { return v; }
  Vector apply_gain_transpose(const Vector&, const Vector& w) const override { return w; }

 private:
  SystemPtr open_loop_;
  PolicyPtr policy_;
};

enum class ContractingKind { kLogSystem, kGradientDescent, kPiecewiseLinear };

using MetricFn = std::function<Matrix(const Vector&)>;

struct ContractingExample {
  SystemPtr system;
  MetricFn metric;
  ContractingKind kind;
  double mu_lo = 1.0;  // mu_lo I <= M(x) <= mu_hi I
  double mu_hi = 1.0;
  double input_lipschitz = 1.0;  // |f(x,u) - f(x,0)| <= L_u |u|
};

struct ContractingParams {
  Eigen::Index dim = 1;
  // gradient_descent: potential V(x) = x'Qx/2 with step eta in (0, 1/lambda_max(Q)].
  Matrix quadratic;
  double eta = 0.0;
  // piecewise_linear: f(x, u) = A_{region(x)} x + B u with common certificate P.
  std::vector<Matrix> modes;
  std::function<std::size_t(const Vector&)> region;
  Matrix input_matrix;
  Matrix certificate;
};

// log_system: f(x,u) = log(1 + x^2) + u element-wise, M(x) = diag(2 / (1 + exp(-|x_i|))).
// gradient_descent: f(x,u) = x - eta (Qx + u), M = I.
// piecewise_linear: M = P.
ContractingExample make_contracting_example(ContractingKind kind, const ContractingParams& params);

// phi_0 .. phi_T and u_0 .. u_{T-1} of one rollout.
struct Trajectory {
  Vector initial_condition;
  std::vector<Vector> states;
  std::vector<Vector> inputs;

  std::size_t horizon() const { return inputs.size(); }
};

// Thrown when a rollout leaves the finite region (|x_i| > 1e9 or NaN). Carries
// the prefix of the trajectory up to the last finite state.
class RolloutDivergence : public DivergenceError {
 public:
  RolloutDivergence(const std::string& what, std::size_t index, Trajectory partial)
      : DivergenceError(what, index), partial_(std::move(partial)) {}
  const Trajectory& partial() const { return partial_; }

 private:
  Trajectory partial_;
};

inline constexpr double kDivergenceGuard = 1e9;

Trajectory rollout_closed(const DynamicsSystem& system, const Policy& policy, const Vector& xi,
                          std::size_t horizon);
Trajectory rollout_open(const DynamicsSystem& system, const Vector& xi,
                        const std::vector<Vector>& inputs);

// Maximum per-step deviation when replaying the recorded inputs.
double replay_error(const DynamicsSystem& system, const Trajectory& trajectory);

// CSV with header t,x_0..x_{n-1},u_0..u_{d-1}; the u cells are blank at t = T.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);
Trajectory read_trajectory_csv(std::istream& in);

}  // namespace igs
