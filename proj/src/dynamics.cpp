#include "igs/dynamics.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace igs {

DynamicsSystem::DynamicsSystem(Eigen::Index state_dim, Eigen::Index input_dim,
                               SystemBounds bounds, bool zero_fixed_point)
    : state_dim_(state_dim),
      input_dim_(input_dim),
      bounds_(bounds),
      zero_fixed_point_(zero_fixed_point) {
  if (state_dim <= 0 || input_dim <= 0)
    throw DimensionError("system dimensions must be positive");
}

Vector DynamicsSystem::apply_gain(const Vector& x, const Vector& u) const {
  return input_gain(x) * u;
}

Vector DynamicsSystem::apply_gain_transpose(const Vector& x, const Vector& w) const {
  return input_gain(x).transpose() * w;
}

void DynamicsSystem::check_state(const Vector& x, const char* name) const {
  if (x.size() != state_dim_) {
    std::ostringstream os;
    os << "state " << name << " has dimension " << x.size() << ", system " << this->name()
       << " expects " << state_dim_;
    throw DimensionError(os.str());
  }
}

Vector DynamicsSystem::step(const Vector& x, const Vector& u) const {
  check_state(x, "x");
  if (u.size() != input_dim_) {
    std::ostringstream os;
    os << "input u has dimension " << u.size() << ", system " << name() << " expects "
       << input_dim_;
    throw DimensionError(os.str());
  }
  return step_unchecked(x, u);
}

Vector DynamicsSystem::step_unchecked(const Vector& x, const Vector& u) const {
  return drift(x) + apply_gain(x, u);
}

// ---------------------------------------------------------------------------

FunctionSystem::FunctionSystem(Eigen::Index state_dim, Eigen::Index input_dim, DriftFn drift,
                               GainFn gain, std::string name, SystemBounds bounds,
                               bool zero_fixed_point)
    : DynamicsSystem(state_dim, input_dim, bounds, zero_fixed_point),
      drift_(std::move(drift)),
      gain_(std::move(gain)),
      name_(std::move(name)) {}

Matrix FunctionSystem::input_gain(const Vector& x) const {
  Matrix g = gain_(x);
  if (g.rows() != state_dim() || g.cols() != input_dim()) {
    std::ostringstream os;
    os << "input gain of " << name_ << " returned " << g.rows() << "x" << g.cols()
       << ", expected " << state_dim() << "x" << input_dim();
    throw DimensionError(os.str());
  }
  return g;
}

// ---------------------------------------------------------------------------

LtiSystem::LtiSystem(Matrix A, Matrix B)
    : DynamicsSystem(A.rows(), B.cols(),
                     SystemBounds{linalg::operator_norm(B), linalg::operator_norm(A)}),
      a_(std::move(A)),
      b_(std::move(B)) {
  linalg::require_square(a_, "A");
  if (b_.rows() != a_.rows()) throw DimensionError("B must have as many rows as A");
}

std::shared_ptr<const LtiSystem> make_lti(const Matrix& A, const Matrix& B) {
  if (A.rows() == 0 || B.cols() == 0) throw DimensionError("make_lti: empty A or B");
  linalg::require_square(A, "A");
  if (B.rows() != A.rows()) throw DimensionError("make_lti: B must have as many rows as A");
  return std::make_shared<const LtiSystem>(A, B);
}

// ---------------------------------------------------------------------------

double p_system_eta_limit(double p) { return 4.0 / (5.0 + p); }

double p_system_h(double x, double p) {
  const double ap = std::pow(std::abs(x), p);
  return x * ap / (1.0 + ap);
}

namespace {

SystemBounds p_system_bounds(const PSystemSpec& s) {
  if (s.variant == PSystemVariant::kProp6) return SystemBounds{s.eta, 1.0};
  return SystemBounds{1.0, std::nullopt};
}

}  // namespace

PSystem::PSystem(PSystemSpec spec)
    : DynamicsSystem(spec.dim, spec.dim, p_system_bounds(spec)), spec_(std::move(spec)) {}

std::string PSystem::name() const {
  std::ostringstream os;
  os << (spec_.variant == PSystemVariant::kProp6 ? "p_system_prop6" : "p_system_experiment")
     << "(p=" << spec_.p << ")";
  return os.str();
}

Vector PSystem::expert_closed_loop_drift(const Vector& x) const {
  Vector out(x.size());
  const double eta = spec_.eta;
  const double p = spec_.p;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double ap = std::pow(std::abs(x[i]), p);
    if (spec_.variant == PSystemVariant::kProp6)
      out[i] = x[i] - eta * x[i] * ap / (1.0 + ap);
    else
      out[i] = x[i] - eta * x[i] * ap / (1.0 + eta * ap);
  }
  return out;
}

Vector PSystem::gain_diagonal(const Vector& x) const {
  if (spec_.variant == PSystemVariant::kProp6) return Vector::Constant(x.size(), spec_.eta);
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    g[i] = 1.0 / (1.0 + std::pow(std::abs(x[i]), spec_.p));
  return g;
}

Vector PSystem::drift(const Vector& x) const {
  Vector out = expert_closed_loop_drift(x);
  if (spec_.variant == PSystemVariant::kExperiment && spec_.h)
    out += gain_diagonal(x).cwiseProduct(spec_.h->evaluate(x));
  return out;
}

Matrix PSystem::input_gain(const Vector& x) const {
  return gain_diagonal(x).asDiagonal();
}

Vector PSystem::apply_gain(const Vector& x, const Vector& u) const {
  return gain_diagonal(x).cwiseProduct(u);
}

Vector PSystem::apply_gain_transpose(const Vector& x, const Vector& w) const {
  return gain_diagonal(x).cwiseProduct(w);
}

std::shared_ptr<const PSystem> make_p_system(const PSystemSpec& spec) {
  if (!(spec.p > 0.0)) throw PreconditionError("p-system: p must be positive");
  if (spec.dim <= 0) throw DimensionError("p-system: dimension must be positive");
  if (spec.variant == PSystemVariant::kProp6) {
    const double limit = p_system_eta_limit(spec.p);
    if (!(spec.eta > 0.0 && spec.eta < limit)) {
      std::ostringstream os;
      os << "p-system: incremental gain stability requires 0 < eta < 4/(5+p) = " << limit
         << ", got eta = " << spec.eta;
      throw PreconditionError(os.str());
    }
    if (spec.h) throw PreconditionError("p-system: h is only used by the experiment variant");
  } else {
    if (!(spec.eta > 0.0)) throw PreconditionError("p-system: eta must be positive");
    if (spec.h && (spec.h->in_dim() != spec.dim || spec.h->out_dim() != spec.dim))
      throw DimensionError("p-system: h must map R^dim to R^dim");
  }
  return std::make_shared<const PSystem>(spec);
}

PolicyPtr p_system_expert(const PSystemSpec& spec) {
  if (spec.variant == PSystemVariant::kProp6 || !spec.h)
    return std::make_shared<const LinearPolicy>(Matrix::Zero(spec.dim, spec.dim));
  if (const auto* mlp = dynamic_cast<const MlpPolicy*>(spec.h.get()))
    return std::make_shared<const MlpPolicy>(mlp->w1(), -mlp->w2(), mlp->activation());
  return std::make_shared<const AffinePolicy>(std::vector<PolicyTerm>{{-1.0, spec.h}});
}

// ---------------------------------------------------------------------------

ClosedLoopSystem::ClosedLoopSystem(SystemPtr open_loop, PolicyPtr policy)
    : DynamicsSystem(open_loop->state_dim(), open_loop->state_dim()),
      open_loop_(std::move(open_loop)),
      policy_(std::move(policy)) {
  if (policy_->in_dim() != open_loop_->state_dim() || policy_->out_dim() != open_loop_->input_dim())
    throw DimensionError("closed loop: policy dimensions do not match the system");
}

Vector ClosedLoopSystem::drift(const Vector& x) const {
  return open_loop_->drift(x) + open_loop_->apply_gain(x, policy_->evaluate(x));
}

Matrix ClosedLoopSystem::input_gain(const Vector&) const {
  return Matrix::Identity(state_dim(), state_dim());
}

// ---------------------------------------------------------------------------

ContractingExample make_contracting_example(ContractingKind kind, const ContractingParams& params) {
  ContractingExample ex;
  ex.kind = kind;
  const Eigen::Index n = params.dim;
  if (n <= 0) throw DimensionError("contracting example: dimension must be positive");
  switch (kind) {
    case ContractingKind::kLogSystem: {
      ex.system = std::make_shared<const FunctionSystem>(
          n, n,
          [](const Vector& x) { return Vector((1.0 + x.array().square()).log().matrix()); },
          [n](const Vector&) { return Matrix(Matrix::Identity(n, n)); }, "log_system",
          SystemBounds{1.0, std::nullopt});
      ex.metric = [](const Vector& x) {
        return Matrix((2.0 / (1.0 + (-x.array().abs()).exp())).matrix().asDiagonal());
      };
      ex.mu_lo = 1.0;
      ex.mu_hi = 2.0;
      ex.input_lipschitz = 1.0;
      break;
    }
    case ContractingKind::kGradientDescent: {
      const Matrix& Q = params.quadratic;
      if (Q.rows() != n || Q.cols() != n)
        throw DimensionError("gradient_descent: quadratic potential must be dim x dim");
      const double mu = linalg::min_eigenvalue_symmetric(Q);
      const double L = linalg::max_eigenvalue_symmetric(Q);
      if (!(mu > 0.0)) throw PreconditionError("gradient_descent: potential must be strongly convex");
      if (!(params.eta > 0.0 && params.eta <= 1.0 / L))
        throw PreconditionError("gradient_descent: step size must satisfy 0 < eta <= 1/L");
      const double eta = params.eta;
      const Matrix S = 0.5 * (Q + Q.transpose());
      ex.system = std::make_shared<const FunctionSystem>(
          n, n, [S, eta](const Vector& x) { return Vector(x - eta * (S * x)); },
          [n, eta](const Vector&) { return Matrix(-eta * Matrix::Identity(n, n)); },
          "gradient_descent", SystemBounds{eta, std::nullopt});
      ex.metric = [n](const Vector&) { return Matrix(Matrix::Identity(n, n)); };
      ex.input_lipschitz = eta;
      break;
    }
    case ContractingKind::kPiecewiseLinear: {
      if (params.modes.empty() || !params.region)
        throw PreconditionError("piecewise_linear: modes and region map are required");
      const Matrix& P = params.certificate;
      if (P.rows() != n || P.cols() != n || !linalg::is_positive_definite(P))
        throw PreconditionError("piecewise_linear: certificate P must be dim x dim and PD");
      for (const auto& A : params.modes) {
        if (A.rows() != n || A.cols() != n) throw DimensionError("piecewise_linear: mode shape");
        if (!(linalg::spectral_radius(A) < 1.0))
          throw PreconditionError("piecewise_linear: every mode must be stable");
        if (!linalg::is_positive_definite(P - A.transpose() * P * A))
          throw PreconditionError("piecewise_linear: P is not a common certificate of the modes");
      }
      const Matrix B = params.input_matrix.size() ? params.input_matrix : Matrix::Identity(n, n);
      if (B.rows() != n) throw DimensionError("piecewise_linear: input matrix rows");
      auto modes = params.modes;
      auto region = params.region;
      ex.system = std::make_shared<const FunctionSystem>(
          n, B.cols(),
          [modes, region](const Vector& x) {
            const std::size_t r = region(x);
            if (r >= modes.size()) throw PreconditionError("piecewise_linear: region out of range");
            return Vector(modes[r] * x);
          },
          [B](const Vector&) { return B; }, "piecewise_linear",
          SystemBounds{linalg::operator_norm(B), std::nullopt});
      ex.metric = [P](const Vector&) { return P; };
      ex.mu_lo = linalg::min_eigenvalue_symmetric(P);
      ex.mu_hi = linalg::max_eigenvalue_symmetric(P);
      ex.input_lipschitz = linalg::operator_norm(B);
      break;
    }
  }
  return ex;
}

// ---------------------------------------------------------------------------

namespace {

bool diverged(const Vector& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || std::abs(x[i]) > kDivergenceGuard) return true;
  return false;
}

[[noreturn]] void throw_divergence(Trajectory&& partial, std::size_t t) {
  std::ostringstream os;
  os << "rollout diverged at step " << t;
  throw RolloutDivergence(os.str(), t, std::move(partial));
}

}  // namespace

Trajectory rollout_closed(const DynamicsSystem& system, const Policy& policy, const Vector& xi,
                          std::size_t horizon) {
  if (horizon < 1) throw PreconditionError("rollout_closed: horizon must be at least 1");
  if (xi.size() != system.state_dim())
    throw DimensionError("rollout_closed: initial condition xi has dimension " +
                         std::to_string(xi.size()) + ", expected " +
                         std::to_string(system.state_dim()));
  if (policy.in_dim() != system.state_dim() || policy.out_dim() != system.input_dim())
    throw DimensionError("rollout_closed: policy dimensions do not match the system");
  Trajectory traj;
  traj.initial_condition = xi;
  traj.states.reserve(horizon + 1);
  traj.inputs.reserve(horizon);
  traj.states.push_back(xi);
  if (diverged(xi)) {
    traj.states.clear();
    throw_divergence(std::move(traj), 0);
  }
  for (std::size_t t = 0; t < horizon; ++t) {
    const Vector& x = traj.states.back();
    Vector u = policy.evaluate(x);
    Vector next = step_fast(system, x, u);
    if (diverged(u) || diverged(next)) throw_divergence(std::move(traj), t + 1);
    traj.inputs.push_back(std::move(u));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

Trajectory rollout_open(const DynamicsSystem& system, const Vector& xi,
                        const std::vector<Vector>& inputs) {
  if (xi.size() != system.state_dim())
    throw DimensionError("rollout_open: initial condition xi has dimension " +
                         std::to_string(xi.size()) + ", expected " +
                         std::to_string(system.state_dim()));
  for (std::size_t t = 0; t < inputs.size(); ++t)
    if (inputs[t].size() != system.input_dim())
      throw DimensionError("rollout_open: inputs[" + std::to_string(t) + "] has dimension " +
                           std::to_string(inputs[t].size()) + ", expected " +
                           std::to_string(system.input_dim()));
  Trajectory traj;
  traj.initial_condition = xi;
  traj.states.reserve(inputs.size() + 1);
  traj.inputs.reserve(inputs.size());
  traj.states.push_back(xi);
  if (diverged(xi)) {
    traj.states.clear();
    throw_divergence(std::move(traj), 0);
  }
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Vector next = step_fast(system, traj.states.back(), inputs[t]);
    if (diverged(next)) throw_divergence(std::move(traj), t + 1);
    traj.inputs.push_back(inputs[t]);
    traj.states.push_back(std::move(next));
  }
  return traj;
}

double replay_error(const DynamicsSystem& system, const Trajectory& trajectory) {
  double worst = 0.0;
  for (std::size_t t = 0; t < trajectory.horizon(); ++t) {
    const Vector next = system.step(trajectory.states[t], trajectory.inputs[t]);
    worst = std::max(worst, (next - trajectory.states[t + 1]).cwiseAbs().maxCoeff());
  }
  return worst;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  if (trajectory.states.empty()) throw PreconditionError("trajectory has no states");
  const Eigen::Index n = trajectory.states.front().size();
  const Eigen::Index d = trajectory.inputs.empty() ? 0 : trajectory.inputs.front().size();
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  out << 't';
  for (Eigen::Index i = 0; i < n; ++i) out << ",x_" << i;
  for (Eigen::Index j = 0; j < d; ++j) out << ",u_" << j;
  out << '\n';
  for (std::size_t t = 0; t < trajectory.states.size(); ++t) {
    out << t;
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << trajectory.states[t][i];
    for (Eigen::Index j = 0; j < d; ++j) {
      out << ',';
      if (t < trajectory.inputs.size()) out << trajectory.inputs[t][j];
    }
    out << '\n';
  }
  out.precision(old_precision);
}

Trajectory read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw PreconditionError("trajectory CSV: missing header");
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    if (cell != "t") throw PreconditionError("trajectory CSV: header must start with t");
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      if (cell.rfind("x_", 0) == 0)
        ++n;
      else if (cell.rfind("u_", 0) == 0)
        ++d;
      else
        throw PreconditionError("trajectory CSV: unexpected column " + cell);
    }
  }
  Trajectory traj;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (static_cast<Eigen::Index>(cells.size()) < 1 + n + d) cells.emplace_back();
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = std::stod(cells[1 + i]);
    traj.states.push_back(x);
    if (d > 0 && !cells[1 + n].empty()) {
      Vector u(d);
      for (Eigen::Index j = 0; j < d; ++j) u[j] = std::stod(cells[1 + n + j]);
      traj.inputs.push_back(u);
    }
  }
  if (traj.states.empty()) throw PreconditionError("trajectory CSV: no rows");
  if (traj.inputs.size() + 1 != traj.states.size())
    throw PreconditionError("trajectory CSV: expected one more state row than input rows");
  traj.initial_condition = traj.states.front();
  return traj;
}

}  // namespace igs
