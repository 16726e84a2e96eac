#include "igs/policies.hpp"

#include "igs/errors.hpp"
#include "igs/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace igs {

Vector Policy::evaluate(const Vector& x) const {
  if (x.size() != in_dim()) {
    std::ostringstream os;
    os << "policy evaluate: state x has dimension " << x.size() << ", policy expects "
       << in_dim();
    throw DimensionError(os.str());
  }
  return evaluate_unchecked(x);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kIdentity:
      return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw PreconditionError("unknown activation '" + s + "'");
}

namespace {

template <typename Derived>
Matrix activate(const Eigen::MatrixBase<Derived>& z, Activation a) {
  switch (a) {
    case Activation::kTanh:
      return z.array().tanh().matrix();
    case Activation::kRelu:
      return z.array().max(0.0).matrix();
    case Activation::kIdentity:
      break;
  }
  return z;
}

// Derivative of the activation expressed through pre-activation z and
// output h. relu'(0) is taken as 0.
Matrix activation_derivative(const Matrix& z, const Matrix& h, Activation a) {
  switch (a) {
    case Activation::kTanh:
      return (1.0 - h.array().square()).matrix();
    case Activation::kRelu:
      return (z.array() > 0.0).cast<double>().matrix();
    case Activation::kIdentity:
      break;
  }
  return Matrix::Ones(z.rows(), z.cols());
}

Vector flatten_rowmajor(const Matrix& m) {
  Vector v(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[k++] = m(i, j);
  return v;
}

Matrix unflatten_rowmajor(const Vector& v, Eigen::Index offset, Eigen::Index rows,
                          Eigen::Index cols) {
  Matrix m(rows, cols);
  Eigen::Index k = offset;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[k++];
  return m;
}

void require_columns(const Matrix& states, Eigen::Index dim) {
  if (states.rows() != dim) {
    std::ostringstream os;
    os << "policy evaluate_batch: states have " << states.rows() << " rows, policy expects "
       << dim;
    throw DimensionError(os.str());
  }
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

// ---------------------------------------------------------------------------
// MlpPolicy

MlpPolicy::MlpPolicy(Matrix w1, Matrix w2, Activation activation)
    : w1_(std::move(w1)), w2_(std::move(w2)), activation_(activation) {
  if (w1_.rows() == 0 || w1_.cols() == 0 || w2_.rows() == 0)
    throw DimensionError("MlpPolicy: layer dimensions must be positive");
  if (w2_.cols() != w1_.rows()) {
    std::ostringstream os;
    os << "MlpPolicy: W2 has " << w2_.cols() << " columns but W1 has " << w1_.rows() << " rows";
    throw DimensionError(os.str());
  }
}

MlpPolicy MlpPolicy::from_parameters(Eigen::Index in_dim, Eigen::Index hidden,
                                     Eigen::Index out_dim, Activation activation,
                                     const Vector& theta) {
  if (theta.size() != hidden * (in_dim + out_dim))
    throw DimensionError("MlpPolicy::from_parameters: theta has length " +
                         std::to_string(theta.size()) + ", expected " +
                         std::to_string(hidden * (in_dim + out_dim)));
  return MlpPolicy(unflatten_rowmajor(theta, 0, hidden, in_dim),
                   unflatten_rowmajor(theta, hidden * in_dim, out_dim, hidden), activation);
}

Vector MlpPolicy::parameters() const {
  Vector theta(parameter_count());
  theta << flatten_rowmajor(w1_), flatten_rowmajor(w2_);
  return theta;
}

MlpPolicy MlpPolicy::with_parameters(const Vector& theta) const {
  return from_parameters(in_dim(), hidden(), out_dim(), activation_, theta);
}

Vector MlpPolicy::evaluate_unchecked(const Vector& x) const {
  return w2_ * activate(w1_ * x, activation_);
}

Matrix MlpPolicy::evaluate_batch(const Matrix& states) const {
  require_columns(states, in_dim());
  return w2_ * activate(w1_ * states, activation_);
}

Vector MlpPolicy::grad_wrt_params(const Vector& x, const Vector& upstream) const {
  if (x.size() != in_dim()) throw DimensionError("grad_wrt_params: x has wrong dimension");
  if (upstream.size() != out_dim())
    throw DimensionError("grad_wrt_params: upstream has wrong dimension");
  return grad_wrt_params_batch(x, upstream);
}

Vector MlpPolicy::grad_wrt_params_batch(const Matrix& states, const Matrix& upstream) const {
  require_columns(states, in_dim());
  if (upstream.rows() != out_dim() || upstream.cols() != states.cols())
    throw DimensionError("grad_wrt_params_batch: upstream shape mismatch");
  const Matrix z = w1_ * states;
  const Matrix h = activate(z, activation_);
  const Matrix grad_w2 = upstream * h.transpose();
  const Matrix back = (w2_.transpose() * upstream).cwiseProduct(activation_derivative(z, h, activation_));
  const Matrix grad_w1 = back * states.transpose();
  Vector g(parameter_count());
  g << flatten_rowmajor(grad_w1), flatten_rowmajor(grad_w2);
  return g;
}

nlohmann::json MlpPolicy::to_json() const {
  nlohmann::json j;
  j["kind"] = kind();
  j["dims"] = {in_dim(), out_dim()};
  j["hidden"] = hidden();
  j["activation"] = to_string(activation_);
  j["weights"] = to_std(parameters());
  return j;
}

// ---------------------------------------------------------------------------
// LinearPolicy

LinearPolicy::LinearPolicy(Matrix gain) : gain_(std::move(gain)) {
  if (gain_.rows() == 0 || gain_.cols() == 0)
    throw DimensionError("LinearPolicy: gain dimensions must be positive");
}

Vector LinearPolicy::evaluate_unchecked(const Vector& x) const { return gain_ * x; }

Matrix LinearPolicy::evaluate_batch(const Matrix& states) const {
  require_columns(states, in_dim());
  return gain_ * states;
}

nlohmann::json LinearPolicy::to_json() const {
  nlohmann::json j;
  j["kind"] = kind();
  j["dims"] = {in_dim(), out_dim()};
  j["weights"] = to_std(flatten_rowmajor(gain_));
  return j;
}

// ---------------------------------------------------------------------------
// AffinePolicy

std::vector<PolicyTerm> flatten_terms(const PolicyPtr& policy, double scale) {
  if (!policy) throw PreconditionError("null policy in affine combination");
  if (const auto* affine = dynamic_cast<const AffinePolicy*>(policy.get())) {
    std::vector<PolicyTerm> out;
    out.reserve(affine->terms().size());
    for (const auto& t : affine->terms()) out.push_back({scale * t.weight, t.base});
    return out;
  }
  return {{scale, policy}};
}

AffinePolicy::AffinePolicy(const std::vector<PolicyTerm>& terms) {
  if (terms.empty()) throw PreconditionError("AffinePolicy needs at least one term");
  for (const auto& term : terms) {
    for (const auto& flat : flatten_terms(term.base, term.weight)) {
      auto it = std::find_if(terms_.begin(), terms_.end(),
                             [&](const PolicyTerm& t) { return t.base == flat.base; });
      if (it != terms_.end())
        it->weight += flat.weight;
      else
        terms_.push_back(flat);
    }
  }
  in_dim_ = terms_.front().base->in_dim();
  out_dim_ = terms_.front().base->out_dim();
  for (const auto& t : terms_)
    if (t.base->in_dim() != in_dim_ || t.base->out_dim() != out_dim_)
      throw DimensionError("AffinePolicy: all terms must share input and output dimensions");
}

double AffinePolicy::weight_of(const PolicyPtr& base) const {
  for (const auto& t : terms_)
    if (t.base == base) return t.weight;
  return 0.0;
}

double AffinePolicy::weight_sum() const {
  double s = 0.0;
  for (const auto& t : terms_) s += t.weight;
  return s;
}

Vector AffinePolicy::evaluate_unchecked(const Vector& x) const {
  Vector out = Vector::Zero(out_dim_);
  for (const auto& t : terms_) out += t.weight * t.base->evaluate(x);
  return out;
}

Matrix AffinePolicy::evaluate_batch(const Matrix& states) const {
  require_columns(states, in_dim_);
  Matrix out = Matrix::Zero(out_dim_, states.cols());
  for (const auto& t : terms_) out += t.weight * t.base->evaluate_batch(states);
  return out;
}

nlohmann::json AffinePolicy::to_json() const {
  nlohmann::json j;
  j["kind"] = kind();
  j["dims"] = {in_dim_, out_dim_};
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : terms_) terms.push_back({{"weight", t.weight}, {"policy", t.base->to_json()}});
  j["terms"] = std::move(terms);
  return j;
}

std::shared_ptr<const AffinePolicy> mix(const PolicyPtr& p1, const PolicyPtr& p2, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw PreconditionError("mix: alpha must lie in (0, 1], got " + std::to_string(alpha));
  return std::make_shared<const AffinePolicy>(
      std::vector<PolicyTerm>{{1.0 - alpha, p1}, {alpha, p2}});
}

std::shared_ptr<const AffinePolicy> demix_final(const PolicyPtr& prev, const PolicyPtr& hat,
                                                const PolicyPtr& star, double alpha, int epochs) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw PreconditionError("demix_final: alpha must lie in (0, 1], got " + std::to_string(alpha));
  if (epochs < 1) throw PreconditionError("demix_final: epoch count must be positive");
  const double residual = std::pow(1.0 - alpha, epochs);
  const double z = 1.0 - residual;
  if (!(z > 0.0)) throw PreconditionError("demix_final: (1 - alpha)^E must be below 1");
  const AffinePolicy numerator({{1.0 - alpha, prev}, {alpha, hat}, {-residual, star}});
  std::vector<PolicyTerm> scaled;
  scaled.reserve(numerator.terms().size());
  for (const auto& t : numerator.terms()) scaled.push_back({t.weight / z, t.base});
  return std::make_shared<const AffinePolicy>(scaled);
}

MlpPolicy random_mlp(Eigen::Index in_dim, Eigen::Index hidden, Eigen::Index out_dim,
                     Activation activation, std::uint64_t seed) {
  if (in_dim <= 0 || hidden <= 0 || out_dim <= 0)
    throw DimensionError("random_mlp: dimensions must be positive");
  Rng rng = make_rng(seed);
  Matrix w1 = gaussian_matrix(rng, hidden, in_dim, 1.0 / std::sqrt(static_cast<double>(in_dim)));
  Matrix w2 = gaussian_matrix(rng, out_dim, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)));
  return MlpPolicy(std::move(w1), std::move(w2), activation);
}

PolicyPtr policy_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const auto dims = j.at("dims").get<std::vector<Eigen::Index>>();
    if (dims.size() != 2) throw PreconditionError("policy JSON: dims must be [in, out]");
    if (kind == "mlp") {
      const auto w = j.at("weights").get<std::vector<double>>();
      const Eigen::Index hidden = j.at("hidden").get<Eigen::Index>();
      const Vector theta = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
      return std::make_shared<const MlpPolicy>(MlpPolicy::from_parameters(
          dims[0], hidden, dims[1], activation_from_string(j.at("activation").get<std::string>()),
          theta));
    }
    if (kind == "linear") {
      const auto w = j.at("weights").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != dims[0] * dims[1])
        throw DimensionError("policy JSON: linear weights length mismatch");
      const Vector v = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
      return std::make_shared<const LinearPolicy>(unflatten_rowmajor(v, 0, dims[1], dims[0]));
    }
    if (kind == "affine") {
      std::vector<PolicyTerm> terms;
      for (const auto& t : j.at("terms"))
        terms.push_back({t.at("weight").get<double>(), policy_from_json(t.at("policy"))});
      auto p = std::make_shared<const AffinePolicy>(terms);
      if (p->in_dim() != dims[0] || p->out_dim() != dims[1])
        throw DimensionError("policy JSON: affine dims do not match its terms");
      return p;
    }
    throw PreconditionError("policy JSON: unknown kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw PreconditionError(std::string("policy JSON: ") + e.what());
  }
}

}  // namespace igs
