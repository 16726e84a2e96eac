#pragma once

#include "igs/linalg.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace igs {

class Policy;
using PolicyPtr = std::shared_ptr<const Policy>;

// State-feedback map x -> u. Policies are immutable values shared by pointer;
// evaluation is pure and safe to call concurrently.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual Eigen::Index in_dim() const = 0;
  virtual Eigen::Index out_dim() const = 0;
  virtual std::string kind() const = 0;

  // Throws DimensionError when x has the wrong size.
  Vector evaluate(const Vector& x) const;

  // Column-wise evaluation of a batch of states (in_dim x N).
  virtual Matrix evaluate_batch(const Matrix& states) const = 0;

  virtual nlohmann::json to_json() const = 0;

 protected:
  virtual Vector evaluate_unchecked(const Vector& x) const = 0;
};

enum class Activation { kTanh, kRelu, kIdentity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Two-layer network pi(x) = W2 act(W1 x) with no biases, so pi(0) = 0.
// The parameter vector is theta = vec_rowmajor(W1) || vec_rowmajor(W2).
class MlpPolicy final : public Policy {
 public:
  MlpPolicy(Matrix w1, Matrix w2, Activation activation);

  static MlpPolicy from_parameters(Eigen::Index in_dim, Eigen::Index hidden, Eigen::Index out_dim,
                                   Activation activation, const Vector& theta);

  Eigen::Index in_dim() const override { return w1_.cols(); }
  Eigen::Index out_dim() const override { return w2_.rows(); }
  Eigen::Index hidden() const { return w1_.rows(); }
  Eigen::Index parameter_count() const { return w1_.size() + w2_.size(); }
  std::string kind() const override { return "mlp"; }
  Activation activation() const { return activation_; }
  const Matrix& w1() const { return w1_; }
  const Matrix& w2() const { return w2_; }

  Vector parameters() const;
  MlpPolicy with_parameters(const Vector& theta) const;

  Matrix evaluate_batch(const Matrix& states) const override;
  nlohmann::json to_json() const override;

  // d(upstream' pi(x, theta)) / d theta.
  Vector grad_wrt_params(const Vector& x, const Vector& upstream) const;

  // Sum over columns of d(upstream_j' pi(x_j)) / d theta, i.e. the parameter
  // gradient of sum_j upstream_j' pi(x_j). `states` is in_dim x N, `upstream`
  // is out_dim x N.
  Vector grad_wrt_params_batch(const Matrix& states, const Matrix& upstream) const;

 protected:
  Vector evaluate_unchecked(const Vector& x) const override;

 private:
  Matrix w1_;
  Matrix w2_;
  Activation activation_;
};

// pi(x) = K x.
class LinearPolicy final : public Policy {
 public:
  explicit LinearPolicy(Matrix gain);

  Eigen::Index in_dim() const override { return gain_.cols(); }
  Eigen::Index out_dim() const override { return gain_.rows(); }
  std::string kind() const override { return "linear"; }
  const Matrix& gain() const { return gain_; }

  Matrix evaluate_batch(const Matrix& states) const override;
  nlohmann::json to_json() const override;

 protected:
  Vector evaluate_unchecked(const Vector& x) const override;

 private:
  Matrix gain_;
};

struct PolicyTerm {
  double weight;
  PolicyPtr base;
};

// Exact affine combination sum_i w_i pi_i(x). Weights may be negative.
// Terms are kept flat: a nested AffinePolicy base is expanded into its terms,
// and repeated occurrences of the same base object are merged by summing
// their weights in insertion order.
class AffinePolicy final : public Policy {
 public:
  explicit AffinePolicy(const std::vector<PolicyTerm>& terms);

  Eigen::Index in_dim() const override { return in_dim_; }
  Eigen::Index out_dim() const override { return out_dim_; }
  std::string kind() const override { return "affine"; }
  const std::vector<PolicyTerm>& terms() const { return terms_; }

  // Merged weight carried by `base` (0 when absent).
  double weight_of(const PolicyPtr& base) const;
  double weight_sum() const;

  Matrix evaluate_batch(const Matrix& states) const override;
  nlohmann::json to_json() const override;

 protected:
  Vector evaluate_unchecked(const Vector& x) const override;

 private:
  std::vector<PolicyTerm> terms_;
  Eigen::Index in_dim_ = 0;
  Eigen::Index out_dim_ = 0;
};

// Flattened terms of `policy` scaled by `scale` (a non-affine policy is a
// single term).
std::vector<PolicyTerm> flatten_terms(const PolicyPtr& policy, double scale = 1.0);

// (1 - alpha) p1 + alpha p2 with alpha in (0, 1].
std::shared_ptr<const AffinePolicy> mix(const PolicyPtr& p1, const PolicyPtr& p2, double alpha);

// (1 / Z) [(1 - alpha) prev + alpha hat - (1 - alpha)^E star], Z = 1 - (1 - alpha)^E.
// Weights of repeated bases are summed before the division by Z, so that
// e.g. demix_final(pi, pi, pi, ...) has weight exactly Z / Z = 1.
std::shared_ptr<const AffinePolicy> demix_final(const PolicyPtr& prev, const PolicyPtr& hat,
                                                const PolicyPtr& star, double alpha, int epochs);

// Gaussian initialisation with standard deviation 1/sqrt(fan_in) per layer.
MlpPolicy random_mlp(Eigen::Index in_dim, Eigen::Index hidden, Eigen::Index out_dim,
                     Activation activation, std::uint64_t seed);

// JSON wire format: {kind, dims: [in, out], activation?, hidden?, weights} for
// "mlp"/"linear", {kind: "affine", dims, terms: [{weight, policy}]} otherwise.
PolicyPtr policy_from_json(const nlohmann::json& j);

}  // namespace igs
