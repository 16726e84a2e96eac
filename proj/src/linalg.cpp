#include "igs/linalg.hpp"

#include "igs/errors.hpp"
#include "igs/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <vector>

namespace igs::linalg {

void require_square(const Matrix& M, const char* name) {
  if (M.rows() != M.cols()) {
    std::ostringstream os;
    os << name << " must be square, got " << M.rows() << "x" << M.cols();
    throw DimensionError(os.str());
  }
}

namespace {

void check_riccati_shapes(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
  require_square(A, "A");
  require_square(Q, "Q");
  require_square(R, "R");
  if (B.rows() != A.rows()) throw DimensionError("B must have as many rows as A");
  if (Q.rows() != A.rows()) throw DimensionError("Q must match the dimension of A");
  if (R.rows() != B.cols()) throw DimensionError("R must match the column count of B");
}

Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                   const Matrix& P) {
  const Matrix BtP = B.transpose() * P;
  const Matrix S = R + BtP * B;
  const Matrix BtPA = BtP * A;
  const Matrix gain = S.ldlt().solve(BtPA);
  return Q + A.transpose() * P * A - BtPA.transpose() * gain;
}

}  // namespace

Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                  int max_iterations) {
  check_riccati_shapes(A, B, Q, R);
  Matrix P = Q;
  for (int it = 0; it < max_iterations; ++it) {
    Matrix next = riccati_map(A, B, Q, R, P);
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite())
      throw ConvergenceError("Riccati iteration diverged; (A, B) is likely not stabilizable");
    const double change = (next - P).norm();
    P = std::move(next);
    if (change < 1e-12 * std::max(1.0, P.norm())) return P;
  }
  throw ConvergenceError("Riccati iteration did not converge in " +
                         std::to_string(max_iterations) +
                         " iterations; (A, B) is likely not stabilizable");
}

double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                     const Matrix& P) {
  return (riccati_map(A, B, Q, R, P) - P).norm();
}

Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
  check_riccati_shapes(A, B, Q, R);
  if (B.size() == 0 || B.isZero(0.0)) return Matrix::Zero(B.cols(), A.rows());
  const Matrix P = solve_dare(A, B, Q, R);
  const Matrix BtP = B.transpose() * P;
  return -(R + BtP * B).ldlt().solve(BtP * A);
}

Matrix solve_discrete_lyapunov(const Matrix& A, const Matrix& Q) {
  require_square(A, "A");
  require_square(Q, "Q");
  if (A.rows() != Q.rows()) throw DimensionError("Q must match the dimension of A");
  const double rho = spectral_radius(A);
  if (!(rho < 1.0)) {
    std::ostringstream os;
    os << "discrete Lyapunov equation needs a stable A, spectral radius is " << rho;
    throw PreconditionError(os.str());
  }
  Matrix X = Q;
  Matrix Ak = A;
  for (int it = 0; it < 200; ++it) {
    const Matrix update = Ak.transpose() * X * Ak;
    X += update;
    Ak = Ak * Ak;
    if (update.norm() < 1e-14 * std::max(1.0, X.norm())) return X;
  }
  throw ConvergenceError("Lyapunov doubling iteration did not converge");
}

double spectral_radius(const Matrix& A) {
  require_square(A, "A");
  if (A.size() == 0) return 0.0;
  // After k squarings, A^{2^k} = exp(log_scale) * M with |M|_F = 1, and
  // (log|A^{2m}| - log|A^m|) / m -> log rho with m = 2^{k-1}.
  double norm = A.norm();
  if (norm == 0.0) return 0.0;
  Matrix M = A / norm;
  double log_scale = std::log(norm);
  constexpr int kMaxSquarings = 50;
  double estimate = std::numeric_limits<double>::infinity();
  double m = 1.0;
  for (int k = 1; k <= kMaxSquarings; ++k) {
    M = M * M;
    const double s = M.norm();
    if (s == 0.0 || !std::isfinite(s)) return 0.0;
    M /= s;
    const double previous_log = log_scale;
    log_scale = 2.0 * log_scale + std::log(s);
    const double next = std::exp((log_scale - previous_log) / m);
    m *= 2.0;
    if (k >= 11 && std::abs(next - estimate) <= 1e-15 * next) return next;
    estimate = next;
  }
  return estimate;
}

double spectral_radius_power(const Matrix& A, int restarts, int steps, unsigned long long seed) {
  require_square(A, "A");
  if (A.size() == 0) return 0.0;
  Rng rng = make_rng(seed);
  double best = 0.0;
  for (int r = 0; r < restarts; ++r) {
    Vector v = gaussian_vector(rng, A.rows());
    v.normalize();
    double log_growth = 0.0;
    int counted = 0;
    bool collapsed = false;
    for (int s = 0; s < steps; ++s) {
      v = A * v;
      const double n = v.norm();
      if (n == 0.0) {
        collapsed = true;
        break;
      }
      v /= n;
      if (s >= steps / 2) {
        log_growth += std::log(n);
        ++counted;
      }
    }
    if (collapsed || counted == 0) continue;
    best = std::max(best, std::exp(log_growth / counted));
  }
  return best;
}

bool is_positive_definite(const Matrix& M, double slack) {
  require_square(M, "M");
  Matrix S = 0.5 * (M + M.transpose());
  S.diagonal().array() += slack;
  Eigen::LLT<Matrix> llt(S);
  return llt.info() == Eigen::Success;
}

double operator_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(0);
}

double min_eigenvalue_symmetric(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_eigenvalue_symmetric(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

Matrix read_matrix_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw PreconditionError("matrix CSV: cannot parse entry '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw DimensionError("matrix CSV: ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DimensionError("matrix CSV: no rows");
  Matrix M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      if (!std::isfinite(rows[i][j])) throw PreconditionError("matrix CSV: non-finite entry");
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  return M;
}

Matrix read_matrix_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open matrix file " + path);
  return read_matrix_csv(in);
}

void write_matrix_csv(std::ostream& out, const Matrix& M) {
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      if (j) out << ',';
      out << M(i, j);
    }
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace igs::linalg
