#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>

namespace igs {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

// Stabilizing solution of the discrete algebraic Riccati equation
//   P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA
// by value iteration from P0 = Q. Stops when the Frobenius change falls below
// 1e-12 (relative to max(1, |P|_F)) or after max_iterations, in which case a
// ConvergenceError is thrown (the pair is most likely not stabilizable).
Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                  int max_iterations = 100000);

// Frobenius norm of the DARE defining-equation residual at P.
double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                     const Matrix& P);

// K = -(R + B'PB)^{-1} B'PA, so that u = Kx and the closed loop is A + BK.
// A zero input matrix gives a zero gain.
Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R);

// X = sum_k (A')^k Q A^k, solving A'XA - X + Q = 0, via the doubling iteration.
// Requires spectral_radius(A) < 1.
Matrix solve_discrete_lyapunov(const Matrix& A, const Matrix& Q);

// Spectral radius from the growth rate of |A^m|_F: the ratio
// (|A^{2m}| / |A^m|)^{1/m} for m = 2^k, computed by repeated squaring in log
// scale (no overflow or underflow) until consecutive estimates agree to
// 1e-15 relative, with at least m = 1024 and at most 50 squarings.
double spectral_radius(const Matrix& A);

// Cross-check estimate: normalized power iteration, averaging the log growth
// over the second half of `steps` iterations, max over `restarts` random starts.
double spectral_radius_power(const Matrix& A, int restarts = 5, int steps = 10000,
                             unsigned long long seed = 0x5eed);

// Cholesky-based test of M + slack*I being positive definite.
bool is_positive_definite(const Matrix& M, double slack = 0.0);

double operator_norm(const Matrix& M);
double min_eigenvalue_symmetric(const Matrix& M);
double max_eigenvalue_symmetric(const Matrix& M);

// CSV matrix files: one row per line, comma separated, dims inferred.
Matrix read_matrix_csv(std::istream& in);
Matrix read_matrix_csv_file(const std::string& path);
void write_matrix_csv(std::ostream& out, const Matrix& M);

void require_square(const Matrix& M, const char* name);

}  // namespace linalg
}  // namespace igs
