#pragma once

#include "marglik/common.hpp"

#include <vector>

namespace marglik {

// Dense symmetric kernel shared by every curvature estimator. All
// log-determinants are accumulated in the log domain; determinants are never
// formed. Operations are pure and reentrant.

// Ordered square blocks of a block-diagonal matrix.
struct BlockDiag {
    std::vector<Matrix> blocks;

    int dim() const;
};

// Verifies max|M - M^T| <= 1e-10 * max|M| and returns the symmetrized
// (M + M^T)/2. Throws NotSymmetric beyond tolerance.
Matrix require_symmetric(const Matrix& m);

// Reusable lower Cholesky factor of (m + jitter*I).
struct Cholesky {
    Matrix l;

    double logdet() const;
    Matrix solve(const Matrix& rhs) const;
    double inverse_trace() const;
};

// Factors (m + jitter*I) after the symmetry check. Jitter policy: if the
// factorization hits a non-positive pivot, jitter is escalated once to
// max(jitter, 1e-10 * trace/dim) and the factorization is retried; a second
// failure throws NotPositiveDefinite carrying the failing pivot index.
Cholesky cholesky(const Matrix& m, double jitter);

// log det(m + jitter*I) = 2 * sum(log diag(L)).
double cholesky_logdet(const Matrix& m, double jitter);

// Sum of cholesky_logdet over the blocks; jitter applies per block. A failure
// reports the block index alongside the pivot.
double blockdiag_logdet(const BlockDiag& b, double jitter);
double blockdiag_logdet(const std::vector<Matrix>& blocks, double jitter);

// log|a (x) g + tau*I| = sum_{i,j} log(alpha_i * gamma_j + tau) from the
// factor eigenvalues; the Kronecker product is never formed.
double kron_factor_logdet(const Matrix& a, const Matrix& g, double tau);

// Solves m * X = rhs for symmetric positive definite m (same jitter policy
// as cholesky_logdet with jitter = 0).
Matrix solve_psd(const Matrix& m, const Matrix& rhs);

// Eigenvalues of a symmetric matrix, ascending. Throws EigenFailure if the
// solver does not converge.
Vector sym_eigenvalues(const Matrix& m);

// Symmetric PSD square root; negative round-off eigenvalues are clamped to 0.
Matrix sym_sqrt(const Matrix& m);

// Assembles the dense direct sum of the blocks.
Matrix direct_sum(const std::vector<Matrix>& blocks);

namespace detail {
// Lower Cholesky of (m + jitter*I) without escalation. Returns the failing
// pivot index, or -1 on success. `m` must already be symmetric.
int cholesky_factor(const Matrix& m, double jitter, Matrix& l);
}  // namespace detail

}  // namespace marglik
