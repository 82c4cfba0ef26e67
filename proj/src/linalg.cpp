#include "marglik/linalg.hpp"

#include <cmath>
#include <string>

namespace marglik {

int BlockDiag::dim() const {
    int d = 0;
    for (const auto& b : blocks) d += static_cast<int>(b.rows());
    return d;
}

Matrix require_symmetric(const Matrix& m) {
    if (m.rows() != m.cols())
        throw DimMismatch("require_symmetric: matrix is " + std::to_string(m.rows()) +
                          "x" + std::to_string(m.cols()));
    if (m.rows() == 0) return m;
    const double scale = m.cwiseAbs().maxCoeff();
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * scale && asym > 0.0)
        throw NotSymmetric("matrix asymmetry " + std::to_string(asym) +
                           " exceeds 1e-10 * " + std::to_string(scale));
    return 0.5 * (m + m.transpose());
}

namespace detail {

int cholesky_factor(const Matrix& m, double jitter, Matrix& l) {
    const int n = static_cast<int>(m.rows());
    l = m;
    if (jitter != 0.0) l.diagonal().array() += jitter;
    for (int j = 0; j < n; ++j) {
        double d = l(j, j);
        if (j > 0) d -= l.row(j).head(j).squaredNorm();
        if (!(d > 0.0) || !std::isfinite(d)) return j;
        d = std::sqrt(d);
        l(j, j) = d;
        const int below = n - j - 1;
        if (below > 0) {
            auto col = l.col(j).tail(below);
            if (j > 0)
                col.noalias() -= l.bottomLeftCorner(below, j) * l.row(j).head(j).transpose();
            col /= d;
            l.row(j).tail(below).setZero();
        }
    }
    return -1;
}

// Factor with the module's escalation policy. Returns the jitter actually
// used; throws after the single escalation.
Matrix factor_with_escalation(const Matrix& sym, double jitter, const char* who) {
    Matrix l;
    int pivot = cholesky_factor(sym, jitter, l);
    if (pivot < 0) return l;
    const int n = static_cast<int>(sym.rows());
    const double escalated =
        std::max(jitter, n > 0 ? 1e-10 * sym.trace() / static_cast<double>(n) : jitter);
    if (escalated > jitter) {
        pivot = cholesky_factor(sym, escalated, l);
        if (pivot < 0) return l;
    }
    throw NotPositiveDefinite(std::string(who) + ": non-positive pivot at index " +
                                  std::to_string(pivot) + " (jitter " +
                                  std::to_string(escalated) + ")",
                              pivot);
}

}  // namespace detail

double Cholesky::logdet() const {
    return 2.0 * l.diagonal().array().log().sum();
}

Matrix Cholesky::solve(const Matrix& rhs) const {
    if (rhs.rows() != l.rows()) throw DimMismatch("Cholesky::solve: rhs row mismatch");
    Matrix x = l.triangularView<Eigen::Lower>().solve(rhs);
    l.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    return x;
}

double Cholesky::inverse_trace() const {
    // tr(M^{-1}) = ||L^{-1}||_F^2
    const long n = l.rows();
    return l.triangularView<Eigen::Lower>()
        .solve(Matrix::Identity(n, n))
        .squaredNorm();
}

Cholesky cholesky(const Matrix& m, double jitter) {
    if (jitter < 0.0) throw MarglikError("cholesky: negative jitter");
    const Matrix sym = require_symmetric(m);
    return Cholesky{detail::factor_with_escalation(sym, jitter, "cholesky")};
}

double cholesky_logdet(const Matrix& m, double jitter) {
    if (m.rows() == 0 && m.cols() == 0) return 0.0;
    return cholesky(m, jitter).logdet();
}

double blockdiag_logdet(const std::vector<Matrix>& blocks, double jitter) {
    double total = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        try {
            total += cholesky_logdet(blocks[i], jitter);
        } catch (const NotPositiveDefinite& e) {
            throw NotPositiveDefinite(
                "blockdiag_logdet: block " + std::to_string(i) + ": " + e.what(),
                e.pivot);
        }
    }
    return total;
}

double blockdiag_logdet(const BlockDiag& b, double jitter) {
    return blockdiag_logdet(b.blocks, jitter);
}

double kron_factor_logdet(const Matrix& a, const Matrix& g, double tau) {
    if (!(tau > 0.0)) throw MarglikError("kron_factor_logdet: tau must be positive");
    const Vector alpha = sym_eigenvalues(a);
    const Vector gamma = sym_eigenvalues(g);
    double total = 0.0;
    for (int i = 0; i < alpha.size(); ++i)
        for (int j = 0; j < gamma.size(); ++j) total += std::log(alpha[i] * gamma[j] + tau);
    return total;
}

Matrix solve_psd(const Matrix& m, const Matrix& rhs) {
    if (rhs.rows() != m.rows())
        throw DimMismatch("solve_psd: rhs has " + std::to_string(rhs.rows()) +
                          " rows, matrix is " + std::to_string(m.rows()));
    if (m.rows() == 0) return rhs;
    return cholesky(m, 0.0).solve(rhs);
}

Vector sym_eigenvalues(const Matrix& m) {
    const Matrix sym = require_symmetric(m);
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
        throw EigenFailure("symmetric eigensolver did not converge");
    return es.eigenvalues();
}

Matrix sym_sqrt(const Matrix& m) {
    const Matrix sym = require_symmetric(m);
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    if (es.info() != Eigen::Success)
        throw EigenFailure("symmetric eigensolver did not converge");
    const Vector clamped = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * clamped.cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

Matrix direct_sum(const std::vector<Matrix>& blocks) {
    int dim = 0;
    for (const auto& b : blocks) {
        if (b.rows() != b.cols()) throw DimMismatch("direct_sum: non-square block");
        dim += static_cast<int>(b.rows());
    }
    Matrix out = Matrix::Zero(dim, dim);
    int off = 0;
    for (const auto& b : blocks) {
        const int n = static_cast<int>(b.rows());
        out.block(off, off, n, n) = b;
        off += n;
    }
    return out;
}

}  // namespace marglik
