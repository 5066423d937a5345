#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace pidtune {

using Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown on dimension mismatches and invalid configuration values.
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a numeric operation cannot proceed (singular system, non-PSD input, ...).
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw config_error(msg);
}

/// (M + M^T)/2. Applied after every covariance product to suppress drift.
inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool is_symmetric(const Matrix& m, double tol = 1e-10) {
    if (m.rows() != m.cols()) return false;
    const double scale = 1.0 + m.cwiseAbs().maxCoeff();
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

/// Smallest eigenvalue >= -tol * trace/D. Degenerate (singular) matrices pass.
inline bool is_psd(const Matrix& m, double tol = 1e-8) {
    if (m.rows() != m.cols()) return false;
    if (m.rows() == 0) return true;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m), Eigen::EigenvaluesOnly);
    const double floor = -tol * (1.0 + std::abs(m.trace()) / static_cast<double>(m.rows()));
    return es.eigenvalues().minCoeff() >= floor;
}

/// Kronecker product a (m x n) with b (p x q) -> (mp x nq).
inline Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

// Vectorization convention, used by every matrix-valued derivative in this
// library: vec(M) stacks the COLUMNS of M (Eigen's native storage order).
// A derivative d vec(OUT)/d vec(IN) is a matrix whose row index runs over
// vec(OUT) and whose column index runs over vec(IN).
inline Vector vec(const Matrix& m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix unvec(const Vector& v, Index rows, Index cols) {
    require(v.size() == rows * cols, "unvec: size mismatch");
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace pidtune
