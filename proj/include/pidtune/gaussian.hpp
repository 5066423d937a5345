#pragma once

#include "pidtune/linalg.hpp"

namespace pidtune {

/// Multivariate Gaussian: mean vector plus symmetric PSD covariance.
/// Degenerate (rank-deficient) covariances are allowed; no jitter is added
/// at this layer.
struct Gaussian {
    Vector mean;
    Matrix cov;

    Gaussian() = default;
    Gaussian(Vector m, Matrix c) : mean(std::move(m)), cov(std::move(c)) {
        require(cov.rows() == mean.size() && cov.cols() == mean.size(),
                "Gaussian: covariance shape does not match mean");
    }

    static Gaussian point(Vector m) {
        const Index d = m.size();
        return Gaussian(std::move(m), Matrix::Zero(d, d));
    }

    Index dim() const { return mean.size(); }

    bool valid(double sym_tol = 1e-10, double psd_tol = 1e-8) const {
        return is_symmetric(cov, sym_tol) && is_psd(cov, psd_tol);
    }
};

/// Affine map y = A x + b.
struct LinearMap {
    Matrix A;
    Vector b;

    LinearMap() = default;
    LinearMap(Matrix a, Vector b_) : A(std::move(a)), b(std::move(b_)) {
        require(A.rows() == b.size(), "LinearMap: A rows must match b size");
    }

    static LinearMap identity(Index d) {
        return LinearMap(Matrix::Identity(d, d), Vector::Zero(d));
    }

    Index out_dim() const { return A.rows(); }
    Index in_dim() const { return A.cols(); }
};

/// Y = A X + b pushed through: N(A mu + b, A Sigma A^T), resymmetrized.
inline Gaussian linear_transform(const Gaussian& g, const LinearMap& m) {
    require(m.in_dim() == g.dim(), "linear_transform: dimension mismatch");
    return Gaussian(m.A * g.mean + m.b, symmetrized(m.A * g.cov * m.A.transpose()));
}

/// Joint distribution of (X, Y) for Y = A X + b. Cross block is Sigma_X A^T.
inline Gaussian joint_transform(const Gaussian& g, const LinearMap& m) {
    require(m.in_dim() == g.dim(), "joint_transform: dimension mismatch");
    const Index d = g.dim(), p = m.out_dim();
    Vector mean(d + p);
    mean << g.mean, m.A * g.mean + m.b;
    Matrix cov(d + p, d + p);
    const Matrix cross = g.cov * m.A.transpose();
    cov.topLeftCorner(d, d) = g.cov;
    cov.topRightCorner(d, p) = cross;
    cov.bottomLeftCorner(p, d) = cross.transpose();
    cov.bottomRightCorner(p, p) = m.A * g.cov * m.A.transpose();
    return Gaussian(std::move(mean), symmetrized(cov));
}

/// Stack two independent Gaussians: block-diagonal covariance.
inline Gaussian independent_concat(const Gaussian& g1, const Gaussian& g2) {
    const Index d1 = g1.dim(), d2 = g2.dim();
    Vector mean(d1 + d2);
    mean << g1.mean, g2.mean;
    Matrix cov = Matrix::Zero(d1 + d2, d1 + d2);
    cov.topLeftCorner(d1, d1) = g1.cov;
    cov.bottomRightCorner(d2, d2) = g2.cov;
    return Gaussian(std::move(mean), std::move(cov));
}

/// Partial derivatives of the sufficient statistics of Y = A X + b (and of the
/// cross-covariance factor C = A^T) with respect to the inputs. All
/// matrix-valued blocks use the column-major vec() convention from linalg.hpp.
struct GaussianDerivs {
    Matrix dmean_dmean_in;   // P x D            = A
    Matrix dcov_dcov_in;     // P^2 x D^2        = A (x) A
    Matrix dmean_dA;         // P x PD           = mu^T (x) I
    Matrix dmean_db;         // P x P            = I
    Matrix dcov_dA;          // P^2 x PD
    Matrix dcrosscov_dA;     // DP x PD  (cross block C = A^T, i.e. vec(A^T) wrt vec(A))
};

inline GaussianDerivs transform_derivs(const Gaussian& g, const LinearMap& m) {
    require(m.in_dim() == g.dim(), "transform_derivs: dimension mismatch");
    const Index d = g.dim(), p = m.out_dim();
    GaussianDerivs out;
    out.dmean_dmean_in = m.A;
    out.dcov_dcov_in = kron(m.A, m.A);
    out.dmean_db = Matrix::Identity(p, p);

    // d(A mu)/d A_ij = delta_ki mu_j, laid out over vec(A).
    out.dmean_dA = Matrix::Zero(p, p * d);
    for (Index j = 0; j < d; ++j)
        out.dmean_dA.block(0, j * p, p, p) = g.mean(j) * Matrix::Identity(p, p);

    // d(A Sigma A^T)_kl / d A_ij = delta_ki (Sigma A^T)_jl + delta_li (A Sigma)_kj
    const Matrix sa = g.cov * m.A.transpose();   // D x P
    const Matrix as = m.A * g.cov;               // P x D
    out.dcov_dA = Matrix::Zero(p * p, p * d);
    for (Index j = 0; j < d; ++j) {
        for (Index i = 0; i < p; ++i) {
            const Index col = j * p + i;
            for (Index l = 0; l < p; ++l) out.dcov_dA(l * p + i, col) += sa(j, l);
            for (Index k = 0; k < p; ++k) out.dcov_dA(i * p + k, col) += as(k, j);
        }
    }

    // C = A^T: d C_kl / d A_ij = delta_il delta_kj (a permutation).
    out.dcrosscov_dA = Matrix::Zero(d * p, p * d);
    for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < p; ++i)
            out.dcrosscov_dA(i * d + j, j * p + i) = 1.0;
    return out;
}

}  // namespace pidtune
