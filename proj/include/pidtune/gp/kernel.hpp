#pragma once

#include "pidtune/linalg.hpp"

namespace pidtune::gp {

/// Squared-exponential kernel with per-dimension (ARD) lengthscales. The
/// only kernel in this library: closed-form propagation of Gaussian inputs
/// requires it.
struct SeArd {
    Vector lengthscales;  // D, strictly positive
    double signal_var;    // sigma_f^2

    /// Scaled squared distances: out(i,j) = sum_d ((a_id - b_jd)/l_d)^2.
    Matrix scaled_sqdist(const Matrix& a, const Matrix& b) const {
        const Matrix as = a.array().rowwise() / lengthscales.transpose().array();
        const Matrix bs = b.array().rowwise() / lengthscales.transpose().array();
        Matrix out = -2.0 * as * bs.transpose();
        out.colwise() += as.rowwise().squaredNorm();
        out.rowwise() += bs.rowwise().squaredNorm().transpose();
        return out.cwiseMax(0.0);
    }

    Matrix operator()(const Matrix& a, const Matrix& b) const {
        return signal_var * (-0.5 * scaled_sqdist(a, b).array()).exp().matrix();
    }

    Vector row(const Vector& x, const Matrix& sites) const {
        return operator()(x.transpose(), sites).transpose();
    }
};

}  // namespace pidtune::gp
