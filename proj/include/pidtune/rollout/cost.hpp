#pragma once

#include "pidtune/gaussian.hpp"

namespace pidtune {

/// Weights and horizon of the saturated stage cost
///   c(e, u) = 1 - exp(-(e^T Q e + u^T R u)/2).
struct CostConfig {
    Matrix q;        // E x E error weights
    Matrix r;        // F x F input weights
    Vector target;   // E, constant desired value for the tracked channels
    int horizon = 1; // H: number of prediction steps; cost is summed over t = 0..H
    double dt = 0.04;

    void validate() const {
        require(is_symmetric(q, 1e-9) && is_psd(q), "CostConfig: Q must be symmetric PSD");
        require(is_symmetric(r, 1e-9) && is_psd(r), "CostConfig: R must be symmetric PSD");
        require(target.size() == q.rows(), "CostConfig: target length must match Q");
        require(horizon >= 0, "CostConfig: horizon must be >= 0");
        require(dt > 0.0, "CostConfig: dt must be positive");
    }
};

struct SaturatedCost {
    double value = 0.0;
    Vector dmu;     // d value / d mean
    Matrix dsigma;  // (k,l) entry = d value / d Sigma_kl
};

/// Closed-form expectation of the saturated loss under d ~ N(mu, Sigma):
///   E[1 - exp(-d^T W d / 2)] = 1 - |I + Sigma W|^{-1/2}
///                                  exp(-mu^T W (I + Sigma W)^{-1} mu / 2)
/// with optional derivatives with respect to mu and Sigma.
inline SaturatedCost expected_saturated_cost(const Gaussian& d, const Matrix& w,
                                             bool want_derivs = false) {
    const Index n = d.dim();
    require(w.rows() == n && w.cols() == n, "expected_saturated_cost: weight shape mismatch");

    const Matrix a = Matrix::Identity(n, n) + d.cov * w;
    Eigen::PartialPivLU<Matrix> lu(a);
    const double det = lu.determinant();
    if (!(det > 1e-12))
        throw numeric_error("expected_saturated_cost: I + Sigma W is singular "
                            "(det = " + std::to_string(det) + ")");
    const Matrix wt = w * lu.inverse();  // W (I + Sigma W)^-1
    const double quad = d.mean.dot(wt * d.mean);
    const double c0 = std::exp(-0.5 * quad) / std::sqrt(det);

    SaturatedCost out;
    out.value = 1.0 - c0;
    if (want_derivs) {
        out.dmu = c0 * (0.5 * (wt + wt.transpose()) * d.mean);
        const Vector wtm = wt * d.mean;
        const Vector wttm = wt.transpose() * d.mean;
        out.dsigma = 0.5 * c0 * (wt.transpose() - wttm * wtm.transpose());
    }
    return out;
}

}  // namespace pidtune
