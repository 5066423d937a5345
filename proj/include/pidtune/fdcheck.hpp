#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "pidtune/linalg.hpp"

namespace pidtune {

/// Central finite differences of f: R^n -> R^m, column j = df/dx_j.
inline Matrix finite_difference(const std::function<Vector(const Vector&)>& f,
                                const Vector& x, double step = 1e-6) {
    const Vector f0 = f(x);
    Matrix jac(f0.size(), x.size());
    Vector xp = x;
    for (Index j = 0; j < x.size(); ++j) {
        const double h = step * std::max(1.0, std::abs(x(j)));
        xp(j) = x(j) + h;
        const Vector fp = f(xp);
        xp(j) = x(j) - h;
        const Vector fm = f(xp);
        xp(j) = x(j);
        jac.col(j) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

/// Relative error with a unit floor in the denominator, so entries that are
/// exactly zero on both sides score zero instead of 0/0.
inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

struct ErrorStats {
    double max = 0.0;
    double median = 0.0;
    std::size_t count = 0;
};

inline ErrorStats error_stats(std::vector<double> errs) {
    ErrorStats s;
    s.count = errs.size();
    if (errs.empty()) return s;
    std::sort(errs.begin(), errs.end());
    s.max = errs.back();
    s.median = errs[errs.size() / 2];
    return s;
}

/// Entrywise relative errors between an analytic Jacobian and its FD estimate.
inline void accumulate_errors(const Matrix& analytic, const Matrix& fd,
                              std::vector<double>& out) {
    require(analytic.rows() == fd.rows() && analytic.cols() == fd.cols(),
            "accumulate_errors: shape mismatch");
    for (Index j = 0; j < analytic.cols(); ++j)
        for (Index i = 0; i < analytic.rows(); ++i)
            out.push_back(rel_error(analytic(i, j), fd(i, j)));
}

}  // namespace pidtune
