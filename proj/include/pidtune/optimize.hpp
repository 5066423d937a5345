#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pidtune/linalg.hpp"
#include "pidtune/rng.hpp"

namespace pidtune {

/// Objective callback: returns f(x) and fills grad (same length as x).
using Objective = std::function<double(const Vector&, Vector&)>;

struct OptimizerConfig {
    enum class Method { BFGS, CG };
    Method method = Method::BFGS;
    int max_linesearches = 100;
    double gradient_tolerance = 1e-6;
    int restarts = 0;          // additional runs from perturbed copies of x0
    double restart_noise = 0.1;
    std::uint64_t seed = 0;
};

struct TracePoint {
    int linesearch;  // accepted line searches so far (0 = initial point)
    double value;
};

struct MinimizeResult {
    Vector x;
    double value = std::numeric_limits<double>::infinity();
    Vector gradient;
    bool converged = false;          // gradient tolerance met
    int linesearches = 0;            // for the winning run
    int evaluations = 0;             // total objective calls across runs
    std::vector<TracePoint> trace;   // accepted-step values, winning run
    std::vector<std::vector<TracePoint>> all_traces;  // one per run
    std::string diagnostic;
};

namespace detail {

struct LineSearchResult {
    double alpha = 0.0;
    double value = 0.0;
    Vector x;
    Vector grad;
    bool ok = false;
};

/// Strong-Wolfe line search (sufficient decrease + curvature) with cubic
/// interpolation in the zoom phase. Rejects non-finite trial values by
/// shrinking the step.
class LineSearch {
public:
    LineSearch(const Objective& f, double c1, double c2) : f_(f), c1_(c1), c2_(c2) {}

    int evaluations = 0;

    LineSearchResult run(const Vector& x0, double f0, const Vector& g0,
                         const Vector& dir, double alpha_init) {
        const double dphi0 = g0.dot(dir);
        LineSearchResult res;
        if (!(dphi0 < 0.0)) return res;  // not a descent direction

        double alpha_prev = 0.0, phi_prev = f0, dphi_prev = dphi0;
        double alpha = alpha_init;
        Vector x = x0, g(x0.size());
        for (int iter = 0; iter < 12; ++iter) {
            double phi;
            if (!eval(x0, dir, alpha, x, g, phi)) {
                // persistent non-finite even after shrinking
                return res;
            }
            const double dphi = g.dot(dir);
            if (phi > f0 + c1_ * alpha * dphi0 || (iter > 0 && phi >= phi_prev)) {
                return zoom(x0, f0, dphi0, dir, alpha_prev, phi_prev, dphi_prev,
                            alpha, phi, dphi);
            }
            if (std::abs(dphi) <= -c2_ * dphi0) {
                res = {alpha, phi, x, g, true};
                return res;
            }
            if (dphi >= 0.0) {
                return zoom(x0, f0, dphi0, dir, alpha, phi, dphi, alpha_prev,
                            phi_prev, dphi_prev);
            }
            alpha_prev = alpha;
            phi_prev = phi;
            dphi_prev = dphi;
            alpha *= 2.5;
        }
        return res;
    }

private:
    const Objective& f_;
    double c1_, c2_;

    bool eval(const Vector& x0, const Vector& dir, double& alpha, Vector& x,
              Vector& g, double& phi) {
        for (int shrink = 0; shrink < 24; ++shrink) {
            x = x0 + alpha * dir;
            ++evaluations;
            phi = f_(x, g);
            if (std::isfinite(phi) && g.allFinite()) return true;
            alpha *= 0.3;
        }
        return false;
    }

    static double cubic_min(double a, double fa, double dfa, double b, double fb,
                            double dfb) {
        // minimizer of the cubic interpolant on [a, b]; NaN on failure
        const double d1 = dfa + dfb - 3.0 * (fa - fb) / (a - b);
        const double rad = d1 * d1 - dfa * dfb;
        if (rad < 0.0) return std::numeric_limits<double>::quiet_NaN();
        const double d2 = std::copysign(std::sqrt(rad), b - a);
        return b - (b - a) * (dfb + d2 - d1) / (dfb - dfa + 2.0 * d2);
    }

    LineSearchResult zoom(const Vector& x0, double f0, double dphi0,
                          const Vector& dir, double alpha_lo, double phi_lo,
                          double dphi_lo, double alpha_hi, double phi_hi,
                          double dphi_hi) {
        LineSearchResult res;
        Vector x(x0.size()), g(x0.size());
        for (int iter = 0; iter < 20; ++iter) {
            double alpha = cubic_min(alpha_lo, phi_lo, dphi_lo, alpha_hi, phi_hi, dphi_hi);
            const double lo = std::min(alpha_lo, alpha_hi), hi = std::max(alpha_lo, alpha_hi);
            const double width = hi - lo;
            if (!std::isfinite(alpha) || alpha <= lo + 0.05 * width ||
                alpha >= hi - 0.05 * width)
                alpha = 0.5 * (alpha_lo + alpha_hi);
            double phi;
            if (!eval(x0, dir, alpha, x, g, phi)) return res;
            const double dphi = g.dot(dir);
            if (phi > f0 + c1_ * alpha * dphi0 || phi >= phi_lo) {
                alpha_hi = alpha;
                phi_hi = phi;
                dphi_hi = dphi;
            } else {
                if (std::abs(dphi) <= -c2_ * dphi0) {
                    res = {alpha, phi, x, g, true};
                    return res;
                }
                if (dphi * (alpha_hi - alpha_lo) >= 0.0) {
                    alpha_hi = alpha_lo;
                    phi_hi = phi_lo;
                    dphi_hi = dphi_lo;
                }
                alpha_lo = alpha;
                phi_lo = phi;
                dphi_lo = dphi;
            }
            if (std::abs(alpha_hi - alpha_lo) < 1e-14 * (1.0 + std::abs(alpha_lo))) {
                // interval collapsed; accept lo if it at least decreases
                if (phi_lo < f0) {
                    eval(x0, dir, alpha_lo, x, g, phi_lo);
                    res = {alpha_lo, phi_lo, x, g, true};
                }
                return res;
            }
        }
        if (phi_lo < f0) {
            double phi;
            if (eval(x0, dir, alpha_lo, x, g, phi)) res = {alpha_lo, phi, x, g, true};
        }
        return res;
    }
};

inline MinimizeResult run_single(const Objective& f, const Vector& x0,
                                 const OptimizerConfig& cfg) {
    const Index n = x0.size();
    MinimizeResult res;
    res.x = x0;
    res.gradient = Vector::Zero(n);
    if (n == 0) {
        Vector g;
        res.value = f(x0, g);
        res.evaluations = 1;
        res.converged = true;
        res.trace.push_back({0, res.value});
        return res;
    }

    Vector x = x0, g(n);
    double fx = f(x, g);
    int evals = 1;
    if (!std::isfinite(fx) || !g.allFinite()) {
        res.value = fx;
        res.diagnostic = "objective non-finite at the starting point";
        res.evaluations = evals;
        return res;
    }
    res.trace.push_back({0, fx});

    const bool bfgs = cfg.method == OptimizerConfig::Method::BFGS;
    const double c2 = bfgs ? 0.9 : 0.1;
    LineSearch ls(f, 1e-4, c2);

    Matrix h = Matrix::Identity(n, n);  // inverse Hessian approximation
    Vector dir(n), g_prev(n), d_prev(n);
    bool have_prev = false;

    int accepted = 0;
    while (accepted < cfg.max_linesearches) {
        if (g.norm() < cfg.gradient_tolerance) {
            res.converged = true;
            break;
        }
        if (bfgs) {
            dir = -(h * g);
        } else {
            if (!have_prev) {
                dir = -g;
            } else {
                double beta = g.dot(g - g_prev) / g_prev.squaredNorm();  // PR+
                beta = std::max(0.0, beta);
                dir = -g + beta * d_prev;
            }
        }
        if (dir.dot(g) >= 0.0) dir = -g;  // safeguard: fall back to steepest descent

        double alpha0 = 1.0;
        if (!have_prev || !bfgs) {
            const double dn = dir.norm();
            if (dn > 0.0) alpha0 = std::min(1.0, 1.0 / dn);
        }
        auto step = ls.run(x, fx, g, dir, alpha0);
        if (!step.ok) {
            res.diagnostic = "line search failed to make progress";
            break;
        }
        const Vector s = step.x - x;
        const Vector y = step.grad - g;
        g_prev = g;
        d_prev = dir;
        have_prev = true;
        if (bfgs) {
            const double sy = s.dot(y);
            if (sy > 1e-12 * s.norm() * y.norm()) {
                if (accepted == 0) h *= sy / y.squaredNorm();  // initial scaling
                const double rho = 1.0 / sy;
                const Matrix v = Matrix::Identity(n, n) - rho * s * y.transpose();
                h = v * h * v.transpose() + rho * s * s.transpose();
            }
        }
        x = step.x;
        fx = step.value;
        g = step.grad;
        ++accepted;
        res.trace.push_back({accepted, fx});
    }
    if (g.norm() < cfg.gradient_tolerance) res.converged = true;

    res.x = x;
    res.value = fx;
    res.gradient = g;
    res.linesearches = accepted;
    res.evaluations = evals + ls.evaluations;
    return res;
}

}  // namespace detail

/// Minimize from a list of explicit starting points plus cfg.restarts
/// perturbed copies of the first start; returns the best run (ties keep the
/// earliest), with all traces recorded.
inline MinimizeResult minimize_multistart(const Objective& f,
                                          const std::vector<Vector>& starts,
                                          const OptimizerConfig& cfg) {
    require(!starts.empty(), "minimize: at least one starting point required");
    std::vector<Vector> all = starts;
    Rng rng(Rng::derive(cfg.seed, 0x9f1d));
    for (int r = 0; r < cfg.restarts; ++r)
        all.push_back(starts.front() +
                      cfg.restart_noise * rng.normal_vector(starts.front().size()));

    MinimizeResult best;
    bool have_best = false;
    std::vector<std::vector<TracePoint>> traces;
    int total_evals = 0;
    for (const Vector& x0 : all) {
        MinimizeResult r = detail::run_single(f, x0, cfg);
        total_evals += r.evaluations;
        traces.push_back(r.trace);
        if (!have_best || r.value < best.value) {
            best = std::move(r);
            have_best = true;
        }
    }
    best.all_traces = std::move(traces);
    best.evaluations = total_evals;
    return best;
}

inline MinimizeResult minimize(const Objective& f, const Vector& x0,
                               const OptimizerConfig& cfg) {
    return minimize_multistart(f, {x0}, cfg);
}

/// Per-coordinate central-difference comparison against the analytic gradient.
struct GradientCheckReport {
    Vector analytic;
    Vector numeric;
    Vector rel_error;
    double max_rel_error = 0.0;
};

inline GradientCheckReport gradient_check(const Objective& f, const Vector& x,
                                          double step = 1e-6) {
    GradientCheckReport rep;
    const Index n = x.size();
    rep.analytic.resize(n);
    rep.numeric.resize(n);
    rep.rel_error.resize(n);
    if (n == 0) return rep;

    Vector g(n);
    f(x, g);
    rep.analytic = g;
    Vector xp = x, dummy(n);
    for (Index i = 0; i < n; ++i) {
        const double h = step * std::max(1.0, std::abs(x(i)));
        xp(i) = x(i) + h;
        const double fp = f(xp, dummy);
        xp(i) = x(i) - h;
        const double fm = f(xp, dummy);
        xp(i) = x(i);
        rep.numeric(i) = (fp - fm) / (2.0 * h);
        rep.rel_error(i) = std::abs(rep.numeric(i) - rep.analytic(i)) /
                           std::max({std::abs(rep.numeric(i)), std::abs(rep.analytic(i)), 1.0});
    }
    rep.max_rel_error = rep.rel_error.size() ? rep.rel_error.maxCoeff() : 0.0;
    return rep;
}

}  // namespace pidtune
