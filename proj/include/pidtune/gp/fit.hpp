#pragma once

#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "pidtune/gp/dataset.hpp"
#include "pidtune/gp/model.hpp"
#include "pidtune/optimize.hpp"

namespace pidtune::gp {

/// Negative log marginal likelihood of an exact SE-ARD GP and its gradient
/// with respect to the log hyperparameters (lengthscales, signal, noise).
/// Returns +inf when the covariance cannot be factorized.
inline double nlml(const Matrix& x, const Vector& y, const Hyperparams& hyp,
                   Vector* grad = nullptr) {
    const Index n = x.rows(), d = x.cols();
    SeArd k{hyp.lengthscales(), hyp.signal_var()};
    const Matrix k0 = k(x, x);
    Matrix ky = k0;
    ky.diagonal().array() += hyp.noise_var();
    Eigen::LLT<Matrix> llt(ky);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();

    const Vector alpha = llt.solve(y);
    double value = 0.5 * y.dot(alpha) + 0.5 * n * std::log(2.0 * std::numbers::pi);
    for (Index i = 0; i < n; ++i) value += std::log(llt.matrixLLT()(i, i));

    if (grad) {
        grad->resize(d + 2);
        const Matrix kinv = llt.solve(Matrix::Identity(n, n));
        const Matrix a = kinv - alpha * alpha.transpose();
        const Vector ls = hyp.lengthscales();
        for (Index j = 0; j < d; ++j) {
            // dK/dlog l_j = K0 .* sq-dist in dim j / l_j^2
            const Vector xj = x.col(j) / ls(j);
            Matrix dist = xj.replicate(1, n);
            dist -= dist.transpose().eval();
            (*grad)(j) = 0.5 * (a.array() * k0.array() * dist.array().square()).sum();
        }
        (*grad)(d) = (a.array() * k0.array()).sum();        // dK/dlog sf = 2 K0
        (*grad)(d + 1) = hyp.noise_var() * a.trace();       // dK/dlog sn = 2 sn^2 I
    }
    return value;
}

struct MleOptions {
    int restarts = 4;  // perturbed starts in addition to the heuristic one
    int max_linesearches = 60;
    std::uint64_t seed = 0;
    Index max_points = 1000;  // MLE data cap (deterministic stride subsample)

    // Soft caps keeping the optimum in the regime where the model remains
    // useful for closed-loop prediction: plain one-step MLE happily prunes
    // weak-but-essential inputs by sending their lengthscales to infinity
    // and inflates the signal-to-noise ratio on near-deterministic targets.
    double snr_cap = 500.0;        // sigma_f / sigma_n
    double lengthscale_cap = 30.0; // lengthscale / input spread (normalized units)
    double penalty_exponent = 30.0;
};

struct MleResult {
    std::vector<Hyperparams> hyps;  // raw data units, one per output dim
    std::vector<double> nlml;       // per dim, on the normalized subsample
    bool fallback = false;          // no restart improved on the heuristic init
    std::vector<std::string> warnings;
};

namespace detail {

// Soft box on the normalized log hyperparameters; keeps line searches out of
// regions where the kernel matrix over/underflows.
inline double bounds_penalty(const Vector& psi, Vector& grad) {
    const double lo_ls = -7.0, hi = 7.0, lo_sn = std::log(1e-4);
    double p = 0.0;
    for (Index i = 0; i < psi.size(); ++i) {
        const double lo = (i == psi.size() - 1) ? lo_sn : lo_ls;
        if (psi(i) > hi) {
            p += 10.0 * (psi(i) - hi) * (psi(i) - hi);
            grad(i) += 20.0 * (psi(i) - hi);
        } else if (psi(i) < lo) {
            p += 10.0 * (lo - psi(i)) * (lo - psi(i));
            grad(i) -= 20.0 * (lo - psi(i));
        }
    }
    return p;
}

// Smooth high-order ratio penalty |x / cap|^p, negligible inside the cap and
// steep beyond it.
inline double ratio_penalty(double log_ratio, double log_cap, double exponent,
                            double& grad) {
    const double r = log_ratio / log_cap;
    grad = exponent * std::pow(std::abs(r), exponent - 1.0) *
           (r < 0.0 ? -1.0 : 1.0) / log_cap;
    return std::pow(std::abs(r), exponent);
}

inline double shape_penalty(const Vector& psi, const MleOptions& opts, Vector& grad) {
    const Index d = psi.size() - 2;
    double total = 0.0;
    // signal-to-noise cap
    double g = 0.0;
    total += ratio_penalty(psi(d) - psi(d + 1), std::log(opts.snr_cap),
                           opts.penalty_exponent, g);
    grad(d) += g;
    grad(d + 1) -= g;
    // lengthscale cap relative to the (unit) input spread
    for (Index i = 0; i < d; ++i) {
        total += ratio_penalty(psi(i), std::log(opts.lengthscale_cap),
                               opts.penalty_exponent, g);
        grad(i) += g;
    }
    return total;
}

inline Matrix stride_rows(const Matrix& m, Index max_rows) {
    if (m.rows() <= max_rows) return m;
    const Index stride = (m.rows() + max_rows - 1) / max_rows;
    Matrix out((m.rows() + stride - 1) / stride, m.cols());
    Index r = 0;
    for (Index i = 0; i < m.rows(); i += stride) out.row(r++) = m.row(i);
    return out.topRows(r);
}

}  // namespace detail

/// Per-output-dimension MLE of the kernel hyperparameters by multi-start
/// BFGS on the normalized data. Returned hyperparameters are in raw units.
inline MleResult fit_hyperparameters(const TrainingSet& raw, const MleOptions& opts = {}) {
    raw.validate();
    require(raw.size() >= raw.input_dim() + 2,
            "fit_hyperparameters: need at least D_in + 2 samples");
    MleResult result;

    const Normalizer norm = Normalizer::fit(raw, &result.warnings);
    TrainingSet data = norm.normalize(raw);
    data.inputs = detail::stride_rows(data.inputs, opts.max_points);
    data.targets = detail::stride_rows(data.targets, opts.max_points);
    const Index d = data.input_dim();

    for (Index a = 0; a < data.output_dim(); ++a) {
        const Vector y = data.targets.col(a);
        Objective objective = [&](const Vector& psi, Vector& grad) {
            grad.setZero(psi.size());
            Vector g;
            const double f = nlml(data.inputs, y, Hyperparams::unpack(psi), &g);
            if (!std::isfinite(f)) return f;
            double p = detail::bounds_penalty(psi, grad);
            p += detail::shape_penalty(psi, opts, grad);
            grad += g;
            return f + p;
        };

        Hyperparams init;
        init.log_lengthscales = Vector::Zero(d);
        init.log_signal_std = 0.0;
        init.log_noise_std = std::log(0.25);
        const Vector psi0 = init.pack();
        Vector dummy(psi0.size());
        const double f0 = objective(psi0, dummy);

        OptimizerConfig cfg;
        cfg.max_linesearches = opts.max_linesearches;
        cfg.gradient_tolerance = 1e-6;

        Rng rng(Rng::derive(opts.seed, 0xA100 + static_cast<std::uint64_t>(a)));
        std::vector<Vector> starts{psi0};
        for (int r = 0; r < opts.restarts; ++r) {
            Vector s = psi0;
            for (Index i = 0; i < d; ++i) s(i) += rng.uniform(-1.5, 1.5);
            s(d) += rng.uniform(-0.7, 0.7);
            s(d + 1) = std::log(rng.uniform(0.05, 0.5));
            starts.push_back(s);
        }
        auto best = minimize_multistart(objective, starts, cfg);

        Hyperparams fitted;
        if (!std::isfinite(best.value) || best.value >= f0) {
            result.fallback = true;
            result.warnings.push_back("hyperparameter MLE for output dim " +
                                      std::to_string(a) +
                                      " did not improve on the heuristic init");
            fitted = init;
            result.nlml.push_back(f0);
        } else {
            fitted = Hyperparams::unpack(best.x);
            result.nlml.push_back(best.value);
        }

        // back to raw units
        fitted.log_lengthscales += norm.in.std.array().log().matrix();
        fitted.log_signal_std += std::log(norm.out.std(a));
        fitted.log_noise_std += std::log(norm.out.std(a));
        result.hyps.push_back(std::move(fitted));
    }
    return result;
}

}  // namespace pidtune::gp
