#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pidtune/fdcheck.hpp"
#include "pidtune/gaussian.hpp"
#include "pidtune/gp/moment_match.hpp"
#include "pidtune/rollout/engine.hpp"

namespace pidtune::validation {

/// Randomized GP models in fitted-predictor form (sites, weights, spread).
inline gp::GpModel random_gp_model(Rng& rng, Index d_in, Index o, Index max_sites = 20,
                                   double signal_scale = 1.0) {
    gp::GpModel model;
    for (Index a = 0; a < o; ++a) {
        gp::Predictor p;
        const Index m =
            3 + static_cast<Index>(rng.raw() % static_cast<std::uint64_t>(max_sites - 2));
        p.hyp.log_lengthscales =
            Vector::NullaryExpr(d_in, [&](Index) { return rng.uniform(-0.2, 0.9); });
        p.hyp.log_signal_std = std::log(signal_scale) + rng.uniform(-0.4, 0.4);
        p.hyp.log_noise_std = p.hyp.log_signal_std - rng.uniform(1.5, 3.0);
        p.sites = 2.0 * rng.normal_matrix(m, d_in);
        p.beta = rng.normal_vector(m) / static_cast<double>(m);
        p.b_mat = rng.random_psd(m, 0.3 / p.hyp.signal_var());
        p.mean_offset = 0.02 * rng.normal();
        model.dims.push_back(std::move(p));
    }
    return model;
}

inline PidStructure random_pid_structure(Rng& rng, int num_inputs, int num_channels,
                                         int max_gains = 6) {
    std::vector<GainEntry> entries;
    for (PidTerm t : {PidTerm::P, PidTerm::I, PidTerm::D})
        for (int c = 0; c < num_channels; ++c)
            for (int i = 0; i < num_inputs; ++i)
                if (rng.uniform() < 0.5) entries.push_back({i, c, t});
    for (int i = 0; i < num_inputs; ++i) {
        bool used = false;
        for (const auto& e : entries) used = used || e.input == i;
        if (!used)
            entries.push_back(
                {i, static_cast<int>(rng.raw() % static_cast<std::uint64_t>(num_channels)),
                 PidTerm::P});
    }
    while (static_cast<int>(entries.size()) > max_gains) entries.pop_back();
    for (int i = 0; i < num_inputs; ++i) {
        bool used = false;
        for (const auto& e : entries) used = used || e.input == i;
        if (!used) entries.push_back({i, 0, PidTerm::P});
    }
    return PidStructure(num_inputs, num_channels, std::move(entries));
}

struct SuiteResult {
    std::string name;
    bool pass = false;
    double max_error = 0.0;
    double median_error = 0.0;
    std::string detail;
};

/// Finite-difference validation of every linear-transform derivative block.
inline SuiteResult appendix_suite(std::uint64_t seed, int instances = 100) {
    Rng rng(Rng::derive(seed, 0xA99));
    std::vector<double> errs;
    for (int trial = 0; trial < instances; ++trial) {
        const Index d = 1 + static_cast<Index>(rng.raw() % 5);
        const Index p = 1 + static_cast<Index>(rng.raw() % 5);
        Gaussian g(rng.normal_vector(d), rng.random_psd(d));
        LinearMap m(rng.normal_matrix(p, d), rng.normal_vector(p));
        const auto derivs = transform_derivs(g, m);

        accumulate_errors(derivs.dmean_dmean_in,
                          finite_difference([&](const Vector& mu) { return Vector(m.A * mu + m.b); },
                                            g.mean),
                          errs);
        accumulate_errors(
            derivs.dcov_dcov_in,
            finite_difference(
                [&](const Vector& s) {
                    return Vector(vec(m.A * unvec(s, d, d) * m.A.transpose()));
                },
                vec(g.cov)),
            errs);
        accumulate_errors(
            derivs.dmean_dA,
            finite_difference([&](const Vector& a) { return Vector(unvec(a, p, d) * g.mean + m.b); },
                              vec(m.A)),
            errs);
        accumulate_errors(
            derivs.dcov_dA,
            finite_difference(
                [&](const Vector& a) {
                    const Matrix am = unvec(a, p, d);
                    return Vector(vec(am * g.cov * am.transpose()));
                },
                vec(m.A)),
            errs);
        accumulate_errors(
            derivs.dcrosscov_dA,
            finite_difference(
                [&](const Vector& a) { return Vector(vec(Matrix(unvec(a, p, d).transpose()))); },
                vec(m.A)),
            errs);
        accumulate_errors(derivs.dmean_db,
                          finite_difference([&](const Vector& b) { return Vector(m.A * g.mean + b); },
                                            m.b),
                          errs);
    }
    const auto stats = error_stats(errs);
    SuiteResult r{"appendix", stats.max <= 1e-5 && stats.median <= 1e-7, stats.max,
                  stats.median,
                  std::to_string(instances) + " instances, tolerances 1e-5 max / 1e-7 median"};
    return r;
}

/// Static feedback on the augmented state against the direct discrete PID.
inline SuiteResult pid_oracle_suite(std::uint64_t seed, int structures = 50, int steps = 100) {
    Rng rng(Rng::derive(seed, 0xB17));
    const double dt = 0.02;
    double worst = 0.0;
    for (int trial = 0; trial < structures; ++trial) {
        const int f = 1 + static_cast<int>(rng.raw() % 3);
        const int e = 1 + static_cast<int>(rng.raw() % 3);
        const auto s = random_pid_structure(rng, f, e, 18);
        const StateLayout lay(std::vector<int>(static_cast<std::size_t>(e), 1), f, 1,
                              ErrorSelector::identity(e));
        const Vector theta = 2.0 * rng.normal_vector(s.num_gains());

        std::vector<Vector> errors;
        Vector walk = 0.1 * rng.normal_vector(e);
        for (int t = 0; t < steps; ++t) {
            errors.push_back(walk);
            walk += 0.05 * rng.normal_vector(e);
        }
        const auto reference = pid_reference_sequence(errors, s, theta, dt);

        Gaussian z = initial_state(lay, Gaussian::point(Vector::Zero(e)), errors[0]);
        for (int t = 0; t < steps; ++t) {
            const auto zt = augment(lay, z, Gaussian::point(errors[static_cast<std::size_t>(t)]), dt);
            const auto u = control(lay, zt, s, theta);
            worst = std::max(worst, (u.u.mean - reference[static_cast<std::size_t>(t)])
                                        .cwiseAbs()
                                        .maxCoeff());
            Vector znext = z.mean;
            znext.segment(lay.e_prev_offset(), e) = zt.mean.segment(lay.e_offset(), e);
            znext.segment(lay.int_e_offset(), e) = zt.mean.segment(lay.int_e_tot_offset(), e);
            z = Gaussian::point(znext);
        }
    }
    SuiteResult r{"pid-oracle", worst <= 1e-12, worst, 0.0,
                  std::to_string(structures) + " structures x " + std::to_string(steps) +
                      " steps, tolerance 1e-12"};
    return r;
}

/// Moment matching against vectorized Monte Carlo (independent direct-formula
/// posterior evaluation).
inline SuiteResult moments_suite(std::uint64_t seed, int models = 20, int samples = 1'000'000) {
    Rng rng(Rng::derive(seed, 0xC3));
    double worst_mean_se = 0.0;  // in standard-error units, limit 4
    double worst_var_rel = 0.0;  // relative, limit 0.02
    double worst_cross_se = 0.0;

    for (int trial = 0; trial < models; ++trial) {
        const Index d = 2 + static_cast<Index>(rng.raw() % 4);  // up to 5
        const Index o = 1 + static_cast<Index>(rng.raw() % 2);
        const auto model = random_gp_model(rng, d, o);
        const Gaussian input(0.4 * rng.normal_vector(d), rng.random_psd(d, 0.4));
        const auto mm = gp::moment_match(model, input);

        Eigen::LLT<Matrix> llt(symmetrized(input.cov) + 1e-12 * Matrix::Identity(d, d));
        const Matrix l = llt.matrixL();

        Vector sum_m = Vector::Zero(o), sum_v = Vector::Zero(o);
        Matrix sum_mm = Matrix::Zero(o, o);
        // covariance estimator with exact centers, plus its empirical second
        // moment for a faithful standard error
        Matrix sum_w = Matrix::Zero(d, o), sum_w2 = Matrix::Zero(d, o);
        const int chunk = 100'000;
        for (int done = 0; done < samples; done += chunk) {
            const int n = std::min(chunk, samples - done);
            const Matrix x =
                (l * rng.normal_matrix(d, n)).colwise() + input.mean;  // d x n
            Matrix means(n, o);
            Matrix vars(n, o);
            for (Index a = 0; a < o; ++a) {
                const auto& p = model.dims[static_cast<std::size_t>(a)];
                const Vector inv_ls2 = p.hyp.lengthscales().array().square().inverse();
                // direct kernel formula: sf^2 exp(-0.5 sum ((x - s)/l)^2)
                Matrix quad(n, p.sites.rows());
                for (Index i = 0; i < p.sites.rows(); ++i) {
                    const Matrix diff = x.colwise() - p.sites.row(i).transpose();
                    quad.col(i) =
                        (diff.array().square().colwise() * inv_ls2.array()).colwise().sum();
                }
                const Matrix k = p.hyp.signal_var() * (-0.5 * quad.array()).exp();
                means.col(a) = (k * p.beta).array() + p.mean_offset;
                vars.col(a) = p.hyp.signal_var() + p.hyp.noise_var() -
                              ((k * p.b_mat).array() * k.array()).rowwise().sum();
            }
            sum_m += means.colwise().sum().transpose();
            sum_v += vars.colwise().sum().transpose();
            sum_mm += means.transpose() * means;
            const Matrix xc = x.colwise() - input.mean;
            const Matrix mc = means.rowwise() - mm.mean.transpose();
            sum_w += xc * mc;
            sum_w2 += xc.cwiseProduct(xc) * mc.cwiseProduct(mc);
        }
        const Vector mean_hat = sum_m / samples;
        const Vector kernel_mean = mm.mean;  // exact centers used above
        Matrix cov_hat = sum_mm / samples - kernel_mean * kernel_mean.transpose();
        cov_hat += (sum_v / samples).asDiagonal();
        const Matrix cross_hat = sum_w / samples;
        const Matrix cross = input.cov * mm.v;

        for (Index a = 0; a < o; ++a) {
            const double se = std::sqrt(mm.cov(a, a) / samples);
            worst_mean_se = std::max(worst_mean_se, std::abs(mean_hat(a) - mm.mean(a)) / se);
            worst_var_rel = std::max(worst_var_rel,
                                     std::abs(cov_hat(a, a) - mm.cov(a, a)) / mm.cov(a, a));
            for (Index k = 0; k < d; ++k) {
                const double w2 = sum_w2(k, a) / samples;
                const double se_c =
                    std::sqrt(std::max(w2 - cross(k, a) * cross(k, a), 0.0) / samples) + 1e-15;
                worst_cross_se =
                    std::max(worst_cross_se, std::abs(cross_hat(k, a) - cross(k, a)) / se_c);
            }
        }
    }
    SuiteResult r;
    r.name = "moments";
    r.pass = worst_mean_se <= 4.0 && worst_var_rel <= 0.02 && worst_cross_se <= 4.0;
    r.max_error = worst_var_rel;
    r.median_error = 0.0;
    r.detail = "mean dev " + std::to_string(worst_mean_se) + " se (<=4), variance rel " +
               std::to_string(worst_var_rel) + " (<=0.02), cross dev " +
               std::to_string(worst_cross_se) + " se (<=4)";
    return r;
}

/// Full-rollout analytic policy gradient against central finite differences.
inline SuiteResult gradients_suite(std::uint64_t seed, int instances = 10) {
    std::vector<double> errs;
    for (int trial = 0; trial < instances; ++trial) {
        Rng rng(Rng::derive(seed, 0xD4 + static_cast<std::uint64_t>(trial)));
        const int f = 1 + static_cast<int>(rng.raw() % 2);
        const int n_u = 1 + static_cast<int>(rng.raw() % 2);
        const std::vector<int> hist{1 + static_cast<int>(rng.raw() % 2),
                                    1 + static_cast<int>(rng.raw() % 2)};
        const int horizon = 5 + static_cast<int>(rng.raw() % 21);

        const StateLayout lay(hist, f, n_u, ErrorSelector::identity(2));
        const auto structure = random_pid_structure(rng, f, 2);
        int gp_dim = f * n_u;
        for (int h : hist) gp_dim += h;
        const auto model = random_gp_model(rng, gp_dim, 2, 12, 0.3);

        CostConfig cost;
        cost.q = Vector::Constant(2, 10.0).asDiagonal();
        cost.r = Vector::Constant(f, 2.0).asDiagonal();
        cost.target = Vector::Zero(2);
        cost.horizon = horizon;
        cost.dt = 0.05;

        const Vector theta = 0.3 * rng.normal_vector(structure.num_gains());
        const Gaussian z0 =
            initial_state(lay, Gaussian(0.1 * rng.normal_vector(2), rng.random_psd(2, 0.005)),
                          cost.target);
        const std::vector<Gaussian> desired{Gaussian::point(cost.target)};

        RolloutEngine engine(lay, structure, &model, cost);
        RolloutOptions opts;
        opts.want_gradient = true;
        opts.cov_trace_bound = 1e9;
        const auto r = engine.run(z0, theta, desired, opts);

        Vector fd(theta.size());
        const double h = 1e-5;
        for (Index k = 0; k < theta.size(); ++k) {
            Vector tp = theta, tm = theta;
            tp(k) += h;
            tm(k) -= h;
            fd(k) = (engine.run(z0, tp, desired, {1e9, false}).total_cost -
                     engine.run(z0, tm, desired, {1e9, false}).total_cost) /
                    (2.0 * h);
        }
        accumulate_errors(r.grad.transpose(), fd.transpose(), errs);
    }
    const auto stats = error_stats(errs);
    SuiteResult r{"gradients", stats.max <= 1e-4, stats.max, stats.median,
                  std::to_string(instances) + " rollout instances, tolerance 1e-4 per coordinate"};
    return r;
}

/// Closed-form saturated-cost expectation against Monte Carlo and finite
/// differences.
inline SuiteResult cost_suite(std::uint64_t seed, int instances = 50, int samples = 1'000'000) {
    Rng rng(Rng::derive(seed, 0xE5));
    double worst_mc_se = 0.0;
    std::vector<double> fd_errs;
    for (int trial = 0; trial < instances; ++trial) {
        const Index n = 1 + static_cast<Index>(rng.raw() % 4);
        const Gaussian d(rng.normal_vector(n), rng.random_psd(n));
        const Matrix w = rng.random_psd(n, 4.0);
        const auto c = expected_saturated_cost(d, w, true);

        Eigen::LLT<Matrix> llt(symmetrized(d.cov) + 1e-12 * Matrix::Identity(n, n));
        const Matrix l = llt.matrixL();
        double sum = 0.0, sum_sq = 0.0;
        const int chunk = 100'000;
        for (int done = 0; done < samples; done += chunk) {
            const int m = std::min(chunk, samples - done);
            const Matrix x = (l * rng.normal_matrix(n, m)).colwise() + d.mean;
            const Eigen::ArrayXd vals =
                1.0 - (-0.5 * (x.array() * (w * x).array()).colwise().sum()).exp();
            sum += vals.sum();
            sum_sq += (vals * vals).sum();
        }
        const double mean = sum / samples;
        const double se = std::sqrt((sum_sq / samples - mean * mean) / samples) + 1e-15;
        worst_mc_se = std::max(worst_mc_se, std::abs(mean - c.value) / se);

        accumulate_errors(
            c.dmu.transpose(),
            finite_difference(
                [&](const Vector& mu) {
                    return Vector::Constant(1,
                                            expected_saturated_cost(Gaussian(mu, d.cov), w).value);
                },
                d.mean),
            fd_errs);
        accumulate_errors(
            vec(c.dsigma).transpose(),
            finite_difference(
                [&](const Vector& s) {
                    return Vector::Constant(
                        1, expected_saturated_cost(Gaussian(d.mean, unvec(s, n, n)), w).value);
                },
                vec(d.cov)),
            fd_errs);
    }
    const auto stats = error_stats(fd_errs);
    SuiteResult r;
    r.name = "cost";
    r.pass = worst_mc_se <= 3.0 && stats.max <= 1e-6;
    r.max_error = stats.max;
    r.median_error = stats.median;
    r.detail = "MC dev " + std::to_string(worst_mc_se) + " se (<=3), FD max " +
               std::to_string(stats.max) + " (<=1e-6)";
    return r;
}

}  // namespace pidtune::validation
