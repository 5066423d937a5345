#pragma once

#include <vector>

#include "pidtune/gaussian.hpp"
#include "pidtune/gp/model.hpp"

namespace pidtune::gp {

/// Exact first and second moments of the per-dimension GP posteriors pushed
/// through a Gaussian input, the premultiplied input-output cross-covariance
/// V (cov(x, delta) = Sigma * V, well defined for singular Sigma), and the
/// Jacobians of all three with respect to the input mean and covariance.
///
/// Jacobian layout: columns index the input mean, or vec(Sigma) column-major;
/// rows index the output quantity (vec(cov) and vec(V) column-major).
struct MomentMatch {
    Vector mean;  // O
    Matrix cov;   // O x O
    Matrix v;     // D x O

    bool has_derivs = false;
    Matrix dmean_dmu;     // O x D
    Matrix dmean_dsigma;  // O x D^2
    Matrix dcov_dmu;      // O^2 x D
    Matrix dcov_dsigma;   // O^2 x D^2
    Matrix dv_dmu;        // DO x D
    Matrix dv_dsigma;     // DO x D^2
};

namespace detail {

struct DimCache {
    Matrix t;        // (Sigma + Lambda_a)^-1
    Matrix delta;    // M x D, site minus input mean
    Matrix tdelta;   // M x D, rows (T delta_i)^T
    Vector q;        // M, expected kernel values E[k(x, site_i)]
    Vector bq;       // beta .* q
    double kernel_mean = 0.0;  // beta^T q (offset excluded)
};

inline double logdet_lu(const Eigen::PartialPivLU<Matrix>& lu) {
    return lu.matrixLU().diagonal().array().abs().log().sum();
}

}  // namespace detail

inline MomentMatch moment_match(const GpModel& model, const Gaussian& input,
                                bool want_derivs = false) {
    const Index d = input.dim();
    const Index o = model.output_dim();
    require(o >= 1, "moment_match: model has no output dimensions");
    require(model.input_dim() == d, "moment_match: input dimension mismatch");
    if (!is_psd(input.cov))
        throw numeric_error("moment_match: input covariance is not PSD");
    const bool symmetric_input = is_symmetric(input.cov);

    const Matrix& sigma = input.cov;
    const Vector& mu = input.mean;

    MomentMatch out;
    out.mean.resize(o);
    out.cov.setZero(o, o);
    out.v.setZero(d, o);
    out.has_derivs = want_derivs;
    if (want_derivs) {
        out.dmean_dmu.setZero(o, d);
        out.dmean_dsigma.setZero(o, d * d);
        out.dcov_dmu.setZero(o * o, d);
        out.dcov_dsigma.setZero(o * o, d * d);
        out.dv_dmu.setZero(d * o, d);
        out.dv_dsigma.setZero(d * o, d * d);
    }

    // per-dimension expected kernel vectors
    std::vector<detail::DimCache> cache(static_cast<std::size_t>(o));
    for (Index a = 0; a < o; ++a) {
        const Predictor& p = model.dims[static_cast<std::size_t>(a)];
        auto& c = cache[static_cast<std::size_t>(a)];
        const Vector ls2 = p.hyp.lengthscales().array().square();
        Matrix sig_lam = sigma;
        sig_lam.diagonal() += ls2;
        Eigen::PartialPivLU<Matrix> lu(sig_lam);
        c.t = lu.inverse();
        const double logdet = detail::logdet_lu(lu) - ls2.array().log().sum();
        const double scale = p.hyp.signal_var() * std::exp(-0.5 * logdet);

        c.delta = p.sites.rowwise() - mu.transpose();
        c.tdelta = c.delta * c.t.transpose();
        const Vector quad = (c.delta.array() * c.tdelta.array()).rowwise().sum();
        c.q = scale * (-0.5 * quad.array()).exp();
        c.bq = p.beta.cwiseProduct(c.q);
        c.kernel_mean = c.bq.sum();

        out.mean(a) = c.kernel_mean + p.mean_offset;
        out.v.col(a) = c.tdelta.transpose() * c.bq;

        if (want_derivs) {
            out.dmean_dmu.row(a) = out.v.col(a).transpose();
            const Matrix w1 = c.tdelta.transpose() * c.bq.asDiagonal() * c.tdelta;
            // dmean/dSigma_kl = 0.5 w1(k,l) - 0.5 mean * T(k,l)
            const Matrix jm = 0.5 * (w1 - c.kernel_mean * c.t);
            out.dmean_dsigma.row(a) = vec(jm).transpose();

            // dV/dmu = w1 - mean * T
            const Matrix jvmu = w1 - c.kernel_mean * c.t;
            out.dv_dmu.block(a * d, 0, d, d) = jvmu;

            // dV_r/dSigma_kl = 0.5 W3[r,k,l] - 0.5 T_kl V_r - T_rk V_l
            std::vector<Matrix> w3(static_cast<std::size_t>(d));
            for (Index r = 0; r < d; ++r) w3[static_cast<std::size_t>(r)].setZero(d, d);
            for (Index i = 0; i < c.tdelta.rows(); ++i) {
                const Vector t_i = c.tdelta.row(i).transpose();
                const Matrix outer = c.bq(i) * (t_i * t_i.transpose());
                for (Index r = 0; r < d; ++r)
                    w3[static_cast<std::size_t>(r)] += t_i(r) * outer;
            }
            const Vector va = out.v.col(a);
            for (Index r = 0; r < d; ++r) {
                Matrix block = 0.5 * w3[static_cast<std::size_t>(r)] - 0.5 * va(r) * c.t;
                block.noalias() -= c.t.row(r).transpose() * va.transpose();
                out.dv_dsigma.row(a * d + r) = vec(block).transpose();
            }
        }
    }

    // pairwise second moments
    for (Index a = 0; a < o; ++a) {
        for (Index b = a; b < o; ++b) {
            const Predictor& pa = model.dims[static_cast<std::size_t>(a)];
            const Predictor& pb = model.dims[static_cast<std::size_t>(b)];
            const auto& ca = cache[static_cast<std::size_t>(a)];
            const auto& cb = cache[static_cast<std::size_t>(b)];

            const Vector ila = pa.hyp.lengthscales().array().square().inverse();
            const Vector ilb = pb.hyp.lengthscales().array().square().inverse();
            const Vector p_ab = ila + ilb;
            Matrix sig_p = sigma;
            sig_p.diagonal() += p_ab.cwiseInverse();
            Eigen::PartialPivLU<Matrix> lu(sig_p);
            const Matrix g = lu.inverse();
            const double logdet = detail::logdet_lu(lu) + p_ab.array().log().sum();
            const double scale =
                pa.hyp.signal_var() * pb.hyp.signal_var() * std::exp(-0.5 * logdet);

            const Vector ra = ila.cwiseQuotient(p_ab);
            const Vector rb = ilb.cwiseQuotient(p_ab);
            const Matrix u = ca.delta.array().rowwise() * ra.transpose().array();
            const Matrix w = cb.delta.array().rowwise() * rb.transpose().array();

            // exponent: -(scaled site-site distance + (u+w)^T G (u+w)) / 2
            SeArd dist_kernel{(ila.cwiseInverse() + ilb.cwiseInverse()).cwiseSqrt(), 1.0};
            Matrix e = dist_kernel.scaled_sqdist(pa.sites, pb.sites);
            const Matrix ug = u * g.transpose();  // rows (G u_i)^T
            const Matrix wg = w * g.transpose();
            const Vector du = (u.array() * ug.array()).rowwise().sum();
            const Vector dw = (w.array() * wg.array()).rowwise().sum();
            if (symmetric_input) {
                e.noalias() += 2.0 * (u * wg.transpose());
            } else {
                e.noalias() += u * wg.transpose();
                e.noalias() += ug * w.transpose();
            }
            e.colwise() += du;
            e.rowwise() += dw.transpose();
            const Matrix q = scale * (-0.5 * e.array()).exp();

            const Vector& beta_a = pa.beta;
            const Vector& beta_b = pb.beta;
            const double s_bb = beta_a.dot(q * beta_b);
            double value = s_bb - ca.kernel_mean * cb.kernel_mean;
            bool variance_clamped = false;
            if (a == b) {
                // expected predictive variance sf^2 - tr(B Q) cannot be
                // negative; the clamp guards ill-conditioned fitted B
                const double ev =
                    pa.hyp.signal_var() - (pa.b_mat.array() * q.array()).sum();
                variance_clamped = ev < 0.0;
                value += std::max(ev, 0.0);
                if (model.predict_noise) value += pa.hyp.noise_var();
            }
            out.cov(a, b) = value;
            out.cov(b, a) = value;

            if (want_derivs) {
                auto weighted = [&](const Vector& rowsum, const Vector& colsum,
                                    const Matrix& omega_w, double total, Vector& dmu,
                                    Matrix& dsig) {
                    dmu = g * (u.transpose() * rowsum + w.transpose() * colsum);
                    Matrix m2 = u.transpose() * rowsum.asDiagonal() * u +
                                w.transpose() * colsum.asDiagonal() * w;
                    const Matrix uw = u.transpose() * omega_w;  // D x D
                    m2 += uw + uw.transpose();
                    dsig = 0.5 * (g * m2 * g - total * g);
                };

                // beta-weighted part
                const Vector rowsum = beta_a.cwiseProduct(q * beta_b);
                const Vector colsum = beta_b.cwiseProduct(q.transpose() * beta_a);
                const Matrix omega_w =
                    beta_a.asDiagonal() * (q * (beta_b.asDiagonal() * w));
                Vector dmu;
                Matrix dsig;
                weighted(rowsum, colsum, omega_w, s_bb, dmu, dsig);

                // product-of-means correction
                dmu -= cb.kernel_mean * out.v.col(a) + ca.kernel_mean * out.v.col(b);
                const Matrix jm_a = unvec(out.dmean_dsigma.row(a).transpose(), d, d);
                const Matrix jm_b = unvec(out.dmean_dsigma.row(b).transpose(), d, d);
                dsig -= cb.kernel_mean * jm_a + ca.kernel_mean * jm_b;

                if (a == b && !variance_clamped) {
                    const Matrix omega_tr = -pa.b_mat.cwiseProduct(q);
                    const Vector tr_row = omega_tr.rowwise().sum();
                    const Vector tr_col = omega_tr.colwise().sum().transpose();
                    const double tr_total = tr_row.sum();
                    Vector dmu_tr;
                    Matrix dsig_tr;
                    weighted(tr_row, tr_col, omega_tr * w, tr_total, dmu_tr, dsig_tr);
                    dmu += dmu_tr;
                    dsig += dsig_tr;
                }

                out.dcov_dmu.row(b * o + a) = dmu.transpose();
                out.dcov_dmu.row(a * o + b) = dmu.transpose();
                out.dcov_dsigma.row(b * o + a) = vec(dsig).transpose();
                out.dcov_dsigma.row(a * o + b) = vec(dsig).transpose();
            }
        }
    }
    return out;
}

}  // namespace pidtune::gp
