#pragma once

#include <optional>
#include <vector>

#include "pidtune/gp/moment_match.hpp"
#include "pidtune/pid_policy.hpp"
#include "pidtune/rollout/cost.hpp"

namespace pidtune {

/// Selector of the dynamics-model input from the joint (zt, u): per measured
/// channel its stored history, then the current input, then the stored past
/// inputs. Column order matches the training-data convention.
inline Matrix gp_input_selector(const StateLayout& lay) {
    const int f = lay.num_inputs();
    int gp_dim = f * lay.input_history();
    for (int c = 0; c < lay.num_channels(); ++c)
        gp_dim += lay.channel_history()[static_cast<std::size_t>(c)];

    Matrix s = Matrix::Zero(gp_dim, lay.zt_dim() + f);
    int row = 0;
    for (int c = 0; c < lay.num_channels(); ++c)
        for (int k = 0; k < lay.channel_history()[static_cast<std::size_t>(c)]; ++k)
            s(row++, lay.channel_offset(c) + k) = 1.0;
    for (int i = 0; i < f; ++i) s(row++, lay.zt_dim() + i) = 1.0;  // current input
    for (int lag = 0; lag < lay.input_history() - 1; ++lag)
        for (int i = 0; i < f; ++i) s(row++, lay.input_lag_offset(lag) + i) = 1.0;
    return s;
}

/// Next-state assembly z_{t+1} = L (zt, u, delta): channel histories shift
/// with the new value current + delta, input histories shift with u, and the
/// (e_t, int e) blocks are copied from the augmented state.
inline Matrix next_state_map(const StateLayout& lay) {
    const int f = lay.num_inputs(), e = lay.num_error_channels();
    const int o = lay.num_channels();
    Matrix l = Matrix::Zero(lay.z_dim(), lay.zt_dim() + f + o);
    for (int c = 0; c < o; ++c) {
        const int off = lay.channel_offset(c);
        l(off, off) = 1.0;                       // current value ...
        l(off, lay.zt_dim() + f + c) = 1.0;      // ... plus predicted difference
        for (int k = 1; k < lay.channel_history()[static_cast<std::size_t>(c)]; ++k)
            l(off + k, off + k - 1) = 1.0;       // history shift
    }
    for (int i = 0; i < f; ++i) {
        if (lay.input_history() > 1) l(lay.input_lag_offset(0) + i, lay.zt_dim() + i) = 1.0;
        for (int lag = 1; lag < lay.input_history() - 1; ++lag)
            l(lay.input_lag_offset(lag) + i, lay.input_lag_offset(lag - 1) + i) = 1.0;
    }
    l.block(lay.e_prev_offset(), lay.e_offset(), e, e).setIdentity();
    l.block(lay.int_e_offset(), lay.int_e_tot_offset(), e, e).setIdentity();
    return l;
}

/// Projection of the cost-relevant vector (e_t, u_{t-1}) out of the augmented
/// state. The previous input is read from the state's input history; without
/// stored input history the R term has nothing to act on and is dropped.
inline Matrix cost_projection(const StateLayout& lay, bool with_input) {
    const int e = lay.num_error_channels(), f = lay.num_inputs();
    Matrix p = Matrix::Zero(with_input ? e + f : e, lay.zt_dim());
    p.block(0, lay.e_offset(), e, e).setIdentity();
    if (with_input)
        for (int i = 0; i < f; ++i) p(e + i, lay.input_lag_offset(0) + i) = 1.0;
    return p;
}

/// d p(z)/d theta as per-parameter sufficient-statistics derivatives.
struct ThetaDerivs {
    std::vector<Vector> dmu;
    std::vector<Matrix> dsigma;

    static ThetaDerivs zero(Index dim, Index n_theta) {
        ThetaDerivs d;
        d.dmu.assign(static_cast<std::size_t>(n_theta), Vector::Zero(dim));
        d.dsigma.assign(static_cast<std::size_t>(n_theta), Matrix::Zero(dim, dim));
        return d;
    }
    Index size() const { return static_cast<Index>(dmu.size()); }
};

struct RolloutOptions {
    // Truncate when the summed variance of the current measured channels
    // exceeds this bound (the state is then far beyond the saturation width
    // of any sensible cost and the remaining gradient carries no signal).
    double cov_trace_bound = 4.0;
    bool want_gradient = false;
};

struct RolloutPrediction {
    std::vector<Gaussian> states;   // tracked states z_0 .. z_H (may stop early)
    Vector per_step_cost;           // H+1 entries; truncated tail filled with 1
    double total_cost = 0.0;
    bool truncated = false;
    int steps_completed = 0;

    bool has_gradient = false;
    std::vector<Vector> step_grads;  // dE_t/dtheta, intermediates of the chain
    Vector grad;                     // sum of step_grads
};

/// Sum of the cached per-step gradient contributions.
inline Vector cost_gradient(const RolloutPrediction& r) {
    require(r.has_gradient, "cost_gradient: rollout was run without gradient intermediates");
    return r.grad;
}

/// Closed-loop Gaussian prediction: augment -> PID -> joint with the control
/// -> moment-matched dynamics -> next-state assembly, iterated over the
/// horizon, with the expected saturated cost and (optionally) the analytic
/// cost gradient accumulated along the way.
class RolloutEngine {
public:
    RolloutEngine(StateLayout layout, PidStructure structure, const gp::GpModel* model,
                  CostConfig cost)
        : lay_(std::move(layout)), structure_(std::move(structure)), model_(model),
          cost_(std::move(cost)) {
        cost_.validate();
        require(model_ != nullptr, "RolloutEngine: model required");
        require(model_->output_dim() == lay_.num_channels(),
                "RolloutEngine: model must predict one difference per measured channel");
        require(structure_.num_channels() == lay_.num_error_channels(),
                "RolloutEngine: structure and layout disagree on error channels");
        require(cost_.q.rows() == lay_.num_error_channels(),
                "RolloutEngine: Q size must match error channels");
        require(cost_.r.rows() == lay_.num_inputs(),
                "RolloutEngine: R size must match inputs");

        with_input_cost_ = lay_.input_history() > 1;
        aug_ = augment_map(lay_, cost_.dt);
        tz_ = aug_.A.leftCols(lay_.z_dim());
        sel_gp_ = gp_input_selector(lay_);
        require(sel_gp_.rows() == model_->input_dim(),
                "RolloutEngine: model input dimension does not match the NARX layout");
        next_map_ = next_state_map(lay_);
        cost_proj_ = cost_projection(lay_, with_input_cost_);
        cost_w_ = Matrix::Zero(cost_proj_.rows(), cost_proj_.rows());
        const int e = lay_.num_error_channels();
        cost_w_.topLeftCorner(e, e) = cost_.q;
        if (with_input_cost_) cost_w_.bottomRightCorner(lay_.num_inputs(), lay_.num_inputs()) = cost_.r;
    }

    const StateLayout& layout() const { return lay_; }
    const PidStructure& structure() const { return structure_; }
    const CostConfig& cost_config() const { return cost_; }
    bool input_cost_active() const { return with_input_cost_; }

    /// Single propagation step; fills the optional derivative chain in place.
    Gaussian propagate_step(const Gaussian& z, const Vector& theta, const Gaussian& desired,
                            ThetaDerivs* chain, double* step_cost = nullptr,
                            Vector* step_grad = nullptr) const {
        const Gaussian zt = linear_transform(independent_concat(z, desired), aug_);
        const Index n_theta = structure_.num_gains();

        // joint (zt, u) through the static feedback
        const Matrix pol = policy_matrix(lay_, structure_, theta);
        const Index nzt = lay_.zt_dim(), f = structure_.num_inputs();
        Matrix w_map(nzt + f, nzt);
        w_map.topRows(nzt).setIdentity();
        w_map.bottomRows(f) = pol;
        const Vector mu_w = w_map * zt.mean;
        const Matrix sig_w = symmetrized(w_map * zt.cov * w_map.transpose());

        // dynamics-model input and moment-matched prediction
        const Gaussian s(sel_gp_ * mu_w, symmetrized(sel_gp_ * sig_w * sel_gp_.transpose()));
        const bool want = chain != nullptr;
        const auto mm = gp::moment_match(*model_, s, want);

        // joint (zt, u, delta) and next state
        const Index o = model_->output_dim();
        const Matrix cross = sig_w * sel_gp_.transpose() * mm.v;  // cov(w, delta)
        Vector mu_joint(nzt + f + o);
        mu_joint << mu_w, mm.mean;
        Matrix sig_joint(nzt + f + o, nzt + f + o);
        sig_joint.topLeftCorner(nzt + f, nzt + f) = sig_w;
        sig_joint.topRightCorner(nzt + f, o) = cross;
        sig_joint.bottomLeftCorner(o, nzt + f) = cross.transpose();
        sig_joint.bottomRightCorner(o, o) = mm.cov;
        Gaussian next(next_map_ * mu_joint,
                      symmetrized(next_map_ * sig_joint * next_map_.transpose()));

        if (step_cost != nullptr) {
            const Gaussian d(cost_proj_ * zt.mean,
                             symmetrized(cost_proj_ * zt.cov * cost_proj_.transpose()));
            const auto sc = expected_saturated_cost(d, cost_w_, want && step_grad != nullptr);
            *step_cost = sc.value;
            if (want && step_grad != nullptr) {
                step_grad->resize(n_theta);
                for (Index k = 0; k < n_theta; ++k) {
                    // chain through zt for the cost of the current step
                    const auto [dmu_zt, dsig_zt] = zt_derivs(*chain, k);
                    const Vector dmu_d = cost_proj_ * dmu_zt;
                    const Matrix dsig_d = cost_proj_ * dsig_zt * cost_proj_.transpose();
                    (*step_grad)(k) =
                        sc.dmu.dot(dmu_d) + (sc.dsigma.array() * dsig_d.array()).sum();
                }
            }
        }

        if (want) {
            ThetaDerivs next_chain = ThetaDerivs::zero(lay_.z_dim(), n_theta);
            const Matrix sel_v = sel_gp_.transpose() * mm.v;  // (nzt+f) x o
            for (Index k = 0; k < n_theta; ++k) {
                const auto [dmu_zt, dsig_zt] = zt_derivs(*chain, k);

                // policy rows depend on theta directly
                const auto& entry = structure_.entries()[static_cast<std::size_t>(k)];
                Matrix dpol = Matrix::Zero(f, 3 * structure_.num_channels());
                dpol(entry.input, structure_.column_of(entry)) = 1.0;
                const Matrix dpol_full = dpol * pid_input_selector(lay_);

                Vector dmu_w = w_map * dmu_zt;
                dmu_w.tail(f) += dpol_full * zt.mean;
                Matrix dsig_w = w_map * dsig_zt * w_map.transpose();
                Matrix dw = Matrix::Zero(nzt + f, nzt);
                dw.bottomRows(f) = dpol_full;
                const Matrix mixed = dw * zt.cov * w_map.transpose();
                dsig_w += mixed + mixed.transpose();

                const Vector dmu_s = sel_gp_ * dmu_w;
                const Matrix dsig_s = sel_gp_ * dsig_w * sel_gp_.transpose();

                const Vector dmu_delta =
                    mm.dmean_dmu * dmu_s + mm.dmean_dsigma * vec(dsig_s);
                const Matrix dsig_delta =
                    unvec(mm.dcov_dmu * dmu_s + mm.dcov_dsigma * vec(dsig_s), o, o);
                const Matrix dv = unvec(mm.dv_dmu * dmu_s + mm.dv_dsigma * vec(dsig_s),
                                        model_->input_dim(), o);

                const Matrix dcross =
                    dsig_w * sel_v + sig_w * sel_gp_.transpose() * dv;

                Vector dmu_joint(nzt + f + o);
                dmu_joint << dmu_w, dmu_delta;
                Matrix dsig_joint(nzt + f + o, nzt + f + o);
                dsig_joint.topLeftCorner(nzt + f, nzt + f) = dsig_w;
                dsig_joint.topRightCorner(nzt + f, o) = dcross;
                dsig_joint.bottomLeftCorner(o, nzt + f) = dcross.transpose();
                dsig_joint.bottomRightCorner(o, o) = dsig_delta;

                next_chain.dmu[static_cast<std::size_t>(k)] = next_map_ * dmu_joint;
                next_chain.dsigma[static_cast<std::size_t>(k)] =
                    symmetrized(next_map_ * dsig_joint * next_map_.transpose());
            }
            *chain = std::move(next_chain);
        }
        return next;
    }

    /// Full finite-horizon prediction from z0 under a per-step desired
    /// trajectory (index t = 0..H; constant target if the list has one entry).
    RolloutPrediction run(const Gaussian& z0, const Vector& theta,
                          const std::vector<Gaussian>& desired,
                          const RolloutOptions& opts = {}) const {
        require(z0.dim() == lay_.z_dim(), "rollout: initial state has wrong dimension");
        require(!desired.empty(), "rollout: desired trajectory required");
        const int h = cost_.horizon;
        const Index n_theta = structure_.num_gains();

        RolloutPrediction out;
        out.per_step_cost = Vector::Ones(h + 1);
        out.has_gradient = opts.want_gradient;
        out.states.reserve(static_cast<std::size_t>(h) + 1);
        out.states.push_back(z0);

        ThetaDerivs chain = ThetaDerivs::zero(lay_.z_dim(), n_theta);
        ThetaDerivs* chain_ptr = opts.want_gradient ? &chain : nullptr;
        if (opts.want_gradient)
            out.step_grads.assign(static_cast<std::size_t>(h) + 1, Vector::Zero(n_theta));

        Gaussian z = z0;
        for (int t = 0; t <= h; ++t) {
            const Gaussian& des =
                desired[std::min<std::size_t>(static_cast<std::size_t>(t), desired.size() - 1)];
            if (!z.mean.allFinite() || measured_variance(z) > opts.cov_trace_bound ||
                z.cov.trace() > 1e9) {
                out.truncated = true;
                break;  // remaining steps keep the saturated worst case of 1
            }
            check_error_block_psd(z);
            double step_cost = 0.0;
            Vector step_grad;
            if (t == h) {
                // cost of the final state; no further propagation
                const Gaussian zt = linear_transform(independent_concat(z, des), aug_);
                const Gaussian d(cost_proj_ * zt.mean,
                                 symmetrized(cost_proj_ * zt.cov * cost_proj_.transpose()));
                const auto sc = expected_saturated_cost(d, cost_w_, opts.want_gradient);
                out.per_step_cost(t) = sc.value;
                if (opts.want_gradient) {
                    for (Index k = 0; k < n_theta; ++k) {
                        const auto [dmu_zt, dsig_zt] = zt_derivs(chain, k);
                        out.step_grads[static_cast<std::size_t>(t)](k) =
                            sc.dmu.dot(cost_proj_ * dmu_zt) +
                            (sc.dsigma.array() *
                             (cost_proj_ * dsig_zt * cost_proj_.transpose()).array())
                                .sum();
                    }
                }
                ++out.steps_completed;
                break;
            }
            z = propagate_step(z, theta, des, chain_ptr, &step_cost,
                               opts.want_gradient ? &step_grad : nullptr);
            out.per_step_cost(t) = step_cost;
            if (opts.want_gradient) out.step_grads[static_cast<std::size_t>(t)] = step_grad;
            out.states.push_back(z);
            ++out.steps_completed;
        }

        out.total_cost = out.per_step_cost.sum();
        if (opts.want_gradient) {
            out.grad = Vector::Zero(n_theta);
            for (const auto& g : out.step_grads) out.grad += g;
        }
        return out;
    }

private:
    std::pair<Vector, Matrix> zt_derivs(const ThetaDerivs& chain, Index k) const {
        // z-part columns of the augment map; the desired block is independent
        // of theta
        return {tz_ * chain.dmu[static_cast<std::size_t>(k)],
                tz_ * chain.dsigma[static_cast<std::size_t>(k)] * tz_.transpose()};
    }

    double measured_variance(const Gaussian& z) const {
        double tr = 0.0;
        for (int c = 0; c < lay_.num_channels(); ++c)
            tr += z.cov(lay_.channel_offset(c), lay_.channel_offset(c));
        return tr;
    }

    void check_error_block_psd(const Gaussian& z) const {
        const int e = lay_.num_error_channels();
        const Matrix block = z.cov.block(lay_.e_prev_offset(), lay_.e_prev_offset(), 2 * e, 2 * e);
        if (!is_psd(block, 1e-6))
            throw numeric_error("rollout: error-block covariance lost positive semidefiniteness");
    }

    StateLayout lay_;
    PidStructure structure_;
    const gp::GpModel* model_;
    CostConfig cost_;
    bool with_input_cost_ = false;
    LinearMap aug_;
    Matrix tz_;
    Matrix sel_gp_;
    Matrix next_map_;
    Matrix cost_proj_;
    Matrix cost_w_;
};

}  // namespace pidtune
