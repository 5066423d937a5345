#pragma once

#include <vector>

#include "pidtune/gaussian.hpp"

namespace pidtune {

// PID terms, in the column order of the gain matrix: all P columns first,
// then I, then D (one column per error channel within each group).
enum class PidTerm : int { P = 0, I = 1, D = 2 };

inline const char* to_string(PidTerm t) {
    switch (t) {
        case PidTerm::P: return "P";
        case PidTerm::I: return "I";
        case PidTerm::D: return "D";
    }
    return "?";
}

/// One free gain: which plant input it drives, which error channel it reads,
/// and whether it is the proportional, integral or derivative term.
struct GainEntry {
    int input = 0;
    int channel = 0;
    PidTerm term = PidTerm::P;

    bool operator==(const GainEntry&) const = default;
};

/// A multivariable PID structure: the ordered list of free gains. The order
/// of entries defines the packing of the gain vector theta.
class PidStructure {
public:
    PidStructure(int num_inputs, int num_channels, std::vector<GainEntry> entries)
        : num_inputs_(num_inputs), num_channels_(num_channels),
          entries_(std::move(entries)) {
        require(num_inputs_ >= 1 && num_channels_ >= 1,
                "PidStructure: need at least one input and one error channel");
        std::vector<bool> input_used(static_cast<std::size_t>(num_inputs_), false);
        for (const auto& e : entries_) {
            require(e.input >= 0 && e.input < num_inputs_, "PidStructure: input out of range");
            require(e.channel >= 0 && e.channel < num_channels_,
                    "PidStructure: error channel out of range");
            input_used[static_cast<std::size_t>(e.input)] = true;
        }
        for (std::size_t i = 0; i < entries_.size(); ++i)
            for (std::size_t j = i + 1; j < entries_.size(); ++j)
                require(!(entries_[i] == entries_[j]), "PidStructure: duplicate gain entry");
        for (int f = 0; f < num_inputs_; ++f)
            require(input_used[static_cast<std::size_t>(f)],
                    "PidStructure: input " + std::to_string(f) + " has no active gain");
    }

    /// One full PID per channel, each driving its own input (diagonal
    /// structure; gains packed P-group, I-group, D-group).
    static PidStructure decoupled(int n) {
        std::vector<GainEntry> entries;
        for (PidTerm t : {PidTerm::P, PidTerm::I, PidTerm::D})
            for (int i = 0; i < n; ++i) entries.push_back({i, i, t});
        return PidStructure(n, n, std::move(entries));
    }

    /// Full PIDs on every channel, summed onto a single input.
    static PidStructure combined(int num_channels) {
        std::vector<GainEntry> entries;
        for (PidTerm t : {PidTerm::P, PidTerm::I, PidTerm::D})
            for (int e = 0; e < num_channels; ++e) entries.push_back({0, e, t});
        return PidStructure(1, num_channels, std::move(entries));
    }

    int num_inputs() const { return num_inputs_; }
    int num_channels() const { return num_channels_; }
    int num_gains() const { return static_cast<int>(entries_.size()); }
    const std::vector<GainEntry>& entries() const { return entries_; }

    bool active(int input, int channel, PidTerm term) const {
        for (const auto& e : entries_)
            if (e.input == input && e.channel == channel && e.term == term) return true;
        return false;
    }

    /// Column of the F x 3E gain matrix this entry scatters into.
    int column_of(const GainEntry& e) const {
        return static_cast<int>(e.term) * num_channels_ + e.channel;
    }

private:
    int num_inputs_;
    int num_channels_;
    std::vector<GainEntry> entries_;
};

/// Scatter theta into the F x 3E static gain matrix acting on (e, int e, de).
inline Matrix build_gain_matrix(const PidStructure& s, const Vector& theta) {
    require(theta.size() == s.num_gains(), "gain vector length does not match structure");
    require(theta.allFinite(), "gain vector must be finite");
    Matrix a = Matrix::Zero(s.num_inputs(), 3 * s.num_channels());
    for (int k = 0; k < s.num_gains(); ++k) {
        const auto& e = s.entries()[static_cast<std::size_t>(k)];
        a(e.input, s.column_of(e)) = theta(k);
    }
    return a;
}

/// Maps measured channel values to the error channels that are tracked
/// against the desired trajectory: e = x_des - S * measured.
struct ErrorSelector {
    Matrix s;  // E x C_meas

    explicit ErrorSelector(Matrix sel) : s(std::move(sel)) {
        for (Index r = 0; r < s.rows(); ++r)
            require(s.row(r).cwiseAbs().maxCoeff() > 0.0,
                    "ErrorSelector: row " + std::to_string(r) + " is all zero");
    }

    static ErrorSelector identity(int n) { return ErrorSelector(Matrix::Identity(n, n)); }

    Index num_error_channels() const { return s.rows(); }
    Index num_measured() const { return s.cols(); }
};

/// Layout of the tracked state z_t = (mem, e_prev, int_e) and the augmented
/// state zt_t = (z, x_des, e, int_e_tot, de).
///
/// The memory block holds, per measured channel, a history of recent values
/// (entry 0 = current), followed by the past applied inputs
/// u_{t-1}..u_{t-(input_history-1)} grouped by lag. With history lengths of 1
/// and input_history 1 it degenerates to the plain measured state.
class StateLayout {
public:
    StateLayout(std::vector<int> channel_history, int num_inputs, int input_history,
                ErrorSelector selector)
        : channel_history_(std::move(channel_history)), num_inputs_(num_inputs),
          input_history_(input_history), selector_(std::move(selector)) {
        require(!channel_history_.empty(), "StateLayout: need at least one measured channel");
        for (int n : channel_history_) require(n >= 1, "StateLayout: history lengths must be >= 1");
        require(num_inputs_ >= 1, "StateLayout: need at least one input");
        require(input_history_ >= 1, "StateLayout: input history must be >= 1");
        require(selector_.num_measured() == static_cast<Index>(channel_history_.size()),
                "StateLayout: selector width must match measured channel count");
    }

    int num_channels() const { return static_cast<int>(channel_history_.size()); }
    int num_inputs() const { return num_inputs_; }
    int input_history() const { return input_history_; }
    int num_error_channels() const { return static_cast<int>(selector_.num_error_channels()); }
    const ErrorSelector& selector() const { return selector_; }
    const std::vector<int>& channel_history() const { return channel_history_; }

    int channel_offset(int c) const {
        int off = 0;
        for (int i = 0; i < c; ++i) off += channel_history_[static_cast<std::size_t>(i)];
        return off;
    }
    int input_hist_offset() const { return channel_offset(num_channels()); }
    /// Offset of u_{t-1-lag} (lag 0 = most recent stored input) within mem.
    int input_lag_offset(int lag) const { return input_hist_offset() + lag * num_inputs_; }

    int mem_dim() const { return input_hist_offset() + num_inputs_ * (input_history_ - 1); }
    int z_dim() const { return mem_dim() + 2 * num_error_channels(); }
    int zt_dim() const { return z_dim() + 4 * num_error_channels(); }

    // block offsets within z
    int e_prev_offset() const { return mem_dim(); }
    int int_e_offset() const { return mem_dim() + num_error_channels(); }

    // block offsets within the augmented state
    int des_offset() const { return z_dim(); }
    int e_offset() const { return z_dim() + num_error_channels(); }
    int int_e_tot_offset() const { return z_dim() + 2 * num_error_channels(); }
    int de_offset() const { return z_dim() + 3 * num_error_channels(); }

    /// C x mem selector of the current value of each measured channel.
    Matrix current_measured() const {
        Matrix m = Matrix::Zero(num_channels(), mem_dim());
        for (int c = 0; c < num_channels(); ++c) m(c, channel_offset(c)) = 1.0;
        return m;
    }

    /// E x mem map from memory to tracked values: selector * current.
    Matrix tracked_from_mem() const { return selector_.s * current_measured(); }

private:
    std::vector<int> channel_history_;
    int num_inputs_;
    int input_history_;
    ErrorSelector selector_;
};

/// Affine map building the augmented state from the concatenated (z, x_des):
/// zt = (z, x_des, e, int_e_prev + dt*e, (e - e_prev)/dt).   All blocks are
/// exact linear functions, so the augmented distribution stays Gaussian with
/// exact cross-covariances.
inline LinearMap augment_map(const StateLayout& lay, double dt) {
    require(dt > 0.0, "augment: time step must be positive");
    const int z = lay.z_dim(), e = lay.num_error_channels();
    const int in_dim = z + e;  // (z, x_des)
    Matrix a = Matrix::Zero(lay.zt_dim(), in_dim);
    a.topLeftCorner(z, z).setIdentity();
    a.block(lay.des_offset(), z, e, e).setIdentity();

    // e_t = x_des - S * current(mem)
    Matrix err_row = Matrix::Zero(e, in_dim);
    err_row.block(0, 0, e, lay.mem_dim()) = -lay.tracked_from_mem();
    err_row.block(0, z, e, e).setIdentity();
    a.block(lay.e_offset(), 0, e, in_dim) = err_row;

    // running integral including the current step (rectangle rule)
    a.block(lay.int_e_tot_offset(), 0, e, in_dim) = dt * err_row;
    a.block(lay.int_e_tot_offset(), lay.int_e_offset(), e, e).setIdentity();

    // backward-difference error derivative
    a.block(lay.de_offset(), 0, e, in_dim) = err_row / dt;
    a.block(lay.de_offset(), lay.e_prev_offset(), e, e) -=
        Matrix::Identity(e, e) / dt;

    return LinearMap(std::move(a), Vector::Zero(lay.zt_dim()));
}

/// Augment a tracked state with an independent desired state (point mass or
/// Gaussian) and the derived error blocks.
inline Gaussian augment(const StateLayout& lay, const Gaussian& z,
                        const Gaussian& desired, double dt) {
    require(z.dim() == lay.z_dim(), "augment: tracked state has wrong dimension");
    require(desired.dim() == lay.num_error_channels(),
            "augment: desired state has wrong dimension");
    return linear_transform(independent_concat(z, desired), augment_map(lay, dt));
}

/// Initial tracked state z_0 = (replicated histories of x_0, zero input
/// history, x_des0 - S x_0, 0) as one joint linear image of x_0.
inline Gaussian initial_state(const StateLayout& lay, const Gaussian& x0,
                              const Vector& x_des0) {
    require(x0.dim() == lay.num_channels(), "initial_state: x0 must hold current measurements");
    require(x_des0.size() == lay.num_error_channels(),
            "initial_state: desired vector has wrong dimension");
    Matrix a = Matrix::Zero(lay.z_dim(), lay.num_channels());
    for (int c = 0; c < lay.num_channels(); ++c)
        for (int k = 0; k < lay.channel_history()[static_cast<std::size_t>(c)]; ++k)
            a(lay.channel_offset(c) + k, c) = 1.0;
    a.block(lay.e_prev_offset(), 0, lay.num_error_channels(), lay.num_channels()) =
        -lay.selector().s;
    Vector b = Vector::Zero(lay.z_dim());
    b.segment(lay.e_prev_offset(), lay.num_error_channels()) = x_des0;
    return linear_transform(x0, LinearMap(std::move(a), std::move(b)));
}

/// 3E x zt selector of the (e, int_e_tot, de) blocks the PID law reads.
inline Matrix pid_input_selector(const StateLayout& lay) {
    const int e = lay.num_error_channels();
    Matrix p = Matrix::Zero(3 * e, lay.zt_dim());
    p.block(0, lay.e_offset(), e, e).setIdentity();
    p.block(e, lay.int_e_tot_offset(), e, e).setIdentity();
    p.block(2 * e, lay.de_offset(), e, e).setIdentity();
    return p;
}

/// Full policy matrix u = A_pid * (e, int_e, de) = (A_pid * P) * zt.
inline Matrix policy_matrix(const StateLayout& lay, const PidStructure& s,
                            const Vector& theta) {
    require(s.num_channels() == lay.num_error_channels(),
            "policy: structure and layout disagree on error channels");
    return build_gain_matrix(s, theta) * pid_input_selector(lay);
}

struct ControlOutput {
    Gaussian u;
    Matrix cross;  // cov(zt, u) = Sigma_zt * (A_pid P)^T
};

/// Gaussian control output plus its exact cross-covariance with the
/// augmented state.
inline ControlOutput control(const StateLayout& lay, const Gaussian& zt,
                             const PidStructure& s, const Vector& theta) {
    require(zt.dim() == lay.zt_dim(), "control: augmented state has wrong dimension");
    const Matrix a = policy_matrix(lay, s, theta);
    const int f = s.num_inputs(), n = lay.zt_dim();
    Gaussian joint = joint_transform(zt, LinearMap(a, Vector::Zero(f)));
    ControlOutput out;
    out.u = Gaussian(joint.mean.tail(f), joint.cov.bottomRightCorner(f, f));
    out.cross = joint.cov.topRightCorner(n, f);
    return out;
}

/// Derivatives of the control distribution with respect to the augmented
/// state distribution and the gains, assembled from the linear-transform
/// derivative blocks and the theta -> A_pid scatter.
struct ControlDerivs {
    Matrix dmean_dmean_zt;   // F x Zt
    Matrix dcov_dcov_zt;     // F^2 x Zt^2
    Matrix dmean_dtheta;     // F x n_gains
    Matrix dcov_dtheta;      // F^2 x n_gains
    Matrix dcross_dtheta;    // (Zt*F) x n_gains, vec of cov(zt, u)
};

inline ControlDerivs control_derivs(const StateLayout& lay, const Gaussian& zt,
                                    const PidStructure& s, const Vector& theta) {
    require(zt.dim() == lay.zt_dim(), "control_derivs: augmented state has wrong dimension");
    const Matrix p = pid_input_selector(lay);
    const Matrix a_full = build_gain_matrix(s, theta) * p;
    const int f = s.num_inputs(), n = lay.zt_dim(), ng = s.num_gains();

    const auto base = transform_derivs(zt, LinearMap(a_full, Vector::Zero(f)));
    ControlDerivs out;
    out.dmean_dmean_zt = base.dmean_dmean_in;
    out.dcov_dcov_zt = base.dcov_dcov_in;
    out.dmean_dtheta.resize(f, ng);
    out.dcov_dtheta.resize(f * f, ng);
    out.dcross_dtheta.resize(n * f, ng);

    // cross = Sigma_zt * A_full^T; its derivative reuses the C = A^T rule
    // composed with the fixed left factor Sigma_zt.
    for (int k = 0; k < ng; ++k) {
        const auto& entry = s.entries()[static_cast<std::size_t>(k)];
        Matrix da = Matrix::Zero(f, 3 * s.num_channels());
        da(entry.input, s.column_of(entry)) = 1.0;
        const Matrix da_full = da * p;  // d A_full / d theta_k
        out.dmean_dtheta.col(k) = base.dmean_dA * vec(da_full);
        out.dcov_dtheta.col(k) = base.dcov_dA * vec(da_full);
        out.dcross_dtheta.col(k) = vec(Matrix(zt.cov * da_full.transpose()));
    }
    return out;
}

/// Direct discrete PID (rectangle-rule integral, backward-difference
/// derivative) over a deterministic error sequence. Serves as the reference
/// the augmented static-feedback path must reproduce exactly.
inline std::vector<Vector> pid_reference_sequence(const std::vector<Vector>& errors,
                                                  const PidStructure& s,
                                                  const Vector& theta, double dt) {
    require(dt > 0.0, "pid_reference_sequence: time step must be positive");
    const Matrix a = build_gain_matrix(s, theta);
    const int e = s.num_channels();
    std::vector<Vector> out;
    out.reserve(errors.size());
    Vector acc = Vector::Zero(e);
    Vector prev;
    for (const Vector& err : errors) {
        require(err.size() == e, "pid_reference_sequence: error dimension mismatch");
        if (prev.size() == 0) prev = err;  // no derivative kick at t = 0
        acc += dt * err;
        Vector stacked(3 * e);
        stacked << err, acc, (err - prev) / dt;
        out.push_back(a * stacked);
        prev = err;
    }
    return out;
}

}  // namespace pidtune
