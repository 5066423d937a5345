#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pidtune/gaussian.hpp"
#include "pidtune/gp/dataset.hpp"
#include "pidtune/gp/inducing.hpp"
#include "pidtune/gp/kernel.hpp"

namespace pidtune::gp {

/// Kernel hyperparameters of one output dimension, kept in log space.
struct Hyperparams {
    Vector log_lengthscales;
    double log_signal_std = 0.0;
    double log_noise_std = std::log(0.1);

    Vector lengthscales() const { return log_lengthscales.array().exp(); }
    double signal_std() const { return std::exp(log_signal_std); }
    double noise_std() const { return std::exp(log_noise_std); }
    double signal_var() const { return std::exp(2.0 * log_signal_std); }
    double noise_var() const { return std::exp(2.0 * log_noise_std); }

    Vector pack() const {
        Vector v(log_lengthscales.size() + 2);
        v << log_lengthscales, log_signal_std, log_noise_std;
        return v;
    }
    static Hyperparams unpack(const Vector& v) {
        Hyperparams h;
        h.log_lengthscales = v.head(v.size() - 2);
        h.log_signal_std = v(v.size() - 2);
        h.log_noise_std = v(v.size() - 1);
        return h;
    }
};

/// Fitted posterior of one output dimension in the common form
///   mean(x)  = sum_i beta_i k(x, s_i) + mean_offset
///   var(x)   = sigma_f^2 - k(x,S) B k(S,x) [+ sigma_n^2]
/// which covers both the exact GP (sites = training inputs, B = (K+sn^2 I)^-1)
/// and the pseudo-input sparse approximation.
struct Predictor {
    Hyperparams hyp;
    Matrix sites;   // M x D
    Vector beta;    // M
    Matrix b_mat;   // M x M, symmetric
    double mean_offset = 0.0;

    SeArd kernel() const { return {hyp.lengthscales(), hyp.signal_var()}; }
    Index num_sites() const { return sites.rows(); }
};

struct GpModel {
    std::vector<Predictor> dims;  // one per output dimension
    bool predict_noise = true;    // add sigma_n^2 to predictive variances

    Index input_dim() const { return dims.empty() ? 0 : dims.front().sites.cols(); }
    Index output_dim() const { return static_cast<Index>(dims.size()); }
};

namespace detail {

/// Cholesky with a tiny baseline jitter; on rank deficiency falls back to the
/// documented jitter of 1e-6 * sigma_f^2 (escalated tenfold as needed) and
/// records a warning.
inline Eigen::LLT<Matrix> chol_with_jitter(const Matrix& k, double signal_var,
                                           std::vector<std::string>* warnings,
                                           const char* what) {
    const Matrix eye = Matrix::Identity(k.rows(), k.cols());
    Eigen::LLT<Matrix> llt(k + (1e-10 * signal_var) * eye);
    double j = 1e-6 * signal_var;
    for (int attempt = 0; llt.info() != Eigen::Success && attempt < 6; ++attempt) {
        if (warnings)
            warnings->push_back(std::string(what) + ": rank deficient, jitter " +
                                std::to_string(j));
        llt.compute(k + j * eye);
        j *= 10.0;
    }
    if (llt.info() != Eigen::Success)
        throw numeric_error(std::string(what) + ": Cholesky failed even with jitter");
    return llt;
}

}  // namespace detail

/// Exact GP posterior per output dimension (sites are the training inputs).
/// Hyperparameters are given in raw data units.
inline GpModel fit_full(const TrainingSet& data, const std::vector<Hyperparams>& hyps,
                        std::vector<std::string>* warnings = nullptr) {
    data.validate();
    require(static_cast<Index>(hyps.size()) == data.output_dim(),
            "fit_full: one hyperparameter set per output dimension required");
    GpModel model;
    for (Index a = 0; a < data.output_dim(); ++a) {
        const Hyperparams& hyp = hyps[static_cast<std::size_t>(a)];
        require(hyp.log_lengthscales.size() == data.input_dim(),
                "fit_full: lengthscale count must match input dimension");
        Predictor p;
        p.hyp = hyp;
        p.sites = data.inputs;
        SeArd k = p.kernel();
        Matrix ky = k(p.sites, p.sites);
        ky.diagonal().array() += hyp.noise_var();
        auto llt = detail::chol_with_jitter(ky, hyp.signal_var(), warnings, "fit_full");
        Vector y = data.targets.col(a);
        const double offset = y.mean();
        y.array() -= offset;
        p.beta = llt.solve(y);
        p.b_mat = llt.solve(Matrix::Identity(data.size(), data.size()));
        p.b_mat = symmetrized(p.b_mat);
        p.mean_offset = offset;
        model.dims.push_back(std::move(p));
    }
    return model;
}

struct SparseOptions {
    enum class Init { KMeans, Subset };
    Init init = Init::KMeans;
    std::uint64_t seed = 0;
};

/// Pseudo-input sparse posterior (Snelson & Ghahramani's approximation):
/// conditioning cost O(N M^2), prediction cost O(M) mean / O(M^2) variance.
/// With m == N and inducing set equal to the training inputs this reproduces
/// the exact GP.
inline GpModel fit_sparse(const TrainingSet& data, Index m,
                          const std::vector<Hyperparams>& hyps,
                          const SparseOptions& opts = {},
                          std::vector<std::string>* warnings = nullptr) {
    data.validate();
    require(m >= 1, "fit_sparse: need at least one inducing input");
    require(static_cast<Index>(hyps.size()) == data.output_dim(),
            "fit_sparse: one hyperparameter set per output dimension required");
    m = std::min(m, data.size());

    GpModel model;
    for (Index a = 0; a < data.output_dim(); ++a) {
        const Hyperparams& hyp = hyps[static_cast<std::size_t>(a)];
        Predictor p;
        p.hyp = hyp;
        if (m == data.size())
            p.sites = data.inputs;
        else if (opts.init == SparseOptions::Init::KMeans)
            p.sites = kmeans_centers(data.inputs, m, Rng::derive(opts.seed, static_cast<std::uint64_t>(a)));
        else
            p.sites = random_subset_rows(data.inputs, m, Rng::derive(opts.seed, static_cast<std::uint64_t>(a)));

        SeArd k = p.kernel();
        Matrix kuu = k(p.sites, p.sites);
        auto luu = detail::chol_with_jitter(kuu, hyp.signal_var(), warnings, "fit_sparse K_uu");
        const Matrix kuf = k(p.sites, data.inputs);  // M x N

        // FITC noise: diag(K_ff - Q_ff) + sigma_n^2
        const Matrix v = luu.matrixL().solve(kuf);  // M x N
        Vector lam = Vector::Constant(data.size(), hyp.signal_var() + hyp.noise_var());
        lam -= v.colwise().squaredNorm().transpose();
        lam = lam.cwiseMax(hyp.noise_var() * 1e-8);

        Vector y = data.targets.col(a);
        const double offset = y.mean();
        y.array() -= offset;

        const Matrix kuf_g = kuf * lam.cwiseInverse().asDiagonal();  // M x N
        const Matrix sq = kuu + kuf_g * kuf.transpose();
        auto lq = detail::chol_with_jitter(sq, hyp.signal_var(), warnings, "fit_sparse Sigma_q");

        p.beta = lq.solve(kuf_g * y);
        // B = K_uu^-1 - Sigma_q^-1, evaluated as K_uu^-1 (K_uf Lam^-1 K_fu)
        // Sigma_q^-1; the difference form cancels catastrophically when K_uu
        // is near singular (heavily overlapping regressor rows)
        const Matrix p_mat = kuf_g * kuf.transpose();
        p.b_mat = symmetrized(luu.solve(lq.solve(p_mat).transpose()));
        p.mean_offset = offset;
        model.dims.push_back(std::move(p));
    }
    return model;
}

/// Predictive distribution at a deterministic input. Per-dimension GPs are
/// independent, so the covariance is diagonal.
inline Gaussian predict_point(const GpModel& model, const Vector& x) {
    require(x.size() == model.input_dim(), "predict_point: input dimension mismatch");
    const Index o = model.output_dim();
    Vector mean(o), var(o);
    for (Index a = 0; a < o; ++a) {
        const Predictor& p = model.dims[static_cast<std::size_t>(a)];
        const Vector ks = p.kernel().row(x, p.sites);
        mean(a) = ks.dot(p.beta) + p.mean_offset;
        double v = p.hyp.signal_var() - ks.dot(p.b_mat * ks);
        if (model.predict_noise) v += p.hyp.noise_var();
        var(a) = std::max(v, 0.0);
    }
    return Gaussian(std::move(mean), Matrix(var.asDiagonal()));
}

// ---- checkpoint serialization ----------------------------------------------

inline nlohmann::json to_json(const Predictor& p) {
    nlohmann::json j;
    j["log_lengthscales"] = std::vector<double>(p.hyp.log_lengthscales.begin(),
                                                p.hyp.log_lengthscales.end());
    j["log_signal_std"] = p.hyp.log_signal_std;
    j["log_noise_std"] = p.hyp.log_noise_std;
    j["mean_offset"] = p.mean_offset;
    j["beta"] = std::vector<double>(p.beta.begin(), p.beta.end());
    auto dump_matrix = [](const Matrix& m) {
        std::vector<std::vector<double>> rows;
        for (Index i = 0; i < m.rows(); ++i)
            rows.emplace_back(m.row(i).begin(), m.row(i).end());
        return rows;
    };
    j["sites"] = dump_matrix(p.sites);
    j["b"] = dump_matrix(p.b_mat);
    return j;
}

inline nlohmann::json to_json(const GpModel& model) {
    nlohmann::json j;
    j["format"] = "gp-checkpoint-v1";
    j["target_convention"] = "difference";
    j["predict_noise"] = model.predict_noise;
    j["dims"] = nlohmann::json::array();
    for (const auto& p : model.dims) j["dims"].push_back(to_json(p));
    return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    const Index rows = static_cast<Index>(j.size());
    if (rows == 0) return Matrix(0, 0);
    const Index cols = static_cast<Index>(j.at(0).size());
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    return m;
}

inline GpModel gp_model_from_json(const nlohmann::json& j) {
    require(j.value("format", "") == "gp-checkpoint-v1", "unknown gp checkpoint format");
    GpModel model;
    model.predict_noise = j.value("predict_noise", true);
    for (const auto& dj : j.at("dims")) {
        Predictor p;
        const auto lls = dj.at("log_lengthscales").get<std::vector<double>>();
        p.hyp.log_lengthscales = Eigen::Map<const Vector>(lls.data(), static_cast<Index>(lls.size()));
        p.hyp.log_signal_std = dj.at("log_signal_std").get<double>();
        p.hyp.log_noise_std = dj.at("log_noise_std").get<double>();
        p.mean_offset = dj.at("mean_offset").get<double>();
        const auto beta = dj.at("beta").get<std::vector<double>>();
        p.beta = Eigen::Map<const Vector>(beta.data(), static_cast<Index>(beta.size()));
        p.sites = matrix_from_json(dj.at("sites"));
        p.b_mat = matrix_from_json(dj.at("b"));
        model.dims.push_back(std::move(p));
    }
    return model;
}

}  // namespace pidtune::gp
