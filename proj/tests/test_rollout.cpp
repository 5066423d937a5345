#include <catch2/catch_amalgamated.hpp>

#include "pidtune/fdcheck.hpp"
#include "pidtune/rollout/engine.hpp"
#include "support/synthetic.hpp"

using namespace pidtune;
using pidtune::testing::random_gp_model;
using pidtune::testing::random_pid_structure;

namespace {

struct Setup {
    StateLayout lay;
    PidStructure structure;
    gp::GpModel model;
    CostConfig cost;
    Vector theta;
    Gaussian z0;
    std::vector<Gaussian> desired;
};

Setup make_setup(Rng& rng, int horizon, std::vector<int> hist = {1, 1}, int f = 1,
                 int n_u = 1, double signal_scale = 0.3) {
    const int c = static_cast<int>(hist.size());
    StateLayout lay(hist, f, n_u, ErrorSelector::identity(c));
    PidStructure structure = random_pid_structure(rng, f, c);
    int gp_dim = f * n_u;
    for (int h : hist) gp_dim += h;
    gp::GpModel model = random_gp_model(rng, gp_dim, c, 12, signal_scale);

    CostConfig cost;
    cost.q = Vector::Constant(c, 10.0).asDiagonal();
    cost.r = Vector::Constant(f, 2.0).asDiagonal();
    cost.target = Vector::Zero(c);
    cost.horizon = horizon;
    cost.dt = 0.05;

    Vector theta = 0.3 * rng.normal_vector(structure.num_gains());
    Gaussian x0(0.1 * rng.normal_vector(c), rng.random_psd(c, 0.005));
    Gaussian z0 = initial_state(lay, x0, cost.target);
    std::vector<Gaussian> desired{Gaussian::point(cost.target)};
    return {std::move(lay), std::move(structure), std::move(model), std::move(cost),
            std::move(theta), std::move(z0), std::move(desired)};
}

}  // namespace

TEST_CASE("error bookkeeping blocks are copied exactly") {
    Rng rng(100);
    auto s = make_setup(rng, 5);
    RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);

    const Gaussian zt = augment(s.lay, s.z0, s.desired[0], s.cost.dt);
    const Gaussian next = engine.propagate_step(s.z0, s.theta, s.desired[0], nullptr);

    const int e = s.lay.num_error_channels();
    REQUIRE((next.mean.segment(s.lay.e_prev_offset(), e) -
             zt.mean.segment(s.lay.e_offset(), e))
                .cwiseAbs()
                .maxCoeff() <= 1e-15);
    REQUIRE((next.mean.segment(s.lay.int_e_offset(), e) -
             zt.mean.segment(s.lay.int_e_tot_offset(), e))
                .cwiseAbs()
                .maxCoeff() <= 1e-15);
}

TEST_CASE("a motionless model keeps the state mean fixed") {
    Rng rng(101);
    auto s = make_setup(rng, 5);
    for (auto& dim : s.model.dims) {
        dim.beta.setZero();
        dim.mean_offset = 0.0;
    }
    RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);
    const Gaussian next =
        engine.propagate_step(Gaussian::point(s.z0.mean), Vector::Zero(s.theta.size()),
                              s.desired[0], nullptr);
    const int c = s.lay.num_channels();
    for (int ch = 0; ch < c; ++ch)
        REQUIRE(next.mean(s.lay.channel_offset(ch)) ==
                Catch::Approx(s.z0.mean(s.lay.channel_offset(ch))).margin(1e-14));
}

TEST_CASE("one-step propagation matches a Monte Carlo simulation") {
    Rng rng(102);
    auto s = make_setup(rng, 1);
    RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);
    const Gaussian predicted = engine.propagate_step(s.z0, s.theta, s.desired[0], nullptr);

    const LinearMap aug = augment_map(s.lay, s.cost.dt);
    const Matrix pol = policy_matrix(s.lay, s.structure, s.theta);
    const Matrix sel = gp_input_selector(s.lay);
    const Matrix next_map = next_state_map(s.lay);
    const int nz = s.lay.z_dim(), nzt = s.lay.zt_dim();
    const int f = s.lay.num_inputs(), o = s.lay.num_channels();

    const int n = 400'000;
    Vector sum = Vector::Zero(nz);
    Matrix sum_sq = Matrix::Zero(nz, nz);
    Vector in_aug(nz + o), joint(nzt + f + o);
    for (int i = 0; i < n; ++i) {
        in_aug.head(nz) = rng.sample(s.z0.mean, s.z0.cov);
        in_aug.tail(o) = s.desired[0].mean;
        const Vector zt = aug.A * in_aug;
        const Vector u = pol * zt;
        joint.head(nzt) = zt;
        joint.segment(nzt, f) = u;
        const Gaussian p = gp::predict_point(s.model, sel * joint.head(nzt + f));
        for (int a = 0; a < o; ++a)
            joint(nzt + f + a) = p.mean(a) + std::sqrt(p.cov(a, a)) * rng.normal();
        const Vector zn = next_map * joint;
        sum += zn;
        sum_sq += zn * zn.transpose();
    }
    const Vector emp_mean = sum / n;
    const Matrix emp_cov = sum_sq / n - emp_mean * emp_mean.transpose();
    for (int i = 0; i < nz; ++i) {
        const double se = std::sqrt(std::max(predicted.cov(i, i), 1e-12) / n);
        REQUIRE(std::abs(emp_mean(i) - predicted.mean(i)) <= 4.5 * se);
    }
    for (int i = 0; i < nz; ++i)
        for (int j = 0; j < nz; ++j) {
            const double se = std::sqrt(
                (predicted.cov(i, i) * predicted.cov(j, j) +
                 predicted.cov(i, j) * predicted.cov(i, j)) / n) + 1e-12;
            REQUIRE(std::abs(emp_cov(i, j) - predicted.cov(i, j)) <= 5.0 * se);
        }
}

TEST_CASE("zero-horizon rollout costs only the initial state") {
    Rng rng(103);
    auto s = make_setup(rng, 0);
    RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);
    auto r = engine.run(s.z0, s.theta, s.desired);
    REQUIRE(r.states.size() == 1);
    REQUIRE(r.per_step_cost.size() == 1);
    REQUIRE(r.total_cost == r.per_step_cost(0));
    REQUIRE_FALSE(r.truncated);
}

TEST_CASE("rollout cost stays per-step bounded and states stay valid") {
    Rng rng(104);
    auto s = make_setup(rng, 20, {2, 1}, 1, 2);
    RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);
    auto r = engine.run(s.z0, s.theta, s.desired);
    REQUIRE(r.states.size() == 21);
    for (Index t = 0; t < r.per_step_cost.size(); ++t) {
        REQUIRE(r.per_step_cost(t) >= 0.0);
        REQUIRE(r.per_step_cost(t) <= 1.0);
    }
    for (const auto& st : r.states) REQUIRE(is_psd(st.cov, 1e-6));
    REQUIRE(r.total_cost == Catch::Approx(r.per_step_cost.sum()));
}

TEST_CASE("covariance blow-up truncates with worst-case fill") {
    Rng rng(105);
    auto s = make_setup(rng, 10);
    RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);
    RolloutOptions opts;
    opts.cov_trace_bound = 1e-9;  // initial state variance already exceeds this
    opts.want_gradient = true;
    auto r = engine.run(s.z0, s.theta, s.desired, opts);
    REQUIRE(r.truncated);
    REQUIRE(r.steps_completed == 0);
    REQUIRE(r.per_step_cost.isApproxToConstant(1.0));
    REQUIRE(r.total_cost == Catch::Approx(11.0));
    REQUIRE(r.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mid-rollout truncation keeps the completed prefix") {
    Rng rng(106);
    auto s = make_setup(rng, 30, {1, 1}, 1, 1, 1.5);  // noisy model: variance grows fast
    RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);
    RolloutOptions opts;
    opts.cov_trace_bound = 0.5;
    auto r = engine.run(s.z0, s.theta, s.desired, opts);
    REQUIRE(r.truncated);
    REQUIRE(r.steps_completed > 0);
    REQUIRE(r.steps_completed < 30);
    for (Index t = r.steps_completed; t <= 30; ++t) REQUIRE(r.per_step_cost(t) == 1.0);
}

TEST_CASE("cost_gradient requires gradient intermediates") {
    Rng rng(107);
    auto s = make_setup(rng, 3);
    RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);
    auto r = engine.run(s.z0, s.theta, s.desired);
    REQUIRE_THROWS_AS(cost_gradient(r), config_error);
    RolloutOptions opts;
    opts.want_gradient = true;
    auto rg = engine.run(s.z0, s.theta, s.desired, opts);
    REQUIRE(cost_gradient(rg).size() == s.theta.size());
}

TEST_CASE("rollouts are deterministic") {
    Rng rng(108);
    auto s = make_setup(rng, 12, {2, 2}, 1, 2);
    RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);
    RolloutOptions opts;
    opts.want_gradient = true;
    auto a = engine.run(s.z0, s.theta, s.desired, opts);
    auto b = engine.run(s.z0, s.theta, s.desired, opts);
    REQUIRE(a.total_cost == b.total_cost);
    REQUIRE(a.grad == b.grad);
    for (std::size_t i = 0; i < a.states.size(); ++i) {
        REQUIRE(a.states[i].mean == b.states[i].mean);
        REQUIRE(a.states[i].cov == b.states[i].cov);
    }
}

TEST_CASE("analytic policy gradient matches finite differences") {
    std::vector<double> errs;
    for (int trial = 0; trial < 8; ++trial) {
        Rng rng(200 + static_cast<std::uint64_t>(trial));
        const int f = 1 + static_cast<int>(rng.raw() % 2);
        const int n_u = 1 + static_cast<int>(rng.raw() % 2);
        std::vector<int> hist{1 + static_cast<int>(rng.raw() % 2),
                              1 + static_cast<int>(rng.raw() % 2)};
        const int horizon = 5 + static_cast<int>(rng.raw() % 21);
        auto s = make_setup(rng, horizon, hist, f, n_u);
        RolloutEngine engine(s.lay, s.structure, &s.model, s.cost);

        RolloutOptions opts;
        opts.want_gradient = true;
        opts.cov_trace_bound = 1e9;  // keep J smooth for the finite differences
        auto r = engine.run(s.z0, s.theta, s.desired, opts);
        REQUIRE_FALSE(r.truncated);

        Vector fd(s.theta.size());
        const double h = 1e-5;
        for (Index k = 0; k < s.theta.size(); ++k) {
            Vector tp = s.theta, tm = s.theta;
            tp(k) += h;
            tm(k) -= h;
            const double jp = engine.run(s.z0, tp, s.desired, {1e9, false}).total_cost;
            const double jm = engine.run(s.z0, tm, s.desired, {1e9, false}).total_cost;
            fd(k) = (jp - jm) / (2.0 * h);
        }
        accumulate_errors(r.grad.transpose(), fd.transpose(), errs);
    }
    auto stats = error_stats(errs);
    INFO("max " << stats.max << " median " << stats.median);
    REQUIRE(stats.max <= 1e-4);
    REQUIRE(stats.median <= 1e-6);
}
