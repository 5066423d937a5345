#include <catch2/catch_amalgamated.hpp>

#include "pidtune/fdcheck.hpp"
#include "pidtune/pid_policy.hpp"
#include "pidtune/rng.hpp"

using namespace pidtune;

namespace {

Vector vec1(double a) { return Vector::Constant(1, a); }

StateLayout scalar_layout() {
    // one measured channel, no histories: z = (x, e_prev, int_e)
    return StateLayout({1}, 1, 1, ErrorSelector::identity(1));
}

PidStructure random_structure(Rng& rng, int max_inputs = 3, int max_channels = 3) {
    const int f = 1 + static_cast<int>(rng.raw() % max_inputs);
    const int e = 1 + static_cast<int>(rng.raw() % max_channels);
    std::vector<GainEntry> entries;
    for (int i = 0; i < f; ++i)
        for (int c = 0; c < e; ++c)
            for (PidTerm t : {PidTerm::P, PidTerm::I, PidTerm::D})
                if (rng.uniform() < 0.5) entries.push_back({i, c, t});
    // guarantee every input drives something
    for (int i = 0; i < f; ++i) {
        bool used = false;
        for (const auto& en : entries) used = used || en.input == i;
        if (!used) entries.push_back({i, static_cast<int>(rng.raw() % e), PidTerm::P});
    }
    return PidStructure(f, e, std::move(entries));
}

}  // namespace

TEST_CASE("gain matrix reproduces the two reference structures") {
    Vector theta(6);
    theta << 1, 2, 3, 4, 5, 6;

    SECTION("individual PIDs per input") {
        auto a = build_gain_matrix(PidStructure::decoupled(2), theta);
        Matrix want(2, 6);
        want << 1, 0, 3, 0, 5, 0,
                0, 2, 0, 4, 0, 6;
        REQUIRE(a.isApprox(want));
    }
    SECTION("PIDs combined onto one input") {
        auto a = build_gain_matrix(PidStructure::combined(2), theta);
        Matrix want(1, 6);
        want << 1, 2, 3, 4, 5, 6;
        REQUIRE(a.isApprox(want));
    }
    SECTION("zero gains give the zero matrix") {
        auto a = build_gain_matrix(PidStructure::decoupled(2), Vector::Zero(6));
        REQUIRE(a.cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("length mismatch throws") {
        REQUIRE_THROWS_AS(build_gain_matrix(PidStructure::decoupled(2), Vector::Zero(5)),
                          config_error);
    }
}

TEST_CASE("gain matrix is zero exactly off the mask") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = random_structure(rng);
        Vector theta = rng.normal_vector(s.num_gains());
        // ensure no active gain is accidentally zero
        for (Index i = 0; i < theta.size(); ++i)
            if (theta(i) == 0.0) theta(i) = 1.0;
        auto a = build_gain_matrix(s, theta);
        for (int f = 0; f < s.num_inputs(); ++f)
            for (int c = 0; c < s.num_channels(); ++c)
                for (PidTerm t : {PidTerm::P, PidTerm::I, PidTerm::D}) {
                    const double v = a(f, static_cast<int>(t) * s.num_channels() + c);
                    if (s.active(f, c, t))
                        REQUIRE(v != 0.0);
                    else
                        REQUIRE(v == 0.0);
                }
    }
}

TEST_CASE("initial state ties the error block to x0") {
    Rng rng(4);
    const auto lay = StateLayout({1, 1}, 1, 1, ErrorSelector::identity(2));

    SECTION("zero-mean start with zero target") {
        Matrix sigma = rng.random_psd(2);
        auto z0 = initial_state(lay, Gaussian(Vector::Zero(2), sigma), Vector::Zero(2));
        REQUIRE(z0.mean.cwiseAbs().maxCoeff() == 0.0);
        // error block is -x0: covariance Sigma, cross-covariance -Sigma
        REQUIRE(z0.cov.block(2, 2, 2, 2).isApprox(sigma));
        REQUIRE(z0.cov.block(0, 2, 2, 2).isApprox(Matrix(-sigma)));
        // accumulated-error block exactly zero
        REQUIRE(z0.cov.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("deterministic start gives exact error") {
        Vector x0(2), des(2);
        x0 << 0.1, -0.3;
        des << 0.2, 0.0;
        auto z0 = initial_state(lay, Gaussian::point(x0), des);
        REQUIRE(z0.cov.cwiseAbs().maxCoeff() == 0.0);
        REQUIRE(z0.mean.segment(2, 2).isApprox(Vector(des - x0)));
    }
    SECTION("target at the mean zeroes the error mean, keeps its spread") {
        Vector mu(2);
        mu << 0.4, 1.0;
        Matrix sigma = rng.random_psd(2);
        auto z0 = initial_state(lay, Gaussian(mu, sigma), mu);
        REQUIRE(z0.mean.segment(2, 2).cwiseAbs().maxCoeff() <= 1e-15);
        REQUIRE(z0.cov.block(2, 2, 2, 2).isApprox(sigma));
    }
    SECTION("history slots replicate the current value") {
        const auto deep = StateLayout({3, 2}, 1, 2, ErrorSelector::identity(2));
        Vector x0(2);
        x0 << 0.5, -0.2;
        auto z0 = initial_state(deep, Gaussian::point(x0), Vector::Zero(2));
        REQUIRE(z0.mean.segment(0, 3).isApproxToConstant(0.5));
        REQUIRE(z0.mean.segment(3, 2).isApproxToConstant(-0.2));
        // stored past input starts at zero
        REQUIRE(z0.mean.segment(5, 1).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("augmentation reproduces the discrete error terms") {
    const auto lay = scalar_layout();
    const double dt = 0.04;

    SECTION("hand-evaluated integral and derivative") {
        // z = (x, e_prev, int_e) deterministic; desired chosen so e_t = 0.2
        Vector z(3);
        z << 0.0, 0.1, 0.5;
        auto zt = augment(lay, Gaussian::point(z), Gaussian::point(vec1(0.2)), dt);
        REQUIRE(zt.mean(lay.e_offset()) == Catch::Approx(0.2).margin(1e-15));
        REQUIRE(zt.mean(lay.int_e_tot_offset()) == Catch::Approx(0.508).margin(1e-15));
        REQUIRE(zt.mean(lay.de_offset()) == Catch::Approx(2.5).margin(1e-12));
    }
    SECTION("constant error has zero derivative block") {
        Vector z(3);
        z << 0.3, 0.2, 0.0;
        // desired = x + e_prev so that e_t == e_prev
        auto zt = augment(lay, Gaussian::point(z), Gaussian::point(vec1(0.5)), dt);
        REQUIRE(std::abs(zt.mean(lay.de_offset())) <= 1e-12);
    }
    SECTION("desired-state spread adds exactly to the error variance") {
        Rng rng(9);
        Gaussian z(rng.normal_vector(3), rng.random_psd(3));
        auto tight = augment(lay, z, Gaussian::point(vec1(0.0)), dt);
        auto wide = augment(lay, z, Gaussian(vec1(0.0), Matrix::Constant(1, 1, 0.01)), dt);
        const Index k = lay.e_offset();
        REQUIRE(wide.cov(k, k) - tight.cov(k, k) == Catch::Approx(0.01).margin(1e-14));
    }
    SECTION("non-positive time step throws") {
        Vector z = Vector::Zero(3);
        REQUIRE_THROWS_AS(augment(lay, Gaussian::point(z), Gaussian::point(vec1(0.0)), 0.0),
                          config_error);
    }
}

TEST_CASE("control output for hand-evaluated scalar PID") {
    const auto lay = scalar_layout();
    auto s = PidStructure::combined(1);
    Vector theta(3);
    theta << 1.0, 0.5, 0.01;

    // deterministic augmented state with (e, int_e, de) = (0.2, 0.508, 2.5)
    Vector zt = Vector::Zero(lay.zt_dim());
    zt(lay.e_offset()) = 0.2;
    zt(lay.int_e_tot_offset()) = 0.508;
    zt(lay.de_offset()) = 2.5;
    auto out = control(lay, Gaussian::point(zt), s, theta);
    REQUIRE(out.u.mean(0) == Catch::Approx(0.479).margin(1e-15));
    REQUIRE(out.u.cov(0, 0) == 0.0);
}

TEST_CASE("zero gains give a zero point-mass control") {
    Rng rng(31);
    const auto lay = StateLayout({1, 1}, 2, 1, ErrorSelector::identity(2));
    auto s = PidStructure::decoupled(2);
    Gaussian zt(rng.normal_vector(lay.zt_dim()), rng.random_psd(lay.zt_dim()));
    auto out = control(lay, zt, s, Vector::Zero(6));
    REQUIRE(out.u.mean.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(out.u.cov.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(out.cross.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("P-only gain scales the error variance quadratically") {
    const auto lay = scalar_layout();
    PidStructure s(1, 1, {{0, 0, PidTerm::P}});
    const double kp = 1.7, var_e = 0.09;
    Gaussian zt(Vector::Zero(lay.zt_dim()), Matrix::Zero(lay.zt_dim(), lay.zt_dim()));
    zt.cov(lay.e_offset(), lay.e_offset()) = var_e;
    auto out = control(lay, zt, s, vec1(kp));
    REQUIRE(out.u.cov(0, 0) == Catch::Approx(kp * kp * var_e));
}

TEST_CASE("control derivatives match finite differences") {
    Rng rng(77);
    std::vector<double> errs;
    for (int trial = 0; trial < 10; ++trial) {
        auto s = random_structure(rng, 2, 2);
        const auto lay = StateLayout(std::vector<int>(static_cast<std::size_t>(s.num_channels()), 1),
                                     s.num_inputs(), 1,
                                     ErrorSelector::identity(s.num_channels()));
        Gaussian zt(rng.normal_vector(lay.zt_dim()), rng.random_psd(lay.zt_dim()));
        Vector theta = rng.normal_vector(s.num_gains());
        auto d = control_derivs(lay, zt, s, theta);

        auto fd_mu = finite_difference(
            [&](const Vector& th) { return Vector(control(lay, zt, s, th).u.mean); }, theta);
        accumulate_errors(d.dmean_dtheta, fd_mu, errs);

        auto fd_cov = finite_difference(
            [&](const Vector& th) { return Vector(vec(control(lay, zt, s, th).u.cov)); }, theta);
        accumulate_errors(d.dcov_dtheta, fd_cov, errs);

        auto fd_cross = finite_difference(
            [&](const Vector& th) { return Vector(vec(control(lay, zt, s, th).cross)); }, theta);
        accumulate_errors(d.dcross_dtheta, fd_cross, errs);

        auto fd_state_mu = finite_difference(
            [&](const Vector& mu) {
                return Vector(control(lay, Gaussian(mu, zt.cov), s, theta).u.mean);
            },
            zt.mean);
        accumulate_errors(d.dmean_dmean_zt, fd_state_mu, errs);
    }
    auto stats = error_stats(errs);
    REQUIRE(stats.max <= 1e-6);
}

TEST_CASE("P-only sensitivity to the gain equals the error mean") {
    const auto lay = scalar_layout();
    PidStructure s(1, 1, {{0, 0, PidTerm::P}});
    Vector zt_mean = Vector::Zero(lay.zt_dim());
    zt_mean(lay.e_offset()) = 0.37;
    Gaussian zt(zt_mean, Matrix::Zero(lay.zt_dim(), lay.zt_dim()));
    auto d = control_derivs(lay, zt, s, vec1(2.0));
    REQUIRE(d.dmean_dtheta(0, 0) == Catch::Approx(0.37));
}

TEST_CASE("reference PID closed forms") {
    auto s = PidStructure::combined(1);
    const double dt = 0.04;

    SECTION("P-only on constant error") {
        Vector theta(3);
        theta << 2.0, 0.0, 0.0;
        std::vector<Vector> errors(10, vec1(0.3));
        auto u = pid_reference_sequence(errors, s, theta, dt);
        for (const auto& ut : u) REQUIRE(ut(0) == Catch::Approx(0.6).margin(1e-15));
    }
    SECTION("I-only accumulates the rectangle rule") {
        Vector theta(3);
        theta << 0.0, 1.5, 0.0;
        std::vector<Vector> errors(8, vec1(0.2));
        auto u = pid_reference_sequence(errors, s, theta, dt);
        for (std::size_t t = 0; t < u.size(); ++t)
            REQUIRE(u[t](0) ==
                    Catch::Approx(1.5 * dt * static_cast<double>(t + 1) * 0.2).margin(1e-13));
    }
}

TEST_CASE("static feedback on the augmented state equals direct PID") {
    // the equivalence at the heart of the augmentation: run 100-step random
    // error sequences through both paths for random structures and gains
    Rng rng(123);
    const double dt = 0.02;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        auto s = random_structure(rng);
        const int e = s.num_channels();
        const auto lay = StateLayout(std::vector<int>(static_cast<std::size_t>(e), 1),
                                     s.num_inputs(), 1, ErrorSelector::identity(e));
        Vector theta = 2.0 * rng.normal_vector(s.num_gains());

        std::vector<Vector> errors;
        Vector walk = rng.normal_vector(e) * 0.1;
        for (int t = 0; t < 100; ++t) {
            errors.push_back(walk);
            walk += 0.05 * rng.normal_vector(e);
        }
        auto reference = pid_reference_sequence(errors, s, theta, dt);

        // augmented path: measured state fixed at zero, desired = error
        Gaussian z = initial_state(lay, Gaussian::point(Vector::Zero(e)), errors[0]);
        for (int t = 0; t < 100; ++t) {
            auto zt = augment(lay, z, Gaussian::point(errors[static_cast<std::size_t>(t)]), dt);
            auto u = control(lay, zt, s, theta);
            worst = std::max(worst,
                             (u.u.mean - reference[static_cast<std::size_t>(t)]).cwiseAbs().maxCoeff());
            // bookkeeping: z_{t+1} keeps the memory and copies (e_t, int_e_tot)
            Vector znext = z.mean;
            znext.segment(lay.e_prev_offset(), e) = zt.mean.segment(lay.e_offset(), e);
            znext.segment(lay.int_e_offset(), e) = zt.mean.segment(lay.int_e_tot_offset(), e);
            z = Gaussian::point(znext);
        }
    }
    REQUIRE(worst <= 1e-12);
}

TEST_CASE("augment and control are exact pushforwards (Monte Carlo)") {
    Rng rng(55);
    const auto lay = StateLayout({1, 1}, 1, 1, ErrorSelector::identity(2));
    auto s = PidStructure::combined(2);
    Vector theta = rng.normal_vector(6);
    Gaussian z(rng.normal_vector(lay.z_dim()), rng.random_psd(lay.z_dim(), 0.5));
    Gaussian des(rng.normal_vector(2), rng.random_psd(2, 0.01));
    const double dt = 0.04;

    auto zt = augment(lay, z, des, dt);
    auto u = control(lay, zt, s, theta);

    const auto map = augment_map(lay, dt);
    const Matrix pol = policy_matrix(lay, s, theta);
    const int n = 1'000'000;
    double sum = 0.0, sum_sq = 0.0;
    Vector zs(lay.z_dim() + 2);
    for (int i = 0; i < n; ++i) {
        zs.head(lay.z_dim()) = rng.sample(z.mean, z.cov);
        zs.tail(2) = rng.sample(des.mean, des.cov);
        const double us = pol.row(0).dot(map.A * zs);
        sum += us;
        sum_sq += us * us;
    }
    const double emp_mean = sum / n;
    const double emp_var = sum_sq / n - emp_mean * emp_mean;
    const double se_mean = std::sqrt(u.u.cov(0, 0) / n);
    REQUIRE(std::abs(emp_mean - u.u.mean(0)) <= 4.0 * se_mean);
    const double se_var = u.u.cov(0, 0) * std::sqrt(2.0 / n);
    REQUIRE(std::abs(emp_var - u.u.cov(0, 0)) <= 4.0 * se_var);
}
