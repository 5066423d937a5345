#include <catch2/catch_amalgamated.hpp>

#include "pidtune/fdcheck.hpp"
#include "pidtune/gaussian.hpp"
#include "pidtune/rng.hpp"

using namespace pidtune;

namespace {

Matrix m2(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m << a, b, c, d;
    return m;
}

Vector v2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

}  // namespace

TEST_CASE("linear_transform basic cases") {
    Gaussian g(v2(1.0, 2.0), m2(1.0, 0.0, 0.0, 4.0));

    SECTION("identity map leaves the distribution unchanged") {
        auto out = linear_transform(g, LinearMap::identity(2));
        REQUIRE(out.mean.isApprox(g.mean));
        REQUIRE(out.cov.isApprox(g.cov));
    }

    SECTION("diagonal scale plus shift") {
        LinearMap m(m2(2.0, 0.0, 0.0, 1.0), v2(0.0, 1.0));
        auto out = linear_transform(g, m);
        REQUIRE(out.mean.isApprox(v2(2.0, 3.0)));
        REQUIRE(out.cov.isApprox(m2(4.0, 0.0, 0.0, 4.0)));
    }

    SECTION("zero map collapses to a point mass at b") {
        LinearMap m(Matrix::Zero(2, 2), v2(-1.0, 7.0));
        auto out = linear_transform(g, m);
        REQUIRE(out.mean.isApprox(v2(-1.0, 7.0)));
        REQUIRE(out.cov.cwiseAbs().maxCoeff() == 0.0);
    }

    SECTION("dimension mismatch throws") {
        LinearMap m(Matrix::Zero(2, 3), v2(0.0, 0.0));
        REQUIRE_THROWS_AS(linear_transform(g, m), config_error);
    }
}

TEST_CASE("joint_transform block structure") {
    Gaussian g(v2(1.0, 2.0), m2(1.0, 0.0, 0.0, 4.0));

    SECTION("identity map gives perfectly correlated copy") {
        auto out = joint_transform(g, LinearMap::identity(2));
        REQUIRE(out.dim() == 4);
        REQUIRE(out.cov.topRightCorner(2, 2).isApprox(g.cov));
        REQUIRE(out.cov.bottomLeftCorner(2, 2).isApprox(g.cov));
        REQUIRE(out.cov.bottomRightCorner(2, 2).isApprox(g.cov));
    }

    SECTION("cross covariance is Sigma A^T") {
        LinearMap m(m2(2.0, 0.0, 0.0, 1.0), Vector::Zero(2));
        auto out = joint_transform(g, m);
        REQUIRE(out.cov.topRightCorner(2, 2).isApprox(m2(2.0, 0.0, 0.0, 4.0)));
    }

    SECTION("zero map gives zero cross block") {
        LinearMap m(Matrix::Zero(2, 2), Vector::Zero(2));
        auto out = joint_transform(g, m);
        REQUIRE(out.cov.topRightCorner(2, 2).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("independent_concat stacks with zero cross blocks") {
    Gaussian a(Vector::Zero(1), Matrix::Identity(1, 1));
    auto out = independent_concat(a, a);
    REQUIRE(out.mean.isApprox(Vector::Zero(2)));
    REQUIRE(out.cov.isApprox(Matrix::Identity(2, 2)));

    Gaussian g1(Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 2.0));
    Gaussian g2(Vector::Constant(1, 3.0), Matrix::Constant(1, 1, 4.0));
    auto out2 = independent_concat(g1, g2);
    REQUIRE(out2.mean.isApprox(v2(1.0, 3.0)));
    REQUIRE(out2.cov.isApprox(m2(2.0, 0.0, 0.0, 4.0)));

    Rng rng(7);
    Gaussian z(rng.normal_vector(3), rng.random_psd(3));
    Gaussian des(rng.normal_vector(2), rng.random_psd(2));
    auto joint = independent_concat(z, des);
    REQUIRE(joint.cov.topLeftCorner(3, 3).isApprox(z.cov));
    REQUIRE(joint.cov.bottomRightCorner(2, 2).isApprox(des.cov));
    REQUIRE(joint.cov.topRightCorner(3, 2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("transform_derivs identity and b blocks") {
    Rng rng(3);
    Gaussian g(rng.normal_vector(3), rng.random_psd(3));
    auto d = transform_derivs(g, LinearMap::identity(3));
    REQUIRE(d.dmean_dmean_in.isApprox(Matrix::Identity(3, 3)));
    REQUIRE(d.dcov_dcov_in.isApprox(Matrix::Identity(9, 9)));
    REQUIRE(d.dmean_db.isApprox(Matrix::Identity(3, 3)));
}

TEST_CASE("transform_derivs matches finite differences") {
    Rng rng(11);
    std::vector<double> errs;
    for (int trial = 0; trial < 20; ++trial) {
        const Index d = 1 + static_cast<Index>(rng.raw() % 5);
        const Index p = 1 + static_cast<Index>(rng.raw() % 5);
        Gaussian g(rng.normal_vector(d), rng.random_psd(d));
        LinearMap m(rng.normal_matrix(p, d), rng.normal_vector(p));
        auto derivs = transform_derivs(g, m);

        auto fd_mu = finite_difference(
            [&](const Vector& mu) { return Vector(m.A * mu + m.b); }, g.mean);
        accumulate_errors(derivs.dmean_dmean_in, fd_mu, errs);

        auto fd_cov = finite_difference(
            [&](const Vector& s) {
                return Vector(vec(m.A * unvec(s, d, d) * m.A.transpose()));
            },
            vec(g.cov));
        accumulate_errors(derivs.dcov_dcov_in, fd_cov, errs);

        auto fd_mean_A = finite_difference(
            [&](const Vector& a) { return Vector(unvec(a, p, d) * g.mean + m.b); },
            vec(m.A));
        accumulate_errors(derivs.dmean_dA, fd_mean_A, errs);

        auto fd_cov_A = finite_difference(
            [&](const Vector& a) {
                Matrix A = unvec(a, p, d);
                return Vector(vec(A * g.cov * A.transpose()));
            },
            vec(m.A));
        accumulate_errors(derivs.dcov_dA, fd_cov_A, errs);

        auto fd_cross_A = finite_difference(
            [&](const Vector& a) { return Vector(vec(Matrix(unvec(a, p, d).transpose()))); },
            vec(m.A));
        accumulate_errors(derivs.dcrosscov_dA, fd_cross_A, errs);

        auto fd_b = finite_difference(
            [&](const Vector& b) { return Vector(m.A * g.mean + b); }, m.b);
        accumulate_errors(derivs.dmean_db, fd_b, errs);
    }
    auto stats = error_stats(errs);
    REQUIRE(stats.max <= 1e-5);
    REQUIRE(stats.median <= 1e-7);
}

TEST_CASE("linear_transform output covariance stays symmetric PSD") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const Index d = 1 + static_cast<Index>(rng.raw() % 5);
        const Index p = 1 + static_cast<Index>(rng.raw() % 5);
        Gaussian g(rng.normal_vector(d), rng.random_psd(d));
        LinearMap m(rng.normal_matrix(p, d), rng.normal_vector(p));
        auto out = linear_transform(g, m);
        REQUIRE(is_symmetric(out.cov));
        REQUIRE(is_psd(out.cov));
    }
}

TEST_CASE("composition of linear transforms") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        Gaussian g(rng.normal_vector(4), rng.random_psd(4));
        LinearMap m1(rng.normal_matrix(3, 4), rng.normal_vector(3));
        LinearMap m2(rng.normal_matrix(2, 3), rng.normal_vector(2));
        auto two_step = linear_transform(linear_transform(g, m1), m2);
        LinearMap composed(m2.A * m1.A, m2.A * m1.b + m2.b);
        auto one_step = linear_transform(g, composed);
        REQUIRE(two_step.mean.isApprox(one_step.mean, 1e-10));
        REQUIRE(two_step.cov.isApprox(one_step.cov, 1e-10));
    }
}

TEST_CASE("Monte Carlo agreement of pushed-forward moments") {
    Rng rng(42);
    Gaussian g(v2(0.3, -1.2), m2(1.0, 0.4, 0.4, 2.0));
    LinearMap m(m2(1.5, -0.5, 0.2, 0.8), v2(0.1, -0.2));
    auto out = linear_transform(g, m);

    const int n = 1'000'000;
    Vector sum = Vector::Zero(2);
    Matrix sum_sq = Matrix::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
        Vector y = m.A * rng.sample(g.mean, g.cov) + m.b;
        sum += y;
        sum_sq += y * y.transpose();
    }
    Vector emp_mean = sum / n;
    Matrix emp_cov = sum_sq / n - emp_mean * emp_mean.transpose();

    for (Index i = 0; i < 2; ++i) {
        const double se = std::sqrt(out.cov(i, i) / n);
        REQUIRE(std::abs(emp_mean(i) - out.mean(i)) <= 4.0 * se);
    }
    for (Index i = 0; i < 2; ++i)
        for (Index j = 0; j < 2; ++j) {
            const double se = std::sqrt(
                (out.cov(i, i) * out.cov(j, j) + out.cov(i, j) * out.cov(i, j)) / n);
            REQUIRE(std::abs(emp_cov(i, j) - out.cov(i, j)) <= 4.0 * se);
        }
}
