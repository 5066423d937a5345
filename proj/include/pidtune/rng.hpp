#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "pidtune/linalg.hpp"

namespace pidtune {

/// Seeded generator with explicit uniform/normal transforms so that streams
/// are reproducible independent of the standard library's distribution
/// implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (pair cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    Vector normal_vector(Index n) {
        Vector v(n);
        for (Index i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    Matrix normal_matrix(Index r, Index c) {
        Matrix m(r, c);
        for (Index j = 0; j < c; ++j)
            for (Index i = 0; i < r; ++i) m(i, j) = normal();
        return m;
    }

    /// Random symmetric PSD matrix with unit-scale eigenvalues.
    Matrix random_psd(Index n, double scale = 1.0) {
        Matrix g = normal_matrix(n, n);
        return symmetrized(scale * (g * g.transpose()) / static_cast<double>(n));
    }

    /// Draw from N(mean, cov) via LDLT; tolerates singular cov.
    Vector sample(const Vector& mean, const Matrix& cov) {
        Eigen::LDLT<Matrix> ldlt(symmetrized(cov));
        Matrix l = ldlt.matrixL();
        Vector d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
        Vector z = normal_vector(mean.size());
        return mean + ldlt.transpositionsP().transpose() * (l * d.cwiseProduct(z));
    }

    std::uint64_t raw() { return gen_(); }

    /// Derive an independent child seed from (seed, stream) via splitmix64.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pidtune
