#pragma once

#include <cstdint>
#include <vector>

#include "pidtune/linalg.hpp"
#include "pidtune/rng.hpp"

namespace pidtune::gp {

/// Deterministic k-means (Lloyd) with distance-weighted seeding; used to
/// place inducing inputs. Returns the m centers as rows.
inline Matrix kmeans_centers(const Matrix& data, Index m, std::uint64_t seed,
                             int iterations = 15) {
    const Index n = data.rows();
    require(m >= 1 && m <= n, "kmeans: need 1 <= m <= n");
    if (m == n) return data;

    Rng rng(Rng::derive(seed, 0x6b));
    Matrix centers(m, data.cols());
    // seeding: first center uniform, then proportional to squared distance
    centers.row(0) = data.row(static_cast<Index>(rng.raw() % static_cast<std::uint64_t>(n)));
    Vector d2 = (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (Index c = 1; c < m; ++c) {
        const double total = d2.sum();
        Index pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total, acc = 0.0;
            for (Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Index>(rng.raw() % static_cast<std::uint64_t>(n));
        }
        centers.row(c) = data.row(pick);
        d2 = d2.cwiseMin((data.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }

    std::vector<Index> assign(static_cast<std::size_t>(n), 0);
    for (int it = 0; it < iterations; ++it) {
        for (Index i = 0; i < n; ++i) {
            Index best = 0;
            double bestd = (data.row(i) - centers.row(0)).squaredNorm();
            for (Index c = 1; c < m; ++c) {
                const double d = (data.row(i) - centers.row(c)).squaredNorm();
                if (d < bestd) {
                    bestd = d;
                    best = c;
                }
            }
            assign[static_cast<std::size_t>(i)] = best;
        }
        Matrix sums = Matrix::Zero(m, data.cols());
        std::vector<Index> counts(static_cast<std::size_t>(m), 0);
        for (Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += data.row(i);
            ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (Index c = 0; c < m; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0)
                centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
            else  // empty cluster: reseed to the point farthest from its center
                centers.row(c) = data.row(static_cast<Index>(rng.raw() % static_cast<std::uint64_t>(n)));
        }
    }
    return centers;
}

/// Deterministic random subset of rows (without replacement).
inline Matrix random_subset_rows(const Matrix& data, Index m, std::uint64_t seed) {
    const Index n = data.rows();
    require(m >= 1 && m <= n, "subset: need 1 <= m <= n");
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng(Rng::derive(seed, 0x5b5));
    for (Index i = n - 1; i > 0; --i) {
        const Index j = static_cast<Index>(rng.raw() % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    Matrix out(m, data.cols());
    for (Index i = 0; i < m; ++i) out.row(i) = data.row(idx[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace pidtune::gp
