#pragma once

// Shared generators for randomized test instances: synthetic GP models in the
// fitted-predictor form and random PID structures/layouts wired to them.

#include <cstdint>

#include "pidtune/gp/model.hpp"
#include "pidtune/pid_policy.hpp"
#include "pidtune/rng.hpp"

namespace pidtune::testing {

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
        if (!used) entries.push_back({i, static_cast<int>(rng.raw() % static_cast<std::uint64_t>(num_channels)),
                                      PidTerm::P});
    }
    while (static_cast<int>(entries.size()) > max_gains) entries.pop_back();
    // the trim above may orphan an input; repair
    for (int i = 0; i < num_inputs; ++i) {
        bool used = false;
        for (const auto& e : entries) used = used || e.input == i;
        if (!used) entries.push_back({i, 0, PidTerm::P});
    }
    return PidStructure(num_inputs, num_channels, std::move(entries));
}

}  // namespace pidtune::testing
