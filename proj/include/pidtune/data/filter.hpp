#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "pidtune/linalg.hpp"

namespace pidtune::data {

/// Second-order Butterworth low-pass as a direct-form-II-transposed biquad
/// (bilinear transform with prewarped cutoff). DC gain is exactly 1.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;  // denominator, a0 normalized to 1
    double z1 = 0.0, z2 = 0.0;  // state

    static Biquad butterworth_lowpass(double cutoff_hz, double rate_hz) {
        require(cutoff_hz > 0.0 && rate_hz > 0.0, "filter: rates must be positive");
        require(cutoff_hz < 0.5 * rate_hz, "filter: cutoff must be below the Nyquist rate");
        const double k = std::tan(std::numbers::pi * cutoff_hz / rate_hz);
        const double norm = 1.0 + std::numbers::sqrt2 * k + k * k;
        Biquad f;
        f.b0 = k * k / norm;
        f.b1 = 2.0 * f.b0;
        f.b2 = f.b0;
        f.a1 = 2.0 * (k * k - 1.0) / norm;
        f.a2 = (1.0 - std::numbers::sqrt2 * k + k * k) / norm;
        return f;
    }

    double step(double x) {
        const double y = b0 * x + z1;
        z1 = b1 * x - a1 * y + z2;
        z2 = b2 * x - a2 * y;
        return y;
    }

    /// Initialize the state to the steady response for a constant input.
    void settle(double x) {
        z1 = (1.0 - b0) * x;
        z2 = (b2 - a2) * x;
    }

    void reset() { z1 = z2 = 0.0; }
};

/// Forward-backward (zero-phase) Butterworth low-pass. Endpoints are handled
/// by odd-reflection padding of one settling length, with the filter state
/// pre-settled to the first padded value.
inline std::vector<double> zero_phase_lowpass(const std::vector<double>& signal,
                                              double cutoff_hz, double rate_hz) {
    require(cutoff_hz < 0.5 * rate_hz, "zero_phase_lowpass: cutoff must be below Nyquist");
    const std::size_t n = signal.size();
    if (n < 2) return signal;

    const std::size_t pad =
        std::min(n - 1, static_cast<std::size_t>(std::ceil(3.0 * rate_hz / cutoff_hz)));
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * signal.front() - signal[i]);
    ext.insert(ext.end(), signal.begin(), signal.end());
    for (std::size_t i = 2; i <= pad + 1; ++i) ext.push_back(2.0 * signal.back() - signal[n - i]);

    Biquad f = Biquad::butterworth_lowpass(cutoff_hz, rate_hz);
    f.settle(ext.front());
    for (double& v : ext) v = f.step(v);
    std::reverse(ext.begin(), ext.end());
    f.settle(ext.front());
    for (double& v : ext) v = f.step(v);
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                               ext.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

}  // namespace pidtune::data
