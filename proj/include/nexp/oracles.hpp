#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace nexp {

enum class OracleKind { Zero, Linear, Entropic };

struct OracleSpec {
    OracleKind kind = OracleKind::Zero;
    double theta = 0.0;      // entropic: f = −(θ/2)‖z‖²
    std::vector<double> b;   // linear: f = b·z

    static OracleSpec zero() { return {}; }
    static OracleSpec linear(std::vector<double> b) { return {OracleKind::Linear, 0.0, std::move(b)}; }
    static OracleSpec entropic(double theta) { return {OracleKind::Entropic, theta, {}}; }
};

/// log(mean(exp(a))) without overflow.
inline double log_mean_exp(std::span<const double> a) {
    if (a.empty()) fail(ErrorKind::InvalidArgument, "log_mean_exp of an empty sample");
    double m = -std::numeric_limits<double>::infinity();
    for (double v : a) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            fail(ErrorKind::OracleOverflow, "exponent is not finite; the sample cannot be reweighted");
        m = std::max(m, v);
    }
    double s = 0;
    for (double v : a) s += std::exp(v - m);
    return m + std::log(s) - std::log(static_cast<double>(a.size()));
}

/// Closed-form value at time 0 for drivers whose BSDE reduces to a plain,
/// reweighted or entropic mean of ξ. `w_terminal` holds W_T per sample
/// (row-major samples × d) and is needed only for the linear kind.
inline double closed_form_oracle(const OracleSpec& spec, std::span<const double> xi, double T,
                                 std::span<const double> w_terminal = {}) {
    if (xi.empty()) fail(ErrorKind::InvalidArgument, "oracle needs at least one sample");
    for (double v : xi)
        if (!std::isfinite(v)) fail(ErrorKind::OracleOverflow, "terminal sample is not finite");
    const std::size_t N = xi.size();
    switch (spec.kind) {
    case OracleKind::Zero: {
        double s = 0;
        for (double v : xi) s += v;
        return s / static_cast<double>(N);
    }
    case OracleKind::Entropic: {
        if (spec.theta == 0.0) fail(ErrorKind::InvalidArgument, "entropic oracle needs θ ≠ 0");
        std::vector<double> a(N);
        for (std::size_t p = 0; p < N; ++p) a[p] = -spec.theta * xi[p];
        const double v = -log_mean_exp(a) / spec.theta;
        if (!std::isfinite(v)) fail(ErrorKind::OracleOverflow, "entropic oracle overflowed");
        return v;
    }
    case OracleKind::Linear: {
        const std::size_t d = spec.b.size();
        if (d == 0 || w_terminal.size() != N * d)
            fail(ErrorKind::InvalidArgument, "linear oracle needs W_T for every sample and a non-empty b");
        double b2 = 0;
        for (double v : spec.b) b2 += v * v;
        std::vector<double> lw(N);
        for (std::size_t p = 0; p < N; ++p) {
            double s = -0.5 * b2 * T;
            for (std::size_t j = 0; j < d; ++j) s += spec.b[j] * w_terminal[p * d + j];
            lw[p] = s;
        }
        const double m = *std::max_element(lw.begin(), lw.end());
        if (!std::isfinite(m)) fail(ErrorKind::OracleOverflow, "density exponent is not finite");
        double num = 0, den = 0;
        for (std::size_t p = 0; p < N; ++p) {
            const double w = std::exp(lw[p] - m);
            num += w * xi[p];
            den += w;
        }
        return num / den;
    }
    }
    return 0.0;
}

}  // namespace nexp
