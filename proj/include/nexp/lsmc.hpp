#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"
#include "regression.hpp"
#include "stochastic.hpp"

namespace nexp {

enum class ZClipMode { Off, IqrFence, Absolute };

/// Outlier guard applied to Z before the driver sees it. IqrFence(c) clips to
/// [Q1 − c·IQR, Q3 + c·IQR] per coordinate and step; Absolute(b) to [−b, b].
struct ZClip {
    ZClipMode mode = ZClipMode::IqrFence;
    double value = 10.0;

    static ZClip off() { return {ZClipMode::Off, 0.0}; }
    static ZClip iqr(double c) { return {ZClipMode::IqrFence, c}; }
    static ZClip absolute(double b) { return {ZClipMode::Absolute, b}; }
};

struct LsmcOptions {
    std::size_t inner_picard_iters = 2;
    ZClip z_clip{};
    double max_condition = 1e8;
    // subtract z̃·ΔW from both regression targets, z̃ being the next step's Z
    // surface at X_k. Lowers the variance of Z (and of Y₀ through the driver);
    // Y₀ is then no longer the plain sample mean of ξ under a zero driver.
    bool z_control_variate = false;
};

struct StepDiagnostics {
    double t = 0;
    double mean_y = 0, sd_y = 0, mean_norm_z = 0;
    std::size_t clip_count = 0;
    double condition = 0;
};

/// Surfaces fitted at one step; all share the step's polynomial frame.
struct StepFit {
    Surface continuation;
    Surface z;
    Surface y;
    std::vector<double> z_lo, z_hi;  // clip fences actually applied
    // paths holding the quartiles that set the IQR fences (n_paths when not used)
    std::vector<std::size_t> q1_path, q3_path;
};

/// Inputs of one backward pass. Features are laid out [path][step][feature]
/// over steps 0..n_steps; increments come from the bundle.
struct BackwardInputs {
    TimeGrid grid;
    std::size_t feature_dim = 1;
    const double* features = nullptr;
    const BrownianBundle* bundle = nullptr;
    std::span<const double> terminal;  // one value per path, placed at step k_end
    /// f at (step, path, y, z); the caller binds t and x.
    std::function<double(std::size_t k, std::size_t p, double y, const double* z)> driver;
    std::size_t k_begin = 0;
    std::size_t k_end = 0;  // 0 means grid.n_steps()
};

struct LsmcFields {
    std::size_t n_paths = 0, n_steps = 0, noise_dim = 0;
    std::size_t k_begin = 0, k_end = 0;
    std::vector<double> Y;                // n_paths × (n_steps+1)
    std::vector<double> Z;                // n_paths × n_steps × d
    std::vector<double> C;                // continuation values, n_paths × n_steps
    std::vector<std::uint8_t> clipped;    // n_paths × n_steps × d; 1 lower fence, 2 upper fence
    std::vector<double> path_value;       // ξ + Σ (f·Δt − z̃·ΔW) along the path; Y₀ is its mean
    std::vector<StepDiagnostics> steps;   // n_steps + 1
    std::vector<StepFit> fits;            // n_steps
    double max_abs_y = 0;                 // over Y and every y handed to the driver

    double y(std::size_t p, std::size_t k) const noexcept { return Y[p * (n_steps + 1) + k]; }
    const double* z(std::size_t p, std::size_t k) const noexcept { return Z.data() + (p * n_steps + k) * noise_dim; }
    double continuation(std::size_t p, std::size_t k) const noexcept { return C[p * n_steps + k]; }
    bool is_clipped(std::size_t p, std::size_t k, std::size_t j) const noexcept {
        return clipped[(p * n_steps + k) * noise_dim + j] != 0;
    }
};

namespace detail {

inline std::pair<double, double> quartiles(std::vector<double>& v) {
    const std::size_t n = v.size();
    const std::size_t i1 = (n - 1) / 4, i3 = (3 * (n - 1)) / 4;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(i1), v.end());
    const double q1 = v[i1];
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(i3), v.end());
    return {q1, v[i3]};
}

inline Regressor make_step_regressor(const BackwardInputs& in, std::size_t k, std::size_t N, const RegressionBasis& basis,
                                     double max_condition) {
    const std::size_t K = in.grid.n_steps(), m = in.feature_dim;
    Regressor R(in.features + k * m, N, m, (K + 1) * m, basis);
    if (!(R.condition() <= max_condition))
        fail(ErrorKind::SingularRegression, "regression at step " + std::to_string(k) + " has condition number " +
                                                std::to_string(R.condition()) + " (limit " +
                                                std::to_string(max_condition) + ")");
    return R;
}

}  // namespace detail

/// Backward least-squares Monte Carlo:
///   C_k = E[Y_{k+1} − z̃·ΔW_k | X_k],  Z_k = z̃ + E[(Y_{k+1} − C_k − z̃·ΔW_k) ΔW_k | X_k] / Δt,
///   Y_k = C_k + f(t_k, X_k, Ỹ_k, Z_k) Δt
/// with Ỹ from inner_picard_iters fixed-point passes started at C_k. z̃ is the
/// unclipped Z surface of step k+1 evaluated at X_k (zero at the last step).
/// Since E[ΔW_k | X_k] = 0 and E[ΔW_k ΔW_kᵀ | X_k] = Δt·I, both targets keep
/// their conditional means; the control variate only removes the Z·ΔW noise.
inline LsmcFields backward_lsmc(const BackwardInputs& in, const RegressionBasis& basis, const LsmcOptions& opts) {
    const std::size_t K = in.grid.n_steps();
    const std::size_t k_end = in.k_end == 0 ? K : in.k_end;
    if (!in.bundle || !in.features || !in.driver) fail(ErrorKind::InvalidArgument, "backward pass is missing inputs");
    if (in.k_begin >= k_end || k_end > K) fail(ErrorKind::InvalidArgument, "backward pass has an empty step range");
    const std::size_t N = in.bundle->n_paths(), d = in.bundle->dim();
    if (in.terminal.size() != N) fail(ErrorKind::InvalidArgument, "terminal values do not match the path count");
    const double dt = in.grid.dt();

    LsmcFields out;
    out.n_paths = N;
    out.n_steps = K;
    out.noise_dim = d;
    out.k_begin = in.k_begin;
    out.k_end = k_end;
    out.Y.assign(N * (K + 1), 0.0);
    out.Z.assign(N * K * d, 0.0);
    out.C.assign(N * K, 0.0);
    out.clipped.assign(N * K * d, 0);
    out.path_value.assign(in.terminal.begin(), in.terminal.end());
    out.steps.resize(K + 1);
    out.fits.resize(K);

    double max_abs = 0.0;
    for (std::size_t p = 0; p < N; ++p) {
        const double v = in.terminal[p];
        if (!std::isfinite(v)) fail(ErrorKind::SolverDiverged, "non-finite terminal value on path " + std::to_string(p));
        out.Y[p * (K + 1) + k_end] = v;
        max_abs = std::max(max_abs, std::abs(v));
    }

    Eigen::MatrixXd target(static_cast<Eigen::Index>(N), 1);
    Eigen::MatrixXd ztarget(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
    std::vector<double> col(N), step_max(N);
    std::vector<double> lo(d), hi(d);
    std::vector<std::size_t> q1p(d), q3p(d);
    Eigen::MatrixXd ztilde(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
    std::vector<double> zdw(N);

    for (std::size_t k = k_end; k-- > in.k_begin;) {
        const Regressor R = detail::make_step_regressor(in, k, N, basis, opts.max_condition);
        const bool cv = opts.z_control_variate && k + 1 < k_end;
        if (cv)
            for (std::size_t p = 0; p < N; ++p)
                out.fits[k + 1].z.eval(in.features + (p * (K + 1) + k) * in.feature_dim, &ztilde(static_cast<Eigen::Index>(p), 0));
        // z̃·ΔW per path; zero without the control variate
        for (std::size_t p = 0; p < N; ++p) {
            const double* dw = in.bundle->increment(p, k);
            double s = 0.0;
            if (cv)
                for (std::size_t j = 0; j < d; ++j) s += ztilde(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) * dw[j];
            zdw[p] = s;
            target(static_cast<Eigen::Index>(p), 0) = out.Y[p * (K + 1) + k + 1] - s;
        }
        Eigen::MatrixXd cc = R.fit(target);
        const Eigen::MatrixXd cont = R.predict(cc);
        for (std::size_t p = 0; p < N; ++p) {
            const double* dw = in.bundle->increment(p, k);
            const double resid = out.Y[p * (K + 1) + k + 1] - cont(static_cast<Eigen::Index>(p), 0) - zdw[p];
            for (std::size_t j = 0; j < d; ++j)
                ztarget(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) =
                    (cv ? ztilde(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) : 0.0) + resid * dw[j] / dt;
        }
        Eigen::MatrixXd zc = R.fit(ztarget);
        const Eigen::MatrixXd zhat = R.predict(zc);

        std::size_t clip_count = 0;
        for (std::size_t j = 0; j < d; ++j) {
            lo[j] = -std::numeric_limits<double>::infinity();
            hi[j] = std::numeric_limits<double>::infinity();
            q1p[j] = q3p[j] = N;
            if (opts.z_clip.mode == ZClipMode::IqrFence) {
                for (std::size_t p = 0; p < N; ++p) col[p] = zhat(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j));
                auto [q1, q3] = detail::quartiles(col);
                for (std::size_t p = 0; p < N && (q1p[j] == N || q3p[j] == N); ++p) {
                    const double v = zhat(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j));
                    if (q1p[j] == N && v == q1) q1p[j] = p;
                    if (q3p[j] == N && v == q3) q3p[j] = p;
                }
                const double iqr = q3 - q1;
                lo[j] = q1 - opts.z_clip.value * iqr;
                hi[j] = q3 + opts.z_clip.value * iqr;
            } else if (opts.z_clip.mode == ZClipMode::Absolute) {
                lo[j] = -opts.z_clip.value;
                hi[j] = opts.z_clip.value;
            }
            for (std::size_t p = 0; p < N; ++p) {
                const double raw = zhat(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j));
                const double v = std::clamp(raw, lo[j], hi[j]);
                const std::size_t idx = (p * K + k) * d + j;
                out.Z[idx] = v;
                if (v != raw) {
                    out.clipped[idx] = raw < lo[j] ? 1 : 2;
                    ++clip_count;
                }
            }
        }
        for (std::size_t p = 0; p < N; ++p) out.C[p * K + k] = cont(static_cast<Eigen::Index>(p), 0);

        parallel_for(N, [&](std::size_t b, std::size_t e) {
            for (std::size_t p = b; p < e; ++p) {
                const double c = out.C[p * K + k];
                const double* z = out.Z.data() + (p * K + k) * d;
                double y = c, mx = std::abs(c);
                double f = in.driver(k, p, y, z);
                for (std::size_t it = 0; it < opts.inner_picard_iters; ++it) {
                    y = c + f * dt;
                    mx = std::max(mx, std::abs(y));
                    f = in.driver(k, p, y, z);
                }
                const double yk = c + f * dt;
                if (!std::isfinite(yk))
                    fail(ErrorKind::SolverDiverged, "non-finite Y at step " + std::to_string(k) + ", path " + std::to_string(p));
                out.Y[p * (K + 1) + k] = yk;
                out.path_value[p] += f * dt - zdw[p];
                step_max[p] = std::max(mx, std::abs(yk));
            }
        }, 512);
        for (std::size_t p = 0; p < N; ++p) max_abs = std::max(max_abs, step_max[p]);

        for (std::size_t p = 0; p < N; ++p) target(static_cast<Eigen::Index>(p), 0) = out.Y[p * (K + 1) + k];
        StepFit& fit = out.fits[k];
        fit.y = R.surface(R.fit(target));
        fit.continuation = R.surface(std::move(cc));
        fit.z = R.surface(std::move(zc));
        fit.z_lo = lo;
        fit.z_hi = hi;
        fit.q1_path = q1p;
        fit.q3_path = q3p;
        out.steps[k].clip_count = clip_count;
        out.steps[k].condition = R.condition();
    }
    out.max_abs_y = max_abs;

    for (std::size_t k = in.k_begin; k <= k_end; ++k) {
        StepDiagnostics& s = out.steps[k];
        s.t = in.grid.node(k);
        double s1 = 0, s2 = 0, zn = 0;
        for (std::size_t p = 0; p < N; ++p) {
            const double y = out.Y[p * (K + 1) + k];
            s1 += y;
            s2 += y * y;
            if (k < k_end) {
                double n2 = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double z = out.Z[(p * K + k) * d + j];
                    n2 += z * z;
                }
                zn += std::sqrt(n2);
            }
        }
        s.mean_y = s1 / static_cast<double>(N);
        s.sd_y = std::sqrt(std::max(0.0, s2 / static_cast<double>(N) - s.mean_y * s.mean_y));
        s.mean_norm_z = zn / static_cast<double>(N);
    }
    return out;
}

inline double sample_mean(std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Standard error of the mean of v.
inline double standard_error(std::span<const double> v) {
    const double m = sample_mean(v);
    double s2 = 0;
    for (double x : v) s2 += (x - m) * (x - m);
    const double n = static_cast<double>(v.size());
    return n > 1 ? std::sqrt(s2 / (n - 1) / n) : 0.0;
}

}  // namespace nexp
