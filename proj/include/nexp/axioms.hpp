#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsde.hpp"
#include "net_checks.hpp"

namespace nexp {

struct AxiomOptions {
    std::uint64_t seed = 1;
    double noise_multiple = 3.0;      // tolerances are this many Monte Carlo standard errors
    std::size_t driver_samples = 1000;  // points or segments used by the driver checks
};

namespace detail {

inline double diff_standard_error(std::span<const double> a, double ca, std::span<const double> b, double cb,
                                  std::span<const double> c = {}, double cc = 0.0) {
    std::vector<double> v(a.size());
    for (std::size_t p = 0; p < v.size(); ++p) v[p] = ca * a[p] + cb * b[p] + (c.empty() ? 0.0 : cc * c[p]);
    return standard_error(v);
}

}  // namespace detail

struct ComparisonReport {
    double y0_1 = 0, y0_2 = 0;
    double diff = 0;           // Y¹₀ − Y²₀
    double noise = 0;          // standard error of the pathwise difference
    double tol = 0;
    std::vector<double> step_min;  // min over paths of Y¹ − Y² at each step
    std::size_t violation_count = 0;  // (path, step) pairs with Y¹ − Y² < −tol
    double max_violation = 0;
    bool driver_monotone = false;
    bool pass = false;
};

/// Solves ξ₁ and ξ₂ on the same paths and reports the ordering of the values.
inline ComparisonReport check_comparison(const BsdeProblem& pb, const Terminal& xi1, const Terminal& xi2,
                                         const RegressionBasis& basis = {}, const LsmcOptions& opts = {},
                                         const AxiomOptions& ax = {}) {
    validate(pb);
    const std::size_t K = pb.paths->n_steps(), N = pb.paths->n_paths();
    const auto v1 = xi1.evaluate(*pb.paths, K), v2 = xi2.evaluate(*pb.paths, K);
    for (std::size_t p = 0; p < N; ++p)
        if (v1[p] < v2[p])
            fail(ErrorKind::InvalidComparisonPair, "first terminal is below the second on path " + std::to_string(p) +
                                                       " (" + std::to_string(v1[p]) + " < " + std::to_string(v2[p]) + ")");
    ComparisonReport r;
    r.driver_monotone = verify_monotone(*pb.driver, ax.driver_samples, split_seed(ax.seed, "comparison")).pass;
    const auto s1 = solve_bsde_range(pb, v1, 0, K, basis, opts), s2 = solve_bsde_range(pb, v2, 0, K, basis, opts);
    r.y0_1 = s1.y0();
    r.y0_2 = s2.y0();
    r.diff = r.y0_1 - r.y0_2;
    r.noise = detail::diff_standard_error(s1.fields().path_value, 1.0, s2.fields().path_value, -1.0);
    r.tol = ax.noise_multiple * r.noise;
    r.step_min.assign(K + 1, std::numeric_limits<double>::infinity());
    for (std::size_t p = 0; p < N; ++p)
        for (std::size_t k = 0; k <= K; ++k) {
            const double d = s1.Y(p, k) - s2.Y(p, k);
            r.step_min[k] = std::min(r.step_min[k], d);
            if (d < -r.tol) {
                ++r.violation_count;
                r.max_violation = std::max(r.max_violation, -d);
            }
        }
    r.pass = r.driver_monotone && r.diff >= -r.tol;
    return r;
}

/// Convex C² test function with its first two derivatives.
struct C2Function {
    std::function<double(double)> f, d1, d2;
    std::string name = "phi";

    static C2Function identity() {
        return {[](double x) { return x; }, [](double) { return 1.0; }, [](double) { return 0.0; }, "x"};
    }
    static C2Function square() {
        return {[](double x) { return x * x; }, [](double x) { return 2 * x; }, [](double) { return 2.0; }, "x^2"};
    }
    static C2Function exponential(double a = 1.0) {
        return {[a](double x) { return std::exp(a * x); }, [a](double x) { return a * std::exp(a * x); },
                [a](double x) { return a * a * std::exp(a * x); }, "exp"};
    }
};

/// Midpoint test of convexity on [lo, hi].
inline bool spot_check_convex(const std::function<double(double)>& phi, double lo, double hi, std::size_t n, std::uint64_t seed) {
    SeqRng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.uniform(lo, hi), b = rng.uniform(lo, hi);
        const double fa = phi(a), fb = phi(b), fm = phi(0.5 * (a + b));
        if (fm > 0.5 * (fa + fb) + 1e-12 * (1.0 + std::abs(fa) + std::abs(fb))) return false;
    }
    return true;
}

struct ConvexityJensenReport {
    double delta_cvx = 0, noise_cvx = 0, tol_cvx = 0;
    double delta_jen = 0, noise_jen = 0, tol_jen = 0;
    double y0_1 = 0, y0_2 = 0, y0_mix = 0, y0_phi = 0;
    bool driver_convex = false;
    bool phi_convex = false;
    bool pass = false;
};

/// Δ_cvx = λY₀(ξ₁) + (1−λ)Y₀(ξ₂) − Y₀(λξ₁ + (1−λ)ξ₂) and Δ_jen = Y₀(φ(ξ₁)) − φ(Y₀(ξ₁)).
inline ConvexityJensenReport check_convexity_and_jensen(const BsdeProblem& pb, const Terminal& xi1, const Terminal& xi2,
                                                        double lambda, const C2Function& phi,
                                                        const RegressionBasis& basis = {}, const LsmcOptions& opts = {},
                                                        const AxiomOptions& ax = {}) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorKind::InvalidArgument, "λ must lie in [0, 1]");
    validate(pb);
    const std::size_t K = pb.paths->n_steps(), N = pb.paths->n_paths();
    const auto v1 = xi1.evaluate(*pb.paths, K), v2 = xi2.evaluate(*pb.paths, K);
    std::vector<double> vmix(N), vphi(N);
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t p = 0; p < N; ++p) {
        vmix[p] = lambda * v1[p] + (1.0 - lambda) * v2[p];
        vphi[p] = phi.f(v1[p]);
        lo = std::min(lo, v1[p]);
        hi = std::max(hi, v1[p]);
    }
    ConvexityJensenReport r;
    r.driver_convex = verify_convexity(*pb.driver, ax.driver_samples, split_seed(ax.seed, "convexity"), 0.0).pass;
    r.phi_convex = spot_check_convex(phi.f, lo, hi, ax.driver_samples, split_seed(ax.seed, "phi"));
    const auto s1 = solve_bsde_range(pb, v1, 0, K, basis, opts);
    const auto s2 = solve_bsde_range(pb, v2, 0, K, basis, opts);
    const auto sm = solve_bsde_range(pb, vmix, 0, K, basis, opts);
    const auto sp = solve_bsde_range(pb, vphi, 0, K, basis, opts);
    r.y0_1 = s1.y0();
    r.y0_2 = s2.y0();
    r.y0_mix = sm.y0();
    r.y0_phi = sp.y0();
    r.delta_cvx = lambda * r.y0_1 + (1.0 - lambda) * r.y0_2 - r.y0_mix;
    r.noise_cvx = detail::diff_standard_error(s1.fields().path_value, lambda, s2.fields().path_value, 1.0 - lambda,
                                              sm.fields().path_value, -1.0);
    r.delta_jen = r.y0_phi - phi.f(r.y0_1);
    // delta method: φ(Y₀) fluctuates like φ′(Y₀)·Y₀
    r.noise_jen = detail::diff_standard_error(sp.fields().path_value, 1.0, s1.fields().path_value, -phi.d1(r.y0_1));
    r.tol_cvx = ax.noise_multiple * r.noise_cvx;
    r.tol_jen = ax.noise_multiple * r.noise_jen;
    r.pass = r.driver_convex && r.phi_convex && r.delta_cvx >= -r.tol_cvx && r.delta_jen >= -r.tol_jen;
    return r;
}

struct DynamicConsistencyReport {
    double y0_direct = 0, y0_nested = 0;
    double gap = 0;
    double noise = 0;  // standard error of the direct solve
    std::size_t split_step = 0;
};

/// Solves on [0,T] directly and again as [s,T] followed by [0,s] with the
/// regressed Y_s surface as terminal data.
inline DynamicConsistencyReport check_dynamic_consistency(const BsdeProblem& pb, double s, const RegressionBasis& basis = {},
                                                          const LsmcOptions& opts = {}) {
    validate(pb);
    const TimeGrid& g = pb.grid();
    const auto ks = g.index_of(s);
    if (!ks || *ks == 0)
        fail(ErrorKind::InvalidArgument, "split time " + std::to_string(s) + " is not a grid node in (0, T]");
    const std::size_t K = g.n_steps(), N = pb.paths->n_paths();
    const auto xi = pb.terminal.evaluate(*pb.paths, K);
    const auto direct = solve_bsde_range(pb, xi, 0, K, basis, opts, pb.terminal);
    std::vector<double> ys;
    if (*ks == K) {
        ys = xi;
    } else {
        const auto tail = solve_bsde_range(pb, xi, *ks, K, basis, opts, pb.terminal);
        ys.resize(N);
        for (std::size_t p = 0; p < N; ++p) ys[p] = tail.y_surface(*ks, {pb.paths->state(p, *ks), pb.paths->state_dim()});
    }
    const auto head = solve_bsde_range(pb, ys, 0, *ks, basis, opts);
    DynamicConsistencyReport r;
    r.split_step = *ks;
    r.y0_direct = direct.y0();
    r.y0_nested = head.y0();
    r.gap = std::abs(r.y0_direct - r.y0_nested);
    r.noise = direct.y0_standard_error();
    return r;
}

struct DriftDecomposition {
    std::vector<double> t;
    std::vector<double> ambiguity_drift;       // mean of −φ′(Y)·f
    std::vector<double> convexity_correction;  // mean of ½φ″(Y)‖Z‖²
    double residual_mean = 0;  // mean over paths of the Itô reconstruction residual
    double residual_rms = 0;
};

/// Splits the drift of φ(Y) into the driver part and the Itô correction and
/// checks that together with the martingale increments they rebuild φ(Y_T) − φ(Y₀).
inline DriftDecomposition effective_drift_decomposition(const BsdeSolution& sol, const C2Function& phi) {
    const PathEnsemble& paths = sol.paths();
    const TimeGrid& g = sol.grid();
    const Driver& f = *sol.driver();
    const std::size_t N = sol.n_paths(), n = paths.state_dim(), d = sol.noise_dim();
    const std::size_t k0 = sol.first_step(), k1 = sol.last_step();
    const double dt = g.dt();
    DriftDecomposition out;
    std::vector<double> resid(N);
    for (std::size_t p = 0; p < N; ++p) resid[p] = phi.f(sol.Y(p, k1)) - phi.f(sol.Y(p, k0));
    for (std::size_t k = k0; k < k1; ++k) {
        double amb = 0, cvx = 0;
        for (std::size_t p = 0; p < N; ++p) {
            const double y = sol.Y(p, k);
            const auto z = sol.Z(p, k);
            double z2 = 0;
            for (std::size_t j = 0; j < d; ++j) z2 += z[j] * z[j];
            const double a = -phi.d1(y) * f.value(g.node(k), {paths.state(p, k), n}, y, z);
            const double c = 0.5 * phi.d2(y) * z2;
            amb += a;
            cvx += c;
            const double dm = sol.Y(p, k + 1) - sol.continuation(p, k);
            resid[p] -= (a + c) * dt + phi.d1(y) * dm;
        }
        out.t.push_back(g.node(k));
        out.ambiguity_drift.push_back(amb / static_cast<double>(N));
        out.convexity_correction.push_back(cvx / static_cast<double>(N));
    }
    double s = 0, s2 = 0;
    for (double r : resid) {
        s += r;
        s2 += r * r;
    }
    out.residual_mean = s / static_cast<double>(N);
    out.residual_rms = std::sqrt(s2 / static_cast<double>(N));
    return out;
}

struct DualOptions {
    double z_range = 50.0;       // grid search span for a numerical Fenchel transform
    std::size_t z_points = 20001;
    std::uint64_t seed = 1;
    std::size_t driver_samples = 1000;
};

struct DualBoundReport {
    std::vector<std::vector<double>> controls;
    std::vector<double> values;
    double best = -INFINITY;
    std::vector<double> argmax;
    bool analytic_fenchel = true;
};

/// g(u) = inf_z (z·u + f(z)) by grid search, for scalar z.
inline double numerical_fenchel(const Driver& f, double t, std::span<const double> x, double u, const DualOptions& o) {
    double best = INFINITY;
    std::size_t arg = 0;
    std::vector<double> z(1);
    for (std::size_t i = 0; i < o.z_points; ++i) {
        z[0] = -o.z_range + 2.0 * o.z_range * static_cast<double>(i) / static_cast<double>(o.z_points - 1);
        const double v = z[0] * u + f.value(t, x, 0.0, z);
        if (v < best) {
            best = v;
            arg = i;
        }
    }
    if (arg == 0 || arg + 1 == o.z_points)
        fail(ErrorKind::InvalidDriver, "Fenchel transform at u = " + std::to_string(u) +
                                           " is unbounded on the search range; the driver is not convex with superlinear growth");
    return best;
}

/// Lower bound on Y₀ from constant controls u: self-normalized exponential
/// weights exp(u·W_T) applied to ξ, plus T·g(u).
inline DualBoundReport dual_lower_bound(const BsdeProblem& pb, const std::vector<std::vector<double>>& control_grid,
                                        const DualOptions& o = {}) {
    validate(pb);
    if (control_grid.empty()) fail(ErrorKind::InvalidArgument, "control grid is empty");
    const Driver& f = *pb.driver;
    if (!f.y_independent()) fail(ErrorKind::InvalidDriver, "dual bound needs a driver that does not depend on y");
    if (!verify_convexity(f, o.driver_samples, split_seed(o.seed, "dual"), 1e-12).pass)
        fail(ErrorKind::InvalidDriver, "dual bound needs a driver convex in z");
    const PathEnsemble& paths = *pb.paths;
    const std::size_t N = paths.n_paths(), d = paths.noise_dim(), K = paths.n_steps();
    const double T = pb.grid().horizon();
    const auto xi = pb.terminal.evaluate(paths, K);
    const std::span<const double> x0{paths.state(0, 0), paths.state_dim()};

    DualBoundReport r;
    std::vector<double> lw(N);
    for (const auto& u : control_grid) {
        if (u.size() != d) fail(ErrorKind::InvalidArgument, "control has the wrong dimension");
        double g;
        if (auto a = f.fenchel(u)) {
            g = *a;
        } else {
            if (d != 1) fail(ErrorKind::InvalidDriver, "no Fenchel transform available for a multi-dimensional z");
            r.analytic_fenchel = false;
            g = numerical_fenchel(f, 0.0, x0, u[0], o);
        }
        double value = -INFINITY;
        if (g > -INFINITY) {
            double m = -INFINITY;
            for (std::size_t p = 0; p < N; ++p) {
                double s = 0;
                for (std::size_t j = 0; j < d; ++j) s += u[j] * paths.bundle().terminal(p, j);
                lw[p] = s;
                m = std::max(m, s);
            }
            double num = 0, den = 0;
            for (std::size_t p = 0; p < N; ++p) {
                const double w = std::exp(lw[p] - m);
                num += w * xi[p];
                den += w;
            }
            value = num / den + T * g;
        }
        r.controls.push_back(u);
        r.values.push_back(value);
        auto norm2 = [](const std::vector<double>& v) {
            double s = 0;
            for (double e : v) s += e * e;
            return s;
        };
        if (value > r.best || (value == r.best && !r.argmax.empty() && norm2(u) < norm2(r.argmax))) {
            r.best = value;
            r.argmax = u;
        }
    }
    return r;
}

}  // namespace nexp
