#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "lsmc.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stochastic.hpp"

namespace nexp {

/// One-dimensional interacting particle model. The measure enters every
/// coefficient only through MeasureFeatures of the current cloud.
struct MeanFieldModel {
    std::string name;
    std::function<double(double t, double x, const MeasureFeatures& mu)> drift;
    std::function<double(double t, double x, const MeasureFeatures& mu)> diffusion;
    std::function<double(double t, double x, double y, double z, const MeasureFeatures& mu)> driver;
    std::function<double(double x, const MeasureFeatures& mu)> terminal;
    /// X₀ as a function of a standard normal draw
    std::function<double(double g)> initial;
    /// N-particle systems start at X̄₀ + sd·ξ/√N with ξ standard normal, so
    /// the initial fluctuations √N(X₀ − X̄₀) are N(0, sd²). Zero couples exactly.
    double init_fluctuation_sd = 0.0;
    bool uses_sorted = false;  // coefficients read MeasureFeatures::sorted
};

struct ParticleRun {
    std::size_t n_particles = 0;
    TimeGrid grid;
    std::uint64_t seed = 0;
    std::shared_ptr<const BrownianBundle> bundle;
    std::vector<double> X;                        // N × (K+1)
    std::vector<double> Y;                        // N × (K+1), empty without a backward pass
    std::vector<double> Z;                        // N × K
    std::vector<MeasureFeatures> features;        // empirical features of the cloud, per step
    std::vector<MeasureFeatures> coefficient_flow;  // what the coefficients saw: features, or a frozen flow

    bool has_backward() const noexcept { return !Y.empty(); }
    double x(std::size_t i, std::size_t k) const noexcept { return X[i * (grid.n_steps() + 1) + k]; }
    double y(std::size_t i, std::size_t k) const noexcept { return Y[i * (grid.n_steps() + 1) + k]; }
    double z(std::size_t i, std::size_t k) const noexcept { return Z[i * grid.n_steps() + k]; }
    std::vector<double> slice(std::size_t k) const {
        std::vector<double> out(n_particles);
        for (std::size_t i = 0; i < n_particles; ++i) out[i] = x(i, k);
        return out;
    }
};

struct ParticleOptions {
    const std::vector<MeasureFeatures>* frozen_flow = nullptr;  // McKean–Vlasov copies when set
    bool perturb_initial = true;   // apply init_fluctuation_sd (the N-particle side)
    bool backward = true;
    /// randomness identity per particle; defaults to 0..N-1
    const std::vector<std::uint64_t>* particle_ids = nullptr;
};

namespace detail {

inline void check_model(const MeanFieldModel& m, bool backward) {
    if (!m.drift || !m.diffusion || !m.initial)
        fail(ErrorKind::InvalidArgument, "mean-field model '" + m.name + "' is missing a forward coefficient");
    if (backward && (!m.driver || !m.terminal))
        fail(ErrorKind::InvalidArgument, "mean-field model '" + m.name + "' is missing its driver or terminal");
}

inline double flow_distance(const std::vector<MeasureFeatures>& a, const std::vector<MeasureFeatures>& b) {
    double r = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        r = std::max({r, std::abs(a[k].mean - b[k].mean), std::abs(a[k].second_moment - b[k].second_moment)});
        if (a[k].sorted && b[k].sorted && a[k].sorted->size() == b[k].sorted->size())
            r = std::max(r, wasserstein2_1d(*a[k].sorted, *b[k].sorted));
    }
    return r;
}

}  // namespace detail

/// Steps all particles jointly (features recomputed every step), then solves
/// each particle's BSDE by regression across the cloud with the coefficient
/// flow frozen. Particle i's noise and initial draw depend only on (seed, id_i).
inline ParticleRun run_particles(const MeanFieldModel& model, std::size_t N, const TimeGrid& grid, std::uint64_t seed,
                                 const ParticleOptions& po = {}, const RegressionBasis& basis = {},
                                 const LsmcOptions& opts = {}) {
    if (N < 2) fail(ErrorKind::InvalidArgument, "a particle system needs at least 2 particles");
    detail::check_model(model, po.backward);
    const std::size_t K = grid.n_steps();
    if (po.frozen_flow && po.frozen_flow->size() != K + 1)
        fail(ErrorKind::InvalidArgument, "frozen measure flow has " + std::to_string(po.frozen_flow->size()) +
                                             " steps, grid needs " + std::to_string(K + 1));
    if (po.particle_ids && po.particle_ids->size() != N)
        fail(ErrorKind::InvalidArgument, "particle id list does not match the particle count");
    auto id = [&](std::size_t i) -> std::uint64_t { return po.particle_ids ? (*po.particle_ids)[i] : i; };

    const double dt = grid.dt(), sdt = std::sqrt(dt);
    const CounterRng noise(split_seed(seed, "mf-noise")), init(split_seed(seed, "mf-init"));
    std::vector<double> dw(N * K);
    ParticleRun run;
    run.n_particles = N;
    run.grid = grid;
    run.seed = seed;
    run.X.assign(N * (K + 1), 0.0);
    parallel_for(N, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            for (std::size_t k = 0; k < K; ++k) dw[i * K + k] = sdt * noise.normal(id(i), static_cast<std::uint32_t>(k), 0);
            double x0 = model.initial(init.normal(id(i), 0, 0));
            if (po.perturb_initial && model.init_fluctuation_sd != 0.0)
                x0 += model.init_fluctuation_sd * init.normal(id(i), 1, 0) / std::sqrt(static_cast<double>(N));
            run.X[i * (K + 1)] = x0;
        }
    }, 256);
    run.bundle = std::make_shared<const BrownianBundle>(N, K, 1, seed, dt, std::move(dw));

    std::vector<double> col(N);
    run.features.reserve(K + 1);
    for (std::size_t k = 0;; ++k) {
        for (std::size_t i = 0; i < N; ++i) col[i] = run.X[i * (K + 1) + k];
        run.features.push_back(measure_features(col, model.uses_sorted));
        run.coefficient_flow.push_back(po.frozen_flow ? (*po.frozen_flow)[k] : run.features.back());
        if (k == K) break;
        const MeasureFeatures& mu = run.coefficient_flow.back();
        const double t = grid.node(k);
        parallel_for(N, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                const double x = run.X[i * (K + 1) + k];
                const double v = x + model.drift(t, x, mu) * dt + model.diffusion(t, x, mu) * run.bundle->increment(i, k, 0);
                if (!std::isfinite(v))
                    fail(ErrorKind::SimulationDiverged,
                         "non-finite state at particle " + std::to_string(i) + ", step " + std::to_string(k + 1));
                run.X[i * (K + 1) + k + 1] = v;
            }
        }, 512);
    }
    if (!po.backward) return run;

    std::vector<double> xi(N);
    for (std::size_t i = 0; i < N; ++i) xi[i] = model.terminal(run.X[i * (K + 1) + K], run.coefficient_flow[K]);
    BackwardInputs in;
    in.grid = grid;
    in.feature_dim = 1;
    in.features = run.X.data();
    in.bundle = run.bundle.get();
    in.terminal = xi;
    in.driver = [&](std::size_t k, std::size_t p, double y, const double* z) {
        return model.driver(grid.node(k), run.X[p * (K + 1) + k], y, z[0], run.coefficient_flow[k]);
    };
    LsmcFields f = backward_lsmc(in, basis, opts);
    run.Y = std::move(f.Y);
    run.Z = std::move(f.Z);
    return run;
}

/// The N-particle system.
inline ParticleRun simulate_particles(const MeanFieldModel& model, std::size_t N, const TimeGrid& grid, std::uint64_t seed,
                                      const RegressionBasis& basis = {}, const LsmcOptions& opts = {}) {
    return run_particles(model, N, grid, seed, {}, basis, opts);
}

struct FixedPointOptions {
    std::size_t max_iters = 50;
    double tol = 1e-10;
};

struct McKeanVlasovResult {
    ParticleRun representative;  // cloud driven by the converged flow, with backward values
    std::vector<MeasureFeatures> flow;
    std::vector<double> residuals;
    std::size_t iterations = 0;
};

/// Picard iteration on the feature flow over a frozen cloud (same noise every
/// iteration). The starting flow is the cloud simulated with μ₀'s features held
/// constant in time. Residual: sup over steps of the change in mean, second
/// moment and, for sorted-sample models, W₂.
inline McKeanVlasovResult solve_mckean_vlasov(const MeanFieldModel& model, std::size_t n_cloud, const TimeGrid& grid,
                                              std::uint64_t seed, const FixedPointOptions& fp = {},
                                              const RegressionBasis& basis = {}, const LsmcOptions& opts = {}) {
    if (n_cloud < 100) fail(ErrorKind::InvalidArgument, "McKean-Vlasov cloud needs at least 100 particles");
    const std::size_t K = grid.n_steps();
    ParticleOptions po;
    po.perturb_initial = false;
    po.backward = false;

    std::vector<MeasureFeatures> frozen;
    {
        ParticleOptions p0 = po;
        std::vector<MeasureFeatures> start(K + 1);
        // μ₀'s features, read off an unperturbed initial cloud
        const CounterRng init(split_seed(seed, "mf-init"));
        std::vector<double> x0(n_cloud);
        for (std::size_t i = 0; i < n_cloud; ++i) x0[i] = model.initial(init.normal(i, 0, 0));
        std::fill(start.begin(), start.end(), measure_features(x0, model.uses_sorted));
        p0.frozen_flow = &start;
        frozen = run_particles(model, n_cloud, grid, seed, p0).features;
    }
    McKeanVlasovResult out;
    for (std::size_t it = 1; it <= fp.max_iters; ++it) {
        po.frozen_flow = &frozen;
        std::vector<MeasureFeatures> next = run_particles(model, n_cloud, grid, seed, po).features;
        const double r = detail::flow_distance(next, frozen);
        out.residuals.push_back(r);
        frozen = std::move(next);
        if (!std::isfinite(r)) break;
        if (r <= fp.tol) {
            out.iterations = it;
            break;
        }
    }
    if (out.iterations == 0) {
        std::string trace;
        for (double r : out.residuals) trace += (trace.empty() ? "" : ", ") + std::to_string(r);
        fail(ErrorKind::NoFixedPoint, "measure flow did not converge in " + std::to_string(out.residuals.size()) +
                                          " iterations; residuals: " + trace);
    }
    out.flow = frozen;
    po.frozen_flow = &out.flow;
    po.backward = true;
    out.representative = run_particles(model, n_cloud, grid, seed, po, basis, opts);
    return out;
}

struct LlnRow {
    std::size_t N = 0;
    double err_x = 0, err_y = 0, err_z = 0, total = 0;  // means over particles and trials
    double total_se = 0;                                // across trials
};

struct LlnTable {
    std::vector<LlnRow> rows;
    std::optional<double> slope;  // least squares of log(total) on log(N); absent if any total is 0
};

inline std::uint64_t trial_seed(std::uint64_t seed, std::string_view purpose, std::size_t N, std::size_t trial) {
    return split_seed(split_seed(split_seed(seed, purpose), N), trial);
}

inline std::optional<double> loglog_slope(const std::vector<double>& n, const std::vector<double>& v) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (!(v[i] > 0)) return std::nullopt;
        lx.push_back(std::log(n[i]));
        ly.push_back(std::log(v[i]));
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

namespace detail {

inline void check_n_list(const std::vector<std::size_t>& ns, std::size_t trials) {
    if (ns.size() < 2) fail(ErrorKind::InvalidArgument, "experiment needs at least two particle counts");
    for (std::size_t i = 1; i < ns.size(); ++i)
        if (ns[i] <= ns[i - 1]) fail(ErrorKind::InvalidArgument, "particle counts must be increasing");
    if (trials == 0) fail(ErrorKind::InvalidArgument, "experiment needs at least one trial");
}

}  // namespace detail

/// Couples each N-particle run with N McKean–Vlasov copies driven by the same
/// per-particle noise and initial draws, and reports
/// E[sup|X − X̄|²], E[sup|Y − Ȳ|²], E[Σ|Z − Z̄|²Δt] per N. The limit flow comes
/// from a separate cloud of mv_cloud particles.
inline LlnTable lln_experiment(const MeanFieldModel& model, const std::vector<std::size_t>& n_list, const TimeGrid& grid,
                               std::size_t n_trials, std::uint64_t seed, const RegressionBasis& basis = {},
                               const LsmcOptions& opts = {}, std::size_t mv_cloud = 1u << 16) {
    detail::check_n_list(n_list, n_trials);
    const auto mv = solve_mckean_vlasov(model, mv_cloud, grid, split_seed(seed, "mv-cloud"), {}, basis, opts);
    const std::size_t K = grid.n_steps();
    const double dt = grid.dt();
    LlnTable table;
    std::vector<double> ns, totals;
    for (std::size_t N : n_list) {
        LlnRow row;
        row.N = N;
        double s2 = 0;
        for (std::size_t r = 0; r < n_trials; ++r) {
            const std::uint64_t s = trial_seed(seed, "lln", N, r);
            const ParticleRun a = run_particles(model, N, grid, s, {}, basis, opts);
            ParticleOptions po;
            po.frozen_flow = &mv.flow;
            po.perturb_initial = false;
            const ParticleRun b = run_particles(model, N, grid, s, po, basis, opts);
            double ex = 0, ey = 0, ez = 0;
            for (std::size_t i = 0; i < N; ++i) {
                double mx = 0, my = 0, sz = 0;
                for (std::size_t k = 0; k <= K; ++k) {
                    mx = std::max(mx, (a.x(i, k) - b.x(i, k)) * (a.x(i, k) - b.x(i, k)));
                    my = std::max(my, (a.y(i, k) - b.y(i, k)) * (a.y(i, k) - b.y(i, k)));
                    if (k < K) sz += (a.z(i, k) - b.z(i, k)) * (a.z(i, k) - b.z(i, k)) * dt;
                }
                ex += mx;
                ey += my;
                ez += sz;
            }
            const double n = static_cast<double>(N);
            row.err_x += ex / n;
            row.err_y += ey / n;
            row.err_z += ez / n;
            const double tot = (ex + ey + ez) / n;
            row.total += tot;
            s2 += tot * tot;
        }
        const double T = static_cast<double>(n_trials);
        row.err_x /= T;
        row.err_y /= T;
        row.err_z /= T;
        row.total /= T;
        row.total_se = n_trials > 1 ? std::sqrt(std::max(0.0, s2 / T - row.total * row.total) / (T - 1)) : 0.0;
        ns.push_back(static_cast<double>(N));
        totals.push_back(row.total);
        table.rows.push_back(row);
    }
    table.slope = loglog_slope(ns, totals);
    return table;
}

struct CltRow {
    std::size_t N = 0;
    double var_u = 0, var_v = 0;    // pooled over particles and trials
    double mean_u = 0, mean_v = 0;
    std::size_t samples = 0;
};

struct CltTable {
    std::vector<CltRow> rows;
    std::vector<double> var_u_gaps;  // |Var_{j+1} − Var_j| along the N list
};

/// U^{i,N}_T = √N(X^{i,N}_T − X̄^i_T) and V^{i,N}_T = √N(Y^{i,N}_T − Ȳ^i_T) on
/// the same coupling as lln_experiment. Particles are exchangeable, so
/// variances pool every particle of every trial.
inline CltTable clt_experiment(const MeanFieldModel& model, const std::vector<std::size_t>& n_list, const TimeGrid& grid,
                               std::size_t n_trials, std::uint64_t seed, std::size_t mv_cloud = 1u << 16) {
    detail::check_n_list(n_list, n_trials);
    detail::check_model(model, true);
    const auto mv = solve_mckean_vlasov(model, mv_cloud, grid, split_seed(seed, "mv-cloud"), {}, {}, {});
    const std::size_t K = grid.n_steps();
    CltTable table;
    for (std::size_t N : n_list) {
        CltRow row;
        row.N = N;
        double su = 0, su2 = 0, sv = 0, sv2 = 0;
        const double rn = std::sqrt(static_cast<double>(N));
        for (std::size_t r = 0; r < n_trials; ++r) {
            const std::uint64_t s = trial_seed(seed, "clt", N, r);
            ParticleOptions pa;
            pa.backward = false;
            const ParticleRun a = run_particles(model, N, grid, s, pa);
            ParticleOptions pb = pa;
            pb.frozen_flow = &mv.flow;
            pb.perturb_initial = false;
            const ParticleRun b = run_particles(model, N, grid, s, pb);
            for (std::size_t i = 0; i < N; ++i) {
                const double u = rn * (a.x(i, K) - b.x(i, K));
                const double v = rn * (model.terminal(a.x(i, K), a.coefficient_flow[K]) -
                                       model.terminal(b.x(i, K), b.coefficient_flow[K]));
                su += u;
                su2 += u * u;
                sv += v;
                sv2 += v * v;
            }
        }
        const double n = static_cast<double>(N * n_trials);
        row.samples = N * n_trials;
        row.mean_u = su / n;
        row.mean_v = sv / n;
        row.var_u = (su2 - n * row.mean_u * row.mean_u) / (n - 1);
        row.var_v = (sv2 - n * row.mean_v * row.mean_v) / (n - 1);
        table.rows.push_back(row);
    }
    for (std::size_t j = 1; j < table.rows.size(); ++j)
        table.var_u_gaps.push_back(std::abs(table.rows[j].var_u - table.rows[j - 1].var_u));
    return table;
}

/// Derivatives of the coefficients along the mean-field path. Arguments are
/// (t, x̄, μ) for the forward pair, (t, x̄, ȳ, z̄, μ) for the driver, x̄′ is a
/// point of the independent copy for the measure derivatives.
struct FluctuationCoefficients {
    std::function<double(double t, double x, const MeasureFeatures& mu)> dx_b, dx_sigma;
    std::function<double(double t, double x, const MeasureFeatures& mu, double xp)> dmu_b, dmu_sigma;
    std::function<double(double t, double x, double y, double z, const MeasureFeatures& mu)> dx_f, dy_f, dz_f;
    std::function<double(double t, double x, double y, double z, const MeasureFeatures& mu, double xp)> dmu_f;
    std::function<double(double x, const MeasureFeatures& mu)> dx_g;
    std::function<double(double x, const MeasureFeatures& mu, double xp)> dmu_g;
};

struct FluctuationOptions {
    std::function<double(double g)> u0;  // U₀ from a standard normal draw
    std::size_t n_paths = 2000;
    std::size_t n_copy = 500;            // independent copy cloud for the E′ terms
    std::uint64_t seed = 1;
};

struct FluctuationSolution {
    std::size_t n_paths = 0, n_steps = 0;
    std::vector<double> U, V, Zc;  // n × (K+1), n × (K+1), n × K
    double v0 = 0;                 // mean of V at t = 0
    double var_u_T = 0, var_v_T = 0;

    double u(std::size_t p, std::size_t k) const noexcept { return U[p * (n_steps + 1) + k]; }
    double v(std::size_t p, std::size_t k) const noexcept { return V[p * (n_steps + 1) + k]; }
    double z(std::size_t p, std::size_t k) const noexcept { return Zc[p * n_steps + k]; }
};

namespace detail {

inline void check_coefficients(const FluctuationCoefficients& c) {
    std::string missing;
    auto need = [&](bool ok, const char* name) {
        if (!ok) missing += (missing.empty() ? "" : ", ") + std::string(name);
    };
    need(static_cast<bool>(c.dx_b), "D_x b");
    need(static_cast<bool>(c.dmu_b), "D_mu b");
    need(static_cast<bool>(c.dx_sigma), "D_x sigma");
    need(static_cast<bool>(c.dmu_sigma), "D_mu sigma");
    need(static_cast<bool>(c.dx_f), "D_x f");
    need(static_cast<bool>(c.dy_f), "d_y f");
    need(static_cast<bool>(c.dz_f), "D_z f");
    need(static_cast<bool>(c.dmu_f), "D_mu f");
    need(static_cast<bool>(c.dx_g), "D_x g");
    need(static_cast<bool>(c.dmu_g), "D_mu g");
    if (!missing.empty()) fail(ErrorKind::IncompleteCoefficients, "missing " + missing);
}

}  // namespace detail

/// Linear fluctuation FBSDE along a converged mean-field solution:
///   dU = (D_x b·U + E′[D̄_μ b·U′])dt + (D_x σ·U + E′[D̄_μ σ·U′])dW,
///   −dV = (D_x f·U + ∂_y f·V + D_z f·𝒵 + E′[D̄_μ f·U′])dt − 𝒵dW,
///   V_T = D_x g·U_T + E′[D̄_μ g·U′_T].
/// Paths reuse the representative cloud's particles [0, n_paths) and their
/// noise; the copy cloud is particles [n_paths, n_paths + n_copy), whose own
/// E′ terms average over the copy cloud itself. V is regressed on (X̄, U).
inline FluctuationSolution solve_fluctuation_system(const FluctuationCoefficients& c, const McKeanVlasovResult& mf,
                                                    const FluctuationOptions& fo, const RegressionBasis& basis = {},
                                                    const LsmcOptions& opts = {}) {
    detail::check_coefficients(c);
    if (!fo.u0) fail(ErrorKind::IncompleteCoefficients, "missing initial fluctuation sampler U0");
    const ParticleRun& rep = mf.representative;
    if (!rep.has_backward()) fail(ErrorKind::InvalidArgument, "mean-field path carries no backward values");
    const std::size_t n = fo.n_paths, M = fo.n_copy, K = rep.grid.n_steps();
    if (n < 2 || M < 2) fail(ErrorKind::InvalidArgument, "fluctuation system needs at least 2 paths and 2 copies");
    if (n + M > rep.n_particles)
        fail(ErrorKind::InvalidArgument, "mean-field cloud has " + std::to_string(rep.n_particles) + " particles, need " +
                                             std::to_string(n + M));
    const TimeGrid& grid = rep.grid;
    const double dt = grid.dt();
    const CounterRng rng(split_seed(fo.seed, "fluctuation-u0"));

    // U for the main paths (0..n-1) and the copy cloud (n..n+M-1)
    const std::size_t total = n + M;
    std::vector<double> U(total * (K + 1));
    for (std::size_t p = 0; p < total; ++p) U[p * (K + 1)] = fo.u0(rng.normal(p, 0, 0));
    auto xbar = [&](std::size_t p, std::size_t k) { return rep.x(p, k); };
    auto copy_mean = [&](std::size_t k, auto&& kernel) {
        double s = 0;
        for (std::size_t q = n; q < total; ++q) s += kernel(xbar(q, k)) * U[q * (K + 1) + k];
        return s / static_cast<double>(M);
    };
    for (std::size_t k = 0; k < K; ++k) {
        const double t = grid.node(k);
        const MeasureFeatures& mu = mf.flow[k];
        parallel_for(total, [&](std::size_t b, std::size_t e) {
            for (std::size_t p = b; p < e; ++p) {
                const double x = xbar(p, k), u = U[p * (K + 1) + k];
                const double eb = copy_mean(k, [&](double xp) { return c.dmu_b(t, x, mu, xp); });
                const double es = copy_mean(k, [&](double xp) { return c.dmu_sigma(t, x, mu, xp); });
                const double v = u + (c.dx_b(t, x, mu) * u + eb) * dt + (c.dx_sigma(t, x, mu) * u + es) * rep.bundle->increment(p, k, 0);
                if (!std::isfinite(v))
                    fail(ErrorKind::SimulationDiverged, "non-finite fluctuation at path " + std::to_string(p) + ", step " +
                                                            std::to_string(k + 1));
                U[p * (K + 1) + k + 1] = v;
            }
        }, 64);
    }

    // backward part on the main paths; features (X̄, U)
    std::vector<double> feat(n * (K + 1) * 2);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k <= K; ++k) {
            feat[(p * (K + 1) + k) * 2] = xbar(p, k);
            feat[(p * (K + 1) + k) * 2 + 1] = U[p * (K + 1) + k];
        }
    std::vector<double> dxf(n * K), dyf(n * K), dzf(n * K), ef(n * K);
    for (std::size_t k = 0; k < K; ++k) {
        const double t = grid.node(k);
        const MeasureFeatures& mu = mf.flow[k];
        parallel_for(n, [&](std::size_t b, std::size_t e) {
            for (std::size_t p = b; p < e; ++p) {
                const double x = xbar(p, k), y = rep.y(p, k), z = rep.z(p, k);
                dxf[p * K + k] = c.dx_f(t, x, y, z, mu);
                dyf[p * K + k] = c.dy_f(t, x, y, z, mu);
                dzf[p * K + k] = c.dz_f(t, x, y, z, mu);
                ef[p * K + k] = copy_mean(k, [&](double xp) { return c.dmu_f(t, x, y, z, mu, xp); });
            }
        }, 64);
    }
    std::vector<double> vT(n);
    for (std::size_t p = 0; p < n; ++p) {
        const double x = xbar(p, K);
        vT[p] = c.dx_g(x, mf.flow[K]) * U[p * (K + 1) + K] +
                copy_mean(K, [&](double xp) { return c.dmu_g(x, mf.flow[K], xp); });
    }
    // the representative bundle covers every cloud particle; the first n rows are ours
    const BrownianBundle main_noise(n, K, 1, rep.bundle->seed(), dt,
                                    std::vector<double>(rep.bundle->raw().begin(), rep.bundle->raw().begin() + static_cast<std::ptrdiff_t>(n * K)));
    BackwardInputs in;
    in.grid = grid;
    in.feature_dim = 2;
    in.features = feat.data();
    in.bundle = &main_noise;
    in.terminal = vT;
    in.driver = [&](std::size_t k, std::size_t p, double y, const double* z) {
        return dxf[p * K + k] * U[p * (K + 1) + k] + dyf[p * K + k] * y + dzf[p * K + k] * z[0] + ef[p * K + k];
    };
    LsmcFields f = backward_lsmc(in, basis, opts);

    FluctuationSolution out;
    out.n_paths = n;
    out.n_steps = K;
    out.U.assign(U.begin(), U.begin() + static_cast<std::ptrdiff_t>(n * (K + 1)));
    out.V = std::move(f.Y);
    out.Zc = std::move(f.Z);
    double m = 0, su = 0, su2 = 0, sv = 0, sv2 = 0;
    for (std::size_t p = 0; p < n; ++p) {
        m += out.v(p, 0);
        su += out.u(p, K);
        su2 += out.u(p, K) * out.u(p, K);
        sv += out.v(p, K);
        sv2 += out.v(p, K) * out.v(p, K);
    }
    const double nn = static_cast<double>(n);
    out.v0 = m / nn;
    out.var_u_T = (su2 - su * su / nn) / (nn - 1);
    out.var_v_T = (sv2 - sv * sv / nn) / (nn - 1);
    return out;
}

namespace mf_models {

/// dX = −κX dt + σ dW, no measure dependence; f = −κ_y·y, g = x.
inline MeanFieldModel independent(double kappa = 1.0, double sigma = 0.3, double m0 = 1.0, double s0 = 0.2) {
    MeanFieldModel m;
    m.name = "independent";
    m.drift = [kappa](double, double x, const MeasureFeatures&) { return -kappa * x; };
    m.diffusion = [sigma](double, double, const MeasureFeatures&) { return sigma; };
    m.driver = [](double, double, double y, double, const MeasureFeatures&) { return -0.5 * y; };
    m.terminal = [](double x, const MeasureFeatures&) { return x; };
    m.initial = [=](double g) { return m0 + s0 * g; };
    return m;
}

/// dX = κ(mean(μ) − X)dt + σ dW; the empirical mean has zero drift.
inline MeanFieldModel mean_reversion_to_crowd(double kappa = 1.0, double sigma = 0.1, double s0 = 1.0) {
    MeanFieldModel m;
    m.name = "mean-reversion-to-crowd";
    m.drift = [kappa](double, double x, const MeasureFeatures& mu) { return kappa * (mu.mean - x); };
    m.diffusion = [sigma](double, double, const MeasureFeatures&) { return sigma; };
    m.driver = [](double, double, double y, double z, const MeasureFeatures& mu) { return -0.5 * z * z + 0.1 * (mu.mean - y); };
    m.terminal = [](double x, const MeasureFeatures&) { return x; };
    m.initial = [s0](double g) { return s0 * g; };
    return m;
}

/// dX = (a·mean(μ) + c·X)dt + σ dW; f = −κ·y + β·mean(μ), g = x.
/// The mean flow solves m′ = (a + c)m.
inline MeanFieldModel linear(double a = 0.5, double c = 0.5, double sigma = 0.3, double m0 = 1.0, double s0 = 0.2,
                             double kappa = 0.5, double beta = 0.5) {
    MeanFieldModel m;
    m.name = "linear-mean-field";
    m.drift = [a, c](double, double x, const MeasureFeatures& mu) { return a * mu.mean + c * x; };
    m.diffusion = [sigma](double, double, const MeasureFeatures&) { return sigma; };
    m.driver = [kappa, beta](double, double, double y, double, const MeasureFeatures& mu) { return -kappa * y + beta * mu.mean; };
    m.terminal = [](double x, const MeasureFeatures&) { return x; };
    m.initial = [=](double g) { return m0 + s0 * g; };
    return m;
}

/// Linear model with Gaussian initial law and Gaussian initial fluctuations
/// N(0, u0²); f = −κ·y, g = x.
inline MeanFieldModel linear_gaussian_clt(double a = 0.5, double c = -0.5, double sigma = 0.4, double m0 = 1.0,
                                          double s0 = 0.3, double u0 = 1.0, double kappa = 0.5) {
    MeanFieldModel m = linear(a, c, sigma, m0, s0, kappa, 0.0);
    m.name = "linear-gaussian-clt";
    m.init_fluctuation_sd = u0;
    return m;
}

/// Fluctuation coefficients of linear()/linear_gaussian_clt().
inline FluctuationCoefficients linear_coefficients(double a, double c, double kappa = 0.5, double beta = 0.0) {
    FluctuationCoefficients f;
    f.dx_b = [c](double, double, const MeasureFeatures&) { return c; };
    f.dmu_b = [a](double, double, const MeasureFeatures&, double) { return a; };
    f.dx_sigma = [](double, double, const MeasureFeatures&) { return 0.0; };
    f.dmu_sigma = [](double, double, const MeasureFeatures&, double) { return 0.0; };
    f.dx_f = [](double, double, double, double, const MeasureFeatures&) { return 0.0; };
    f.dy_f = [kappa](double, double, double, double, const MeasureFeatures&) { return -kappa; };
    f.dz_f = [](double, double, double, double, const MeasureFeatures&) { return 0.0; };
    f.dmu_f = [beta](double, double, double, double, const MeasureFeatures&, double) { return beta; };
    f.dx_g = [](double, const MeasureFeatures&) { return 1.0; };
    f.dmu_g = [](double, const MeasureFeatures&, double) { return 0.0; };
    return f;
}

/// Limit variance of √N(X^{1,N}_T − X̄¹_T) for linear_gaussian_clt. With
/// H = √N(mean(μ^N) − m) one has dH = (a+c)H dt + σ dB, H₀ ~ N(0, s0²), and
/// U_T = e^{cT}U₀ + ∫ a e^{c(T−s)} H_s ds, which gives
///   u0²e^{2cT} + s0²A(0)² + σ²∫₀ᵀ A(u)² du,  A(u) = e^{(a+c)(T−u)} − e^{c(T−u)}.
inline double linear_clt_variance(double a, double c, double sigma, double s0, double u0, double T) {
    const double l = a + c;
    auto e = [](double r, double t) { return r == 0.0 ? t : std::expm1(r * t) / r; };  // ∫₀ᵗ e^{rτ}dτ
    const double A0 = std::exp(l * T) - std::exp(c * T);
    const double intA2 = e(2 * l, T) - 2 * e(l + c, T) + e(2 * c, T);
    return u0 * u0 * std::exp(2 * c * T) + s0 * s0 * A0 * A0 + sigma * sigma * intA2;
}

}  // namespace mf_models

/// Built-in models by name, with default parameters.
inline MeanFieldModel mean_field_model(const std::string& name) {
    if (name == "independent") return mf_models::independent();
    if (name == "mean-reversion-to-crowd") return mf_models::mean_reversion_to_crowd();
    if (name == "linear-mean-field") return mf_models::linear();
    if (name == "linear-gaussian-clt") return mf_models::linear_gaussian_clt();
    fail(ErrorKind::InvalidArgument, "unknown mean-field model '" + name + "'");
}

}  // namespace nexp
