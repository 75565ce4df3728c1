#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "bsde.hpp"
#include "driver.hpp"
#include "error.hpp"
#include "stochastic.hpp"

namespace nexp {

struct MarketParams {
    double mu = 0.08, r = 0.02, sigma = 0.2, gamma = 0.5, T = 1.0;

    void validate() const {
        if (!(mu > r)) fail(ErrorKind::InvalidArgument, "market needs mu > r");
        if (!(sigma > 0)) fail(ErrorKind::InvalidArgument, "market needs sigma > 0");
        if (gamma == 0.0 || !(gamma < 1.0)) fail(ErrorKind::InvalidArgument, "risk aversion gamma must be < 1 and nonzero");
        if (!(T > 0)) fail(ErrorKind::InvalidArgument, "horizon must be positive");
    }
    double utility(double x) const { return std::pow(x, gamma) / gamma; }
};

struct ClassicalMerton {
    MarketParams params;
    double pi = 0;   // fraction of wealth in the stock
    double rho = 0;  // V(t,x) = U(x)·exp(ρ(T − t))

    double value(double t, double x) const { return params.utility(x) * std::exp(rho * (params.T - t)); }
};

inline ClassicalMerton classical_merton(const MarketParams& p) {
    p.validate();
    ClassicalMerton m;
    m.params = p;
    const double ex = p.mu - p.r;
    m.pi = ex / (p.sigma * p.sigma * (1 - p.gamma));
    m.rho = p.gamma * (p.r + ex * ex / (2 * p.sigma * p.sigma * (1 - p.gamma)));
    return m;
}

struct HjbGridSpec {
    std::size_t J = 200;              // log-wealth intervals
    std::size_t n_time_steps = 0;     // 0 picks the smallest stable count
    double x0 = 1.0;                  // centre of the default range
    std::optional<double> ell_lo, ell_hi;
    double cfl_safety = 0.9;
    /// Solve for a fixed allocation fraction instead of the optimum (cross-checks).
    std::optional<double> fixed_fraction;
};

/// Nodes ℓ_j = ell_lo + j·h, times t_n = n·dt; arrays are [n][j]. Vx and Vxx
/// are derivatives in wealth x, pi is the fraction Π*/x.
struct HjbGrid {
    MarketParams params;
    double theta = 0;
    std::size_t J = 0, n_time = 0;
    double ell_lo = 0, h = 0, dt = 0;
    std::vector<double> V, Vx, Vxx, pi;

    std::size_t at(std::size_t n, std::size_t j) const noexcept { return n * (J + 1) + j; }
    double ell(std::size_t j) const noexcept { return ell_lo + h * static_cast<double>(j); }
    double x(std::size_t j) const noexcept { return std::exp(ell(j)); }
    double t(std::size_t n) const noexcept { return n == n_time ? params.T : dt * static_cast<double>(n); }
    double value(std::size_t n, std::size_t j) const noexcept { return V[at(n, j)]; }
    double policy(std::size_t n, std::size_t j) const noexcept { return pi[at(n, j)]; }
};

namespace detail {

inline std::pair<double, double> hjb_range(const MarketParams& p, const HjbGridSpec& s) {
    const double pc = classical_merton(p).pi;
    const double vol = p.sigma * std::max(1.0, s.fixed_fraction ? std::abs(*s.fixed_fraction) : pc);
    const double w = 4 * vol * std::sqrt(p.T);
    const double drift = std::abs(p.r + std::max(1.0, pc) * (p.mu - p.r)) * p.T;
    const double c = std::log(s.x0);
    return {s.ell_lo.value_or(c - w - drift), s.ell_hi.value_or(c + w + drift)};
}

// one-sided extrapolation exact for W = A·e^{pℓ} (power-law value)
inline double power_law_extrapolate(double w1, double w2) {
    if (w2 != 0.0 && w1 * w2 > 0.0) return w1 * w1 / w2;
    return 2 * w1 - w2;
}

}  // namespace detail

/// Explicit backward scheme for the ambiguity HJB in ℓ = log x. With W(t,ℓ) = V(t,e^ℓ),
///   0 = W_t + r W_ℓ + sup_π { π(μ−r)W_ℓ + ½σ²π²(W_ℓℓ − W_ℓ − θW_ℓ²) },
/// maximized in closed form from central derivatives, then advanced with the
/// drift r + π(μ−r) − ½σ²π²(1 + θW_ℓ) upwinded.
inline HjbGrid solve_hjb(const MarketParams& p, double theta, const HjbGridSpec& spec = {}) {
    p.validate();
    if (!(theta >= 0) || !std::isfinite(theta)) fail(ErrorKind::InvalidArgument, "theta must be >= 0");
    if (spec.J < 4) fail(ErrorKind::InvalidArgument, "HJB grid needs at least 4 wealth intervals");
    if (!(spec.x0 > 0)) fail(ErrorKind::InvalidArgument, "x0 must be positive");
    const auto [lo, hi] = detail::hjb_range(p, spec);
    if (!(hi > lo)) fail(ErrorKind::InvalidArgument, "empty log-wealth range");
    const std::size_t J = spec.J;
    const double h = (hi - lo) / static_cast<double>(J);
    const double ex = p.mu - p.r, s2 = p.sigma * p.sigma;

    // stability needs dt·(σ²π²/h² + |b|/h) ≤ 1; π never exceeds the classical fraction
    const double pmax = spec.fixed_fraction ? std::abs(*spec.fixed_fraction) : classical_merton(p).pi;
    auto rate = [&](double pi, double b) { return s2 * pi * pi / (h * h) + std::abs(b) / h; };
    std::size_t N = spec.n_time_steps;
    if (N == 0) {
        const double wl_max = std::exp(p.gamma * hi) * std::exp(std::max(0.0, classical_merton(p).rho) * p.T);
        const double b = std::abs(p.r) + pmax * ex + 0.5 * s2 * pmax * pmax * (1 + theta * wl_max);
        N = static_cast<std::size_t>(std::ceil(p.T * rate(pmax, b) / spec.cfl_safety * 1.05));
    }
    HjbGrid g;
    g.params = p;
    g.theta = theta;
    g.J = J;
    g.n_time = N;
    g.ell_lo = lo;
    g.h = h;
    g.dt = p.T / static_cast<double>(N);
    const std::size_t S = (N + 1) * (J + 1);
    g.V.assign(S, 0.0);
    g.Vx.assign(S, 0.0);
    g.Vxx.assign(S, 0.0);
    g.pi.assign(S, 0.0);
    for (std::size_t j = 0; j <= J; ++j) g.V[g.at(N, j)] = p.utility(g.x(j));

    std::vector<double> wl(J + 1), wll(J + 1), pol(J + 1);
    // derivatives and policy at node n, from the values already there
    auto differentiate = [&](std::size_t n) {
        const double* W = &g.V[g.at(n, 0)];
        for (std::size_t j = 1; j < J; ++j) {
            wl[j] = (W[j + 1] - W[j - 1]) / (2 * h);
            wll[j] = (W[j + 1] - 2 * W[j] + W[j - 1]) / (h * h);
            const double x = g.x(j);
            const double vx = wl[j] / x, vxx = (wll[j] - wl[j]) / (x * x);
            if (!(vx > 0) || !(vxx < 0))
                fail(ErrorKind::SolverInconsistent, "value lost monotone concavity at t=" + std::to_string(g.t(n)) +
                                                        ", x=" + std::to_string(x) + " (V_x=" + std::to_string(vx) +
                                                        ", V_xx=" + std::to_string(vxx) + ")");
            const double D = wll[j] - wl[j] - theta * wl[j] * wl[j];
            if (!(D < 0))
                fail(ErrorKind::SolverInconsistent, "second-order condition fails at t=" + std::to_string(g.t(n)) +
                                                        ", node " + std::to_string(j));
            pol[j] = spec.fixed_fraction ? *spec.fixed_fraction : -ex * wl[j] / (s2 * D);
            g.Vx[g.at(n, j)] = vx;
            g.Vxx[g.at(n, j)] = vxx;
            g.pi[g.at(n, j)] = pol[j];
        }
        for (std::size_t j : {std::size_t{0}, J}) {
            const std::size_t in = j == 0 ? 1 : J - 1;
            g.Vx[g.at(n, j)] = g.Vx[g.at(n, in)];
            g.Vxx[g.at(n, j)] = g.Vxx[g.at(n, in)];
            g.pi[g.at(n, j)] = g.pi[g.at(n, in)];
        }
    };

    for (std::size_t n = N; n-- > 0;) {
        differentiate(n + 1);
        const double* W = &g.V[g.at(n + 1, 0)];
        double* Wn = &g.V[g.at(n, 0)];
        double worst = 0;
        for (std::size_t j = 1; j < J; ++j) {
            const double pi = pol[j], a = 0.5 * s2 * pi * pi;
            const double b = p.r + pi * ex - a * (1 + theta * wl[j]);
            worst = std::max(worst, rate(pi, b));
            const double up = b >= 0 ? (W[j + 1] - W[j]) / h : (W[j] - W[j - 1]) / h;
            Wn[j] = W[j] + g.dt * (b * up + a * wll[j]);
        }
        if (g.dt * worst > 1.0)
            fail(ErrorKind::UnstableGrid, "explicit step violates the stability bound; need at least " +
                                              std::to_string(static_cast<std::size_t>(std::ceil(p.T * worst))) +
                                              " time steps, have " + std::to_string(N));
        Wn[0] = detail::power_law_extrapolate(Wn[1], Wn[2]);
        Wn[J] = detail::power_law_extrapolate(Wn[J - 1], Wn[J - 2]);
    }
    differentiate(0);
    return g;
}

struct PolicyQuery {
    double pi = 0;
    bool clamped = false;  // query fell outside the grid and was clamped to it
};

/// Bilinear interpolation of π* in (t, log x).
class PolicySurface {
public:
    explicit PolicySurface(const HjbGrid& g) : g_(&g) {}

    PolicyQuery at(double t, double x) const { return interp(g_->pi, t, x); }
    PolicyQuery value(double t, double x) const { return interp(g_->V, t, x); }
    /// Π* = π*·x
    double amount(double t, double x, bool* clamped = nullptr) const {
        const auto q = at(t, x);
        if (clamped) *clamped = q.clamped;
        return q.pi * x;
    }

private:
    PolicyQuery interp(const std::vector<double>& a, double t, double x) const {
        const HjbGrid& g = *g_;
        PolicyQuery q;
        double l = x > 0 ? std::log(x) : -std::numeric_limits<double>::infinity();
        const double lhi = g.ell(g.J);
        if (l < g.ell_lo || l > lhi || t < 0 || t > g.params.T || std::isnan(t)) q.clamped = true;
        l = std::clamp(l, g.ell_lo, lhi);
        t = std::clamp(std::isnan(t) ? 0.0 : t, 0.0, g.params.T);
        const double fj = (l - g.ell_lo) / g.h, fn = t / g.dt;
        const std::size_t j = std::min(static_cast<std::size_t>(fj), g.J - 1);
        const std::size_t n = std::min(static_cast<std::size_t>(fn), g.n_time - 1);
        const double wj = std::clamp(fj - static_cast<double>(j), 0.0, 1.0);
        const double wn = std::clamp(fn - static_cast<double>(n), 0.0, 1.0);
        auto v = [&](std::size_t nn, std::size_t jj) { return a[g.at(nn, jj)]; };
        q.pi = (1 - wn) * ((1 - wj) * v(n, j) + wj * v(n, j + 1)) + wn * ((1 - wj) * v(n + 1, j) + wj * v(n + 1, j + 1));
        return q;
    }

    const HjbGrid* g_;
};

inline PolicySurface extract_policy(const HjbGrid& g) {
    if (g.n_time == 0 || g.J < 2 || g.pi.size() != (g.n_time + 1) * (g.J + 1))
        fail(ErrorKind::InvalidArgument, "HJB grid is empty or inconsistent");
    return PolicySurface(g);
}

struct ThetaProperties {
    double theta = 0;
    double max_pi = 0, min_pi = 0;    // over interior nodes and all times
    bool more_cautious = true;        // max_pi < π_classical (vacuous for θ = 0)
    bool below_previous = true;       // strictly below the previous θ at every interior node
    std::string wealth_profile;       // "decreasing", "increasing", "flat" or "mixed" in x at t = 0
    bool wealth_profile_matches_heuristic = false;
};

struct AmbiguityReport {
    double pi_classical = 0;
    std::vector<ThetaProperties> thetas;
    bool caution_holds = true;
    bool monotone_holds = true;
    std::size_t n_time_steps = 0;
};

/// Solves the HJB for every θ on one shared grid and checks π* < π_classical
/// for θ > 0 and strict pointwise decrease in θ at interior nodes. The wealth
/// profile (sign of ∂π*/∂x over the middle half of the range at t = 0) is
/// reported, compared with the heuristic (decreasing for γ ∈ (0,1),
/// increasing for γ < 0), and never asserted.
inline AmbiguityReport verify_ambiguity_properties(const MarketParams& p, const std::vector<double>& thetas,
                                                   HjbGridSpec spec = {}) {
    if (thetas.empty()) fail(ErrorKind::InvalidArgument, "theta list is empty");
    if (thetas.front() < 0) fail(ErrorKind::InvalidArgument, "theta list must start at >= 0");
    for (std::size_t i = 1; i < thetas.size(); ++i)
        if (!(thetas[i] > thetas[i - 1])) fail(ErrorKind::InvalidArgument, "theta list must be increasing");
    if (spec.n_time_steps == 0) spec.n_time_steps = solve_hjb(p, thetas.back(), spec).n_time;
    AmbiguityReport rep;
    rep.pi_classical = classical_merton(p).pi;
    rep.n_time_steps = spec.n_time_steps;
    std::optional<HjbGrid> prev;
    for (double th : thetas) {
        HjbGrid g = solve_hjb(p, th, spec);
        ThetaProperties tp;
        tp.theta = th;
        tp.max_pi = -std::numeric_limits<double>::infinity();
        tp.min_pi = std::numeric_limits<double>::infinity();
        for (std::size_t n = 0; n <= g.n_time; ++n)
            for (std::size_t j = 1; j < g.J; ++j) {
                const double v = g.policy(n, j);
                tp.max_pi = std::max(tp.max_pi, v);
                tp.min_pi = std::min(tp.min_pi, v);
                if (prev && !(v < prev->policy(n, j))) tp.below_previous = false;
            }
        tp.more_cautious = th == 0 || tp.max_pi < rep.pi_classical;
        std::size_t up = 0, down = 0;
        for (std::size_t j = g.J / 4; j < 3 * g.J / 4; ++j) {
            const double d = g.policy(0, j + 1) - g.policy(0, j), eps = 1e-9 * std::abs(g.policy(0, j));
            if (d > eps) ++up;
            if (d < -eps) ++down;
        }
        tp.wealth_profile = up && down ? "mixed" : up ? "increasing" : down ? "decreasing" : "flat";
        tp.wealth_profile_matches_heuristic =
            th == 0 ? tp.wealth_profile == "flat" : tp.wealth_profile == (p.gamma > 0 ? "decreasing" : "increasing");
        rep.caution_holds = rep.caution_holds && tp.more_cautious;
        rep.monotone_holds = rep.monotone_holds && tp.below_previous;
        rep.thetas.push_back(tp);
        prev = std::move(g);
    }
    return rep;
}

struct AllocationObservation {
    double t = 0, x = 1, allocation = 0;
};

struct ThetaSearch {
    double lo = 0.0, hi = 1.0, tol = 1e-4;
};

struct CalibrationResult {
    double theta = 0, loss = 0;
    std::vector<std::pair<double, double>> curve;  // (θ, loss) in evaluation order
    bool used_grid_scan = false;
    std::string warning;
    std::size_t clamped_queries = 0;
};

/// Mean squared error of Π*(t_i, x_i; θ) against the observed amounts.
inline double allocation_loss(const MarketParams& p, double theta, const std::vector<AllocationObservation>& obs,
                              const HjbGridSpec& spec, std::size_t* clamped = nullptr) {
    const HjbGrid g = solve_hjb(p, theta, spec);
    const PolicySurface s = extract_policy(g);
    double L = 0;
    for (const auto& o : obs) {
        bool c = false;
        const double d = s.amount(o.t, o.x, &c) - o.allocation;
        L += d * d;
        if (c && clamped) ++*clamped;
    }
    return L / static_cast<double>(obs.size());
}

/// Golden-section search on the allocation loss. Every evaluation is recorded;
/// if any recorded loss beats the final bracket's minimum the curve is not
/// unimodal and a 64-point scan of [lo, hi] decides instead.
inline CalibrationResult calibrate_theta(const MarketParams& p, const std::vector<AllocationObservation>& obs,
                                         HjbGridSpec spec = {}, const ThetaSearch& search = {}) {
    if (obs.empty()) fail(ErrorKind::InvalidArgument, "calibration needs observations");
    if (!(search.lo < search.hi) || search.lo < 0) fail(ErrorKind::InvalidArgument, "search range must satisfy 0 <= lo < hi");
    for (const auto& o : obs)
        if (!(o.x > 0)) fail(ErrorKind::InvalidArgument, "observation wealth must be positive");
    // one time grid for every θ keeps the loss a smooth function of θ
    if (spec.n_time_steps == 0) spec.n_time_steps = solve_hjb(p, search.hi, spec).n_time;
    CalibrationResult res;
    auto loss = [&](double th) {
        std::size_t c = 0;
        const double v = allocation_loss(p, th, obs, spec, &c);
        res.curve.emplace_back(th, v);
        res.clamped_queries = std::max(res.clamped_queries, c);
        return v;
    };
    const double phi = (std::sqrt(5.0) - 1) / 2;
    double a = search.lo, b = search.hi;
    const double fa = loss(a), fb = loss(b);
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = loss(c), fd = loss(d);
    while (b - a > search.tol) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = loss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = loss(d);
        }
    }
    double best = fc <= fd ? c : d, fbest = std::min(fc, fd);
    // the bracket may have collapsed onto an end of the range
    if (fa < fbest && a == search.lo) best = a, fbest = fa;
    if (fb < fbest && b == search.hi) best = b, fbest = fb;
    const double slack = 1e-12 * std::max(1.0, std::abs(fbest));
    bool consistent = true;
    for (const auto& [th, v] : res.curve)
        if (v < fbest - slack && (th < a || th > b)) consistent = false;
    if (!consistent) {
        res.used_grid_scan = true;
        res.warning = "loss curve is not unimodal on [" + std::to_string(search.lo) + ", " + std::to_string(search.hi) +
                      "]; used a 64-point scan";
        for (int i = 0; i < 64; ++i) {
            const double th = search.lo + (search.hi - search.lo) * i / 63.0;
            const double v = loss(th);
            if (v < fbest) best = th, fbest = v;
        }
    }
    res.theta = best;
    res.loss = fbest;
    if (res.clamped_queries) {
        if (!res.warning.empty()) res.warning += "; ";
        res.warning += std::to_string(res.clamped_queries) + " observations lie outside the grid and were clamped";
    }
    return res;
}

/// Observations Π*(t_i, x_i; θ) read off a solve.
inline std::vector<AllocationObservation> synthetic_observations(const MarketParams& p, double theta,
                                                                 const std::vector<std::pair<double, double>>& states,
                                                                 const HjbGridSpec& spec = {}) {
    const HjbGrid g = solve_hjb(p, theta, spec);
    const PolicySurface s = extract_policy(g);
    std::vector<AllocationObservation> out;
    for (auto [t, x] : states) out.push_back({t, x, s.amount(t, x)});
    return out;
}

inline std::vector<AllocationObservation> read_observations_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorKind::InvalidArgument, "cannot read observations " + path);
    std::string line;
    std::getline(is, line);  // header t,x,allocation
    std::vector<AllocationObservation> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string a, b, c;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ','))
            fail(ErrorKind::InvalidArgument, "observation row needs t,x,allocation: " + line);
        AllocationObservation o{std::stod(a), std::stod(b), std::stod(c)};
        if (!(o.x > 0)) fail(ErrorKind::InvalidArgument, "observation wealth must be positive: " + line);
        out.push_back(o);
    }
    return out;
}

inline void write_observations_csv(const std::vector<AllocationObservation>& obs, const std::string& path) {
    std::ofstream os(path);
    if (!os) fail(ErrorKind::InvalidArgument, "cannot write " + path);
    os.precision(17);
    os << "t,x,allocation\n";
    for (const auto& o : obs) os << o.t << ',' << o.x << ',' << o.allocation << '\n';
}

/// (t, x, V, pi) for every node, or every stride-th time step.
inline void write_hjb_csv(const HjbGrid& g, const std::string& path, std::size_t time_stride = 1) {
    std::ofstream os(path);
    if (!os) fail(ErrorKind::InvalidArgument, "cannot write " + path);
    os.precision(12);
    os << "t,x,V,pi\n";
    time_stride = std::max<std::size_t>(time_stride, 1);
    for (std::size_t n = 0; n <= g.n_time; ++n) {
        if (n % time_stride != 0 && n != g.n_time) continue;
        for (std::size_t j = 0; j <= g.J; ++j) os << g.t(n) << ',' << g.x(j) << ',' << g.value(n, j) << ',' << g.policy(n, j) << '\n';
    }
}

struct ValueCrossCheck {
    double fraction = 0, theta = 0;
    double pde = 0;          // HJB solve with the fraction frozen, at (0, x0)
    double bsde = 0, bsde_se = 0;
    double quadrature = 0;   // −(1/θ)·log E[exp(−θ U(X_T))] over the lognormal X_T
};

/// Value of a fixed-fraction strategy under the θ-driver by three routes: the
/// HJB scheme with π frozen, the LSMC BSDE with the entropic driver on
/// simulated wealth, and quadrature of the exact certainty equivalent.
inline ValueCrossCheck cross_check_fixed_strategy(const MarketParams& p, double theta, double fraction, double x0,
                                                  std::size_t n_paths, std::size_t n_steps, std::uint64_t seed,
                                                  HjbGridSpec spec = {}) {
    p.validate();
    ValueCrossCheck out;
    out.fraction = fraction;
    out.theta = theta;
    spec.fixed_fraction = fraction;
    spec.x0 = x0;
    const HjbGrid g = solve_hjb(p, theta, spec);
    out.pde = extract_policy(g).value(0.0, x0).pi;

    const TimeGrid grid(p.T, n_steps);
    auto bundle = std::make_shared<const BrownianBundle>(sample_brownian(grid, n_paths, 1, seed));
    const auto model = models::geometric(p.r + fraction * (p.mu - p.r), p.sigma * fraction, x0);
    const auto pb = make_problem(model, grid, bundle, terminals::map(terminals::state(), [p](double x) { return p.utility(std::max(x, 0.0)); }, "U(X_T)"),
                                 entropic_driver(theta));
    const auto sol = solve_bsde_lsmc(pb);
    out.bsde = sol.y0();
    out.bsde_se = sol.y0_standard_error();

    const double m = std::log(x0) + (p.r + fraction * (p.mu - p.r) - 0.5 * p.sigma * p.sigma * fraction * fraction) * p.T;
    const double s = p.sigma * std::abs(fraction) * std::sqrt(p.T);
    const double u0 = p.utility(std::exp(m));
    auto density = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI); };
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    if (theta == 0) {
        out.quadrature = GK::integrate([&](double z) { return p.utility(std::exp(m + s * z)) * density(z); }, -12.0, 12.0, 15, 1e-13);
    } else {
        // shift by U at the median so the exponent stays bounded
        const double I = GK::integrate(
            [&](double z) { return std::exp(-theta * (p.utility(std::exp(m + s * z)) - u0)) * density(z); }, -12.0, 12.0, 15, 1e-13);
        out.quadrature = u0 - std::log(I) / theta;
    }
    return out;
}

}  // namespace nexp
