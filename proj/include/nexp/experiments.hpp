#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "axioms.hpp"
#include "bsde.hpp"
#include "config.hpp"
#include "fbsde.hpp"
#include "meanfield.hpp"
#include "merton.hpp"
#include "net_checks.hpp"
#include "nets.hpp"
#include "oracles.hpp"
#include "report.hpp"
#include "sensitivity.hpp"

namespace nexp {

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> k{"solve",         "oracle-suite",  "verify-axioms", "train",    "meanfield-lln",
                                            "meanfield-clt", "fbsde",         "merton",        "calibrate"};
    return k;
}

// ---------------------------------------------------------------------------
// Config → library objects

inline TimeGrid grid_from(const std::optional<ConfigNode>& n, double horizon = 1.0, std::size_t steps = 50) {
    if (!n) return TimeGrid(horizon, steps);
    const double T = n->num("horizon", horizon);
    if (!(T > 0)) fail(ErrorKind::ConfigError, n->path("horizon") + ": must be positive");
    return TimeGrid(T, n->positive("steps", steps));
}

inline ForwardModel forward_model_from(const std::optional<ConfigNode>& n) {
    if (!n) return models::brownian(1);
    const std::string name = n->str("name", "brownian");
    if (name == "brownian") return models::brownian(n->positive("dim", 1), n->num("x0", 0.0));
    if (name == "geometric") return models::geometric(n->num("mu"), n->num("sigma"), n->num("x0", 1.0));
    if (name == "ornstein-uhlenbeck")
        return models::ornstein_uhlenbeck(n->num("kappa"), n->num("mean", 0.0), n->num("sigma"), n->num("x0", 0.0));
    fail(ErrorKind::ConfigError, n->path("name") + ": unknown forward model '" + name + "'");
}

inline Terminal terminal_from(const std::optional<ConfigNode>& n) {
    if (!n) return terminals::brownian();
    const std::string kind = n->str("kind", "brownian");
    try {
        return make_terminal(kind, n->nums("params", {}));
    } catch (const Error&) {
        fail(ErrorKind::ConfigError, n->path("kind") + ": unknown terminal kind '" + kind + "'");
    }
}

inline NetLayout net_layout_from(const ConfigNode& n, std::size_t state_dim, std::size_t noise_dim) {
    NetLayout l;
    l.state_dim = n.positive("state_dim", state_dim);
    l.noise_dim = n.positive("noise_dim", noise_dim);
    l.hidden = n.sizes("hidden", l.hidden);
    if (n.has("activation")) l.activation = parse_activation(n.str("activation"));
    if (n.has("aux_hidden")) l.aux_hidden = n.sizes("aux_hidden", {});
    if (n.has("aux_activation")) l.aux_activation = parse_activation(n.str("aux_activation"));
    l.aux_monotone = n.flag("aux_monotone", l.aux_monotone);
    l.bound = n.num("bound", l.bound);
    l.init_scale = n.num("init_scale", l.init_scale);
    return l;
}

inline std::string read_text_file(const std::string& path, const std::string& field) {
    std::ifstream is(path);
    if (!is) fail(ErrorKind::ConfigError, field + ": cannot read " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Driver spec: {"type": zero | linear{b} | entropic{theta} | quadratic{theta}
/// | net{file} | net{architecture, hidden, ..., init_seed}}.
inline DriverPtr driver_from(const ConfigNode& n, std::uint64_t seed, std::size_t state_dim = 1, std::size_t noise_dim = 1) {
    const std::string type = n.str("type");
    if (type == "zero") return std::make_shared<ZeroDriver>();
    if (type == "linear") return std::make_shared<LinearZDriver>(n.nums("b"));
    if (type == "entropic") return entropic_driver(n.num("theta"));
    if (type == "quadratic") return std::make_shared<QuadraticZDriver>(n.num("theta"), 1.0);
    if (type == "net") {
        if (n.has("file")) return DriverNet::parse(read_text_file(n.str("file"), n.path("file")));
        const ArchitectureKind kind = parse_architecture(n.str("architecture"));
        return build_driver(kind, net_layout_from(n, state_dim, noise_dim), n.uint("init_seed", split_seed(seed, "driver-init")));
    }
    fail(ErrorKind::ConfigError, n.path("type") + ": unknown driver type '" + type + "'");
}

struct SolverSettings {
    RegressionBasis basis;
    LsmcOptions opts;
};

inline SolverSettings lsmc_from(const std::optional<ConfigNode>& n, bool control_variate_default = false) {
    SolverSettings s;
    s.opts.z_control_variate = control_variate_default;
    if (!n) return s;
    s.basis.degree = n->size("degree", s.basis.degree);
    s.opts.inner_picard_iters = n->size("inner_picard_iters", s.opts.inner_picard_iters);
    s.opts.max_condition = n->num("max_condition", s.opts.max_condition);
    s.opts.z_control_variate = n->flag("control_variate", control_variate_default);
    if (auto zc = n->find("z_clip")) {
        const std::string mode = zc->str("mode", "iqr");
        if (mode == "iqr") s.opts.z_clip = ZClip::iqr(zc->num("value", 10.0));
        else if (mode == "absolute") s.opts.z_clip = ZClip::absolute(zc->num("value"));
        else if (mode == "off") s.opts.z_clip = ZClip::off();
        else fail(ErrorKind::ConfigError, zc->path("mode") + ": expected iqr, absolute or off");
    }
    return s;
}

inline MeanFieldModel mean_field_from(const ConfigNode& n) {
    static const json empty = json::object();
    const std::string name = n.str("name");
    const ConfigNode p = n.has("params") ? n.at("params") : ConfigNode(empty, n.path("params"));
    if (name == "independent")
        return mf_models::independent(p.num("kappa", 1.0), p.num("sigma", 0.3), p.num("m0", 1.0), p.num("s0", 0.2));
    if (name == "mean-reversion-to-crowd")
        return mf_models::mean_reversion_to_crowd(p.num("kappa", 1.0), p.num("sigma", 0.1), p.num("s0", 1.0));
    if (name == "linear-mean-field")
        return mf_models::linear(p.num("a", 0.5), p.num("c", 0.5), p.num("sigma", 0.3), p.num("m0", 1.0), p.num("s0", 0.2),
                                 p.num("kappa", 0.5), p.num("beta", 0.5));
    if (name == "linear-gaussian-clt")
        return mf_models::linear_gaussian_clt(p.num("a", 0.5), p.num("c", -0.5), p.num("sigma", 0.4), p.num("m0", 1.0),
                                              p.num("s0", 0.3), p.num("u0", 1.0), p.num("kappa", 0.5));
    fail(ErrorKind::ConfigError, n.path("name") + ": unknown mean-field model '" + name + "'");
}

inline MarketParams market_from(const std::optional<ConfigNode>& n) {
    MarketParams p;
    if (!n) return p;
    p.mu = n->num("mu", p.mu);
    p.r = n->num("r", p.r);
    p.sigma = n->num("sigma", p.sigma);
    p.gamma = n->num("gamma", p.gamma);
    p.T = n->num("T", p.T);
    try {
        p.validate();
    } catch (const Error& e) {
        fail(ErrorKind::ConfigError, n->path() + ": " + e.what());
    }
    return p;
}

inline HjbGridSpec hjb_spec_from(const std::optional<ConfigNode>& n) {
    HjbGridSpec s;
    if (!n) return s;
    s.J = n->positive("J", s.J);
    s.n_time_steps = n->size("time_steps", s.n_time_steps);
    s.x0 = n->num("x0", s.x0);
    if (n->has("ell_lo")) s.ell_lo = n->num("ell_lo");
    if (n->has("ell_hi")) s.ell_hi = n->num("ell_hi");
    s.cfl_safety = n->num("cfl_safety", s.cfl_safety);
    return s;
}

// ---------------------------------------------------------------------------
// Run context

struct RunContext {
    ConfigNode cfg;
    std::uint64_t seed;
    std::filesystem::path out;
    RunReport& rep;

    std::string artifact(const std::string& key, const std::string& file) {
        const std::string p = (out / file).string();
        rep.artifacts[key] = p;
        return p;
    }
    void value(const std::string& k, json v) { rep.values[k] = std::move(v); }
    void number(const std::string& k, double v) { rep.values[k] = json_number(v); }
    void check(const std::string& name, bool passed, double measured, std::optional<double> tol, std::string comparator,
               std::string detail = {}) {
        rep.add_check({name, passed, finite_or_none(measured), tol, std::move(comparator), std::move(detail)});
    }
    std::uint64_t sub_seed(std::string_view purpose) const { return split_seed(seed, purpose); }
};

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

inline BsdeProblem problem_from(const ConfigNode& n, std::uint64_t seed) {
    const ForwardModel model = forward_model_from(n.find("model"));
    const TimeGrid grid = grid_from(n.find("grid"));
    const std::size_t N = n.positive("paths", 10000);
    return make_problem(model, grid, share(sample_brownian(grid, N, model.noise_dim, split_seed(seed, "solve-bundle"))),
                        terminal_from(n.find("terminal")),
                        driver_from(n.at("driver"), seed, model.state_dim, model.noise_dim));
}

// ---------------------------------------------------------------------------
// solve: one LSMC solve, optional expected value, optional truncation sweep

inline void run_solve(RunContext& cx) {
    const ConfigNode pn = cx.cfg.at("problem");
    const BsdeProblem pb = problem_from(pn, cx.seed);
    const SolverSettings ss = lsmc_from(cx.cfg.find("lsmc"));
    const BsdeSolution sol = solve_bsde_lsmc(pb, ss.basis, ss.opts);
    sol.write_csv(cx.artifact("solution", "solution.csv"));
    cx.number("y0", sol.y0());
    cx.number("y0_standard_error", sol.y0_standard_error());
    cx.number("max_abs_y", sol.max_abs_y());
    cx.value("clip_count", sol.total_clip_count());

    if (auto e = cx.cfg.find("expect")) {
        const double target = e->num("y0");
        const double tol = e->has("rel_tol") ? e->num("rel_tol") * std::abs(target) : e->num("abs_tol");
        const double d = std::abs(sol.y0() - target);
        cx.check("y0", d <= tol, d, tol, "abs-diff <=", "target " + fmt(target));
    }
    if (cx.cfg.has("truncation")) {
        const std::vector<double> levels = cx.cfg.nums("truncation");
        if (levels.empty()) fail(ErrorKind::ConfigError, cx.cfg.path("truncation") + ": needs at least one level");
        const double inf = sol.y0();
        std::ofstream os(cx.artifact("truncation", "truncation.csv"));
        os.precision(17);
        os << "k,y0,distance\n";
        double prev = INFINITY, worst_rise = 0, worst_gap_above = 0;
        std::size_t n_above = 0;
        json dist = json::array();
        for (double k : levels) {
            if (!(k > 0)) fail(ErrorKind::ConfigError, cx.cfg.path("truncation") + ": levels must be positive");
            const double y = solve_truncated(pb, k, ss.basis, ss.opts).y0();
            const double d = std::abs(y - inf);
            os << k << ',' << y << ',' << d << '\n';
            dist.push_back(json_number(d));
            if (std::isfinite(prev)) worst_rise = std::max(worst_rise, d - prev);
            prev = d;
            if (k > sol.max_abs_y()) {
                ++n_above;
                worst_gap_above = std::max(worst_gap_above, d);
            }
        }
        cx.value("truncation_distance", dist);
        cx.check("truncation distance non-increasing", worst_rise <= 0.0, worst_rise, 0.0, "largest rise <=");
        cx.check("truncation inactive above max|Y|", worst_gap_above == 0.0, worst_gap_above, 0.0, "==",
                 n_above == 0 ? "vacuous: no level exceeds max|Y| = " + fmt(sol.max_abs_y())
                              : std::to_string(n_above) + " level(s) above max|Y| = " + fmt(sol.max_abs_y()));
    }
}

// ---------------------------------------------------------------------------
// oracle-suite: ξ = W_T under zero, linear and entropic drivers

inline void run_oracle_suite(RunContext& cx) {
    const ConfigNode& c = cx.cfg;
    const TimeGrid grid = grid_from(c.find("grid"), 1.0, 50);
    const std::size_t N = c.positive("paths", 100000);
    const double b = c.num("linear_b", 0.3), theta = c.num("entropic_theta", 1.0);
    const double T = grid.horizon();
    // Z control variate on by default: exact under these drivers and it shrinks the noise well below the tolerances
    const SolverSettings ss = lsmc_from(c.find("lsmc"), true);
    auto bundle = share(sample_brownian(grid, N, 1, cx.sub_seed("oracle-bundle")));
    const auto paths = std::make_shared<const PathEnsemble>(simulate_forward(models::brownian(1), grid, bundle));
    std::vector<double> w(N);
    for (std::size_t p = 0; p < N; ++p) w[p] = bundle->terminal(p);

    struct Case {
        std::string name;
        DriverPtr f;
        OracleSpec oracle;
        double exact;
        double tol;
        bool relative;
    };
    static const json empty = json::object();
    const ConfigNode tol = c.has("tolerances") ? c.at("tolerances") : ConfigNode(empty, c.path("tolerances"));
    const std::vector<Case> cases{
        {"zero", std::make_shared<ZeroDriver>(), OracleSpec::zero(), 0.0, tol.num("zero_abs", 0.02), false},
        {"linear", std::make_shared<LinearZDriver>(std::vector<double>{b}), OracleSpec::linear({b}), b * T,
         tol.num("linear_rel", 0.02), true},
        {"entropic", entropic_driver(theta), OracleSpec::entropic(theta), -0.5 * theta * T, tol.num("entropic_rel", 0.02), true},
    };
    for (const auto& k : cases) {
        const BsdeSolution sol = solve_bsde_lsmc(BsdeProblem{paths, terminals::brownian(), k.f}, ss.basis, ss.opts);
        sol.write_csv(cx.artifact("solution_" + k.name, "oracle_" + k.name + ".csv"));
        const double sample_oracle = closed_form_oracle(k.oracle, w, T, w);
        cx.number(k.name + ".y0", sol.y0());
        cx.number(k.name + ".y0_standard_error", sol.y0_standard_error());
        cx.number(k.name + ".closed_form", k.exact);
        cx.number(k.name + ".sample_oracle", sample_oracle);
        const double err = std::abs(sol.y0() - k.exact);
        const double bound = k.relative ? k.tol * std::abs(k.exact) : k.tol;
        cx.check("oracle " + k.name, err <= bound, err, bound, "abs-diff <=",
                 "Y0 " + fmt(sol.y0()) + " vs " + fmt(k.exact) + (k.relative ? " (" + fmt(100 * k.tol) + "% rel)" : ""));
    }
}

// ---------------------------------------------------------------------------
// verify-axioms

inline std::vector<std::string> axiom_sections(const ConfigNode& c) {
    if (!c.has("sections")) return {"comparison", "convexity", "dynamic_consistency", "dual"};
    const json& s = c.raw()["sections"];
    if (!s.is_array()) fail(ErrorKind::ConfigError, c.path("sections") + ": expected an array of names");
    std::vector<std::string> out;
    for (const auto& v : s) {
        if (!v.is_string()) fail(ErrorKind::ConfigError, c.path("sections") + ": expected an array of names");
        const std::string n = v.get<std::string>();
        static const std::vector<std::string> known{"comparison", "convexity", "dynamic_consistency", "dual",
                                                    "architecture", "gradients"};
        if (std::find(known.begin(), known.end(), n) == known.end())
            fail(ErrorKind::ConfigError, c.path("sections") + ": unknown section '" + n + "'");
        out.push_back(n);
    }
    return out;
}

inline ConfigNode section(const ConfigNode& c, const std::string& key) {
    static const json empty = json::object();
    return c.has(key) ? c.at(key) : ConfigNode(empty, c.path(key));
}

inline BsdeProblem brownian_problem(std::size_t N, const TimeGrid& g, std::uint64_t seed, DriverPtr f,
                                    Terminal xi = terminals::brownian()) {
    return make_problem(models::brownian(1), g, share(sample_brownian(g, N, 1, seed)), std::move(xi), std::move(f));
}

inline NetLayout default_axiom_layout(const ConfigNode& s) {
    NetLayout l;
    l.hidden = {6, 6};
    l.aux_hidden = std::vector<std::size_t>{4};
    if (auto n = s.find("layout")) l = net_layout_from(*n, 1, 1);
    return l;
}

inline void run_verify_axioms(RunContext& cx) {
    const ConfigNode& c = cx.cfg;
    const SolverSettings ss = lsmc_from(c.find("lsmc"));
    AxiomOptions ax;
    ax.seed = cx.sub_seed("axioms");
    ax.noise_multiple = c.num("noise_multiple", 3.0);
    for (const std::string& sec : axiom_sections(c)) {
        const ConfigNode s = section(c, sec);
        if (sec == "comparison") {
            const std::size_t nets = s.positive("nets", 5);
            const TimeGrid g = grid_from(s.find("grid"), 1.0, 10);
            const NetLayout l = default_axiom_layout(s);
            for (std::size_t i = 0; i < nets; ++i) {
                auto net = build_driver(ArchitectureKind::MonotoneY, l, split_seed(cx.sub_seed("comparison-net"), i));
                auto pb = brownian_problem(s.positive("paths", 5000), g, split_seed(cx.sub_seed("comparison-bundle"), i), net);
                const auto r = check_comparison(pb, terminals::map(terminals::brownian(), [](double v) { return std::abs(v); }, "|W_T|"),
                                                terminals::constant(0.0), ss.basis, ss.opts, ax);
                cx.check("comparison net " + std::to_string(i), r.pass, r.diff, -r.tol, ">=",
                         std::string("monotone-y driver") + (r.driver_monotone ? "" : ", driver check failed"));
            }
        } else if (sec == "convexity") {
            const std::size_t nets = s.positive("nets", 5);
            const TimeGrid g = grid_from(s.find("grid"), 1.0, 10);
            const NetLayout l = default_axiom_layout(s);
            const double lambda = s.num("lambda", 0.5);
            for (std::size_t i = 0; i < nets; ++i) {
                auto net = build_driver(ArchitectureKind::IcnnYZ, l, split_seed(cx.sub_seed("convexity-net"), i));
                auto pb = brownian_problem(s.positive("paths", 10000), g, split_seed(cx.sub_seed("convexity-bundle"), i), net);
                const auto r = check_convexity_and_jensen(pb, terminals::brownian(), terminals::brownian(0, -1.0), lambda,
                                                          C2Function::square(), ss.basis, ss.opts, ax);
                cx.check("operator convexity net " + std::to_string(i), r.delta_cvx >= -r.tol_cvx, r.delta_cvx, -r.tol_cvx,
                         ">=", r.driver_convex ? "icnn-yz driver" : "driver convexity check failed");
                cx.check("jensen net " + std::to_string(i), r.delta_jen >= -r.tol_jen, r.delta_jen, -r.tol_jen, ">=",
                         "phi = x^2");
            }
        } else if (sec == "dynamic_consistency") {
            const double theta = s.num("theta", 1.0), split = s.num("split", 0.5), rel = s.num("rel_tol", 0.02);
            auto pb = brownian_problem(s.positive("paths", 20000), grid_from(s.find("grid"), 1.0, 20), cx.sub_seed("dc-bundle"),
                                       entropic_driver(theta));
            const auto r = check_dynamic_consistency(pb, split, ss.basis, ss.opts);
            cx.number("dynamic_consistency.y0_direct", r.y0_direct);
            cx.number("dynamic_consistency.y0_nested", r.y0_nested);
            const double bound = rel * std::abs(r.y0_direct);
            cx.check("dynamic consistency", r.gap <= bound, r.gap, bound, "<=", "entropic driver, split at " + fmt(split));
        } else if (sec == "dual") {
            const double theta = s.num("theta", 1.0), rel = s.num("rel_tol", 0.02);
            const std::vector<double> controls = s.nums("controls", {0.0, 0.5, 1.0, 1.5, 2.0});
            auto pb = brownian_problem(s.positive("paths", 100000), grid_from(s.find("grid"), 1.0, 10), cx.sub_seed("dual-bundle"),
                                       std::make_shared<QuadraticZDriver>(theta, 1.0));
            const BsdeSolution sol = solve_bsde_lsmc(pb, ss.basis, ss.opts);
            std::vector<std::vector<double>> grid;
            for (double u : controls) grid.push_back({u});
            DualOptions o;
            o.seed = cx.sub_seed("dual");
            const auto r = dual_lower_bound(pb, grid, o);
            const std::size_t N = pb.paths->n_paths();
            const auto xi = pb.terminal.evaluate(*pb.paths, pb.paths->n_steps());
            cx.number("dual.y0", sol.y0());
            cx.number("dual.best", r.best);
            json vals = json::array();
            for (std::size_t i = 0; i < controls.size(); ++i) {
                // delta-method standard error of the self-normalized mean
                const double u = controls[i];
                double m = -INFINITY;
                for (std::size_t p = 0; p < N; ++p) m = std::max(m, u * pb.paths->bundle().terminal(p));
                double sw = 0, num = 0;
                std::vector<double> wts(N);
                for (std::size_t p = 0; p < N; ++p) sw += (wts[p] = std::exp(u * pb.paths->bundle().terminal(p) - m));
                for (std::size_t p = 0; p < N; ++p) num += wts[p] * xi[p];
                const double mean = num / sw;
                double s2 = 0;
                for (std::size_t p = 0; p < N; ++p) s2 += wts[p] * wts[p] * (xi[p] - mean) * (xi[p] - mean);
                const double se = std::sqrt(s2) / sw;
                const double tol = ax.noise_multiple * std::hypot(sol.y0_standard_error(), se);
                const double excess = r.values[i] - sol.y0();
                vals.push_back(json_number(r.values[i]));
                cx.check("dual bound u=" + fmt(u), excess <= tol, excess, tol, "value - Y0 <=");
            }
            cx.value("dual.values", vals);
            const auto it = std::find(controls.begin(), controls.end(), theta);
            if (it == controls.end())
                fail(ErrorKind::ConfigError, s.path("controls") + ": must contain u = theta for the near-equality check");
            const double gap = std::abs(r.values[static_cast<std::size_t>(it - controls.begin())] - sol.y0());
            const double bound = rel * std::abs(sol.y0());
            cx.check("dual near-equality at u=theta", gap <= bound, gap, bound, "<=", "convex quadratic driver");
        } else if (sec == "architecture") {
            const std::size_t mono = s.size("monotone_nets", 100), points = s.positive("monotone_points", 10000);
            const std::size_t icnn = s.size("icnn_nets", 100), segs = s.positive("icnn_segments", 1000);
            NetLayout l;
            if (auto n = s.find("layout")) l = net_layout_from(*n, 1, 1);
            std::size_t positive = 0;
            double max_dfdy = -INFINITY;
            for (std::size_t i = 0; i < mono; ++i) {
                auto net = build_driver(ArchitectureKind::MonotoneY, l, split_seed(cx.sub_seed("arch-monotone"), i));
                const auto r = verify_monotone(*net, points, split_seed(cx.sub_seed("arch-monotone-points"), i));
                positive += r.n_positive;
                max_dfdy = std::max(max_dfdy, r.max_dfdy);
            }
            cx.number("architecture.max_dfdy", max_dfdy);
            cx.check("monotone-y: points with df/dy > 0", positive == 0, static_cast<double>(positive), 0.0, "==",
                     std::to_string(mono) + " nets x " + std::to_string(points) + " points");
            std::size_t violations = 0;
            double worst = INFINITY;
            NetLayout li = l;
            li.noise_dim = s.positive("icnn_noise_dim", 2);
            for (std::size_t i = 0; i < icnn; ++i) {
                auto net = build_driver(ArchitectureKind::IcnnYZ, li, split_seed(cx.sub_seed("arch-icnn"), i));
                const auto r = verify_convexity(*net, segs, split_seed(cx.sub_seed("arch-icnn-segments"), i), 0.0);
                violations += r.violations;
                worst = std::min(worst, r.worst_gap);
            }
            cx.number("architecture.worst_midpoint_gap", worst);
            cx.check("icnn-yz: midpoint violations", violations == 0, static_cast<double>(violations), 0.0, "==",
                     std::to_string(icnn) + " nets x " + std::to_string(segs) + " segments");
        } else if (sec == "gradients") {
            const std::size_t nets = s.size("nets", 100), cases = s.size("fd_cases", 20);
            const double net_tol = s.num("net_tol", 1e-6), fd_tol = s.num("fd_tol", 1e-3), h = s.num("fd_step", 1e-5);
            const ArchitectureKind kinds[] = {ArchitectureKind::Free, ArchitectureKind::Separable,
                                              ArchitectureKind::BoundedInteraction, ArchitectureKind::MonotoneY,
                                              ArchitectureKind::IcnnYZ};
            SeqRng rng(cx.sub_seed("gradient-points"));
            double worst_net = 0;
            for (std::size_t i = 0; i < nets; ++i) {
                NetLayout l;
                l.hidden = {6, 5};
                l.aux_hidden = std::vector<std::size_t>{4};
                l.noise_dim = 2;
                l.state_dim = 1 + i % 2;
                auto net = build_driver(kinds[i % 5], l, split_seed(cx.sub_seed("gradient-net"), i));
                std::vector<double> x(l.state_dim), z(2);
                for (auto& v : x) v = rng.uniform(-1, 1);
                for (auto& v : z) v = rng.uniform(-1, 1);
                const double t = rng.uniform(0, 1), y = rng.uniform(-1, 1);
                worst_net = std::max(worst_net, check_driver_gradients(*net, t, x, y, z).rel_error);
            }
            cx.check("net gradients vs finite differences", worst_net <= net_tol, worst_net, net_tol, "max rel error <=",
                     std::to_string(nets) + " nets, smooth activations");
            double worst_fd = 0, entropic_grad = NAN;
            std::string worst_case;
            if (cases > 0) {
                const TimeGrid ge(1.0, 20);
                auto pe = brownian_problem(s.positive("entropic_paths", 20000), ge, cx.sub_seed("fd-entropic"), entropic_driver(1.0));
                const auto r = fd_gradient_check(pe, {0}, h, ss.basis, ss.opts);
                entropic_grad = r.analytic[0];
                worst_fd = r.max_rel_error;
                worst_case = "entropic";
            }
            const ArchitectureKind fd_kinds[] = {ArchitectureKind::Separable, ArchitectureKind::MonotoneY,
                                                 ArchitectureKind::IcnnYZ, ArchitectureKind::BoundedInteraction};
            const TimeGrid gn(1.0, 10);
            auto paths = std::make_shared<const PathEnsemble>(
                simulate_forward(models::brownian(1), gn, share(sample_brownian(gn, s.positive("net_paths", 3000), 1, cx.sub_seed("fd-bundle")))));
            for (std::size_t i = 1; i < cases; ++i) {
                NetLayout l;
                l.hidden = {5, 4};
                l.aux_hidden = std::vector<std::size_t>{3};
                const auto kind = fd_kinds[i % 4];
                auto net = build_driver(kind, l, split_seed(cx.sub_seed("fd-net"), i));
                SeqRng pick(split_seed(cx.sub_seed("fd-coords"), i));
                std::vector<std::size_t> coords;
                for (int q = 0; q < 3; ++q)
                    coords.push_back(std::min(net->param_count() - 1, static_cast<std::size_t>(pick.uniform() * net->param_count())));
                const auto r = fd_gradient_check(BsdeProblem{paths, terminals::brownian(), net}, coords, h, ss.basis, ss.opts);
                if (r.max_rel_error > worst_fd) {
                    worst_fd = r.max_rel_error;
                    worst_case = "case " + std::to_string(i) + " (" + to_string(kind) + ")";
                }
            }
            cx.number("gradients.entropic_dY0_dtheta", entropic_grad);
            cx.check("sensitivity vs finite-difference re-solves", worst_fd <= fd_tol, worst_fd, fd_tol, "max rel error <=",
                     std::to_string(cases) + " cases, worst " + worst_case + ", entropic dY0/dtheta = " + fmt(entropic_grad));
        }
    }
}

// ---------------------------------------------------------------------------
// train

inline Dataset dataset_from(const ConfigNode& c, double horizon) {
    const ConfigNode d = c.at("data");
    if (d.has("file")) {
        try {
            return read_dataset_csv(d.str("file"));
        } catch (const Error& e) {
            fail(ErrorKind::ConfigError, d.path("file") + ": " + e.what());
        }
    }
    const ConfigNode s = d.at("synthetic");
    const std::string kind = s.str("kind", "entropic");
    if (kind != "entropic") fail(ErrorKind::ConfigError, s.path("kind") + ": only 'entropic' synthetic data is built in");
    // Y₀ of ξ = c·W_T under f = −(θ/2)z² is −θc²T/2
    const double th = s.num("theta_true");
    const std::size_t n = s.positive("records", 10);
    const double step = s.num("c_step", 0.2);
    Dataset ds;
    for (std::size_t i = 1; i <= n; ++i) {
        const double cc = step * static_cast<double>(i);
        ds.push_back({"c" + std::to_string(i), "brownian", {cc}, -0.5 * th * cc * cc * horizon});
    }
    return ds;
}

inline void run_train(RunContext& cx) {
    const ConfigNode& c = cx.cfg;
    TrainingSetup setup;
    setup.model = forward_model_from(c.find("model"));
    const TimeGrid g = grid_from(c.find("grid"), 1.0, 10);
    setup.horizon = g.horizon();
    setup.n_steps = g.n_steps();
    setup.n_paths = c.positive("paths", 20000);
    const Dataset ds = dataset_from(c, setup.horizon);
    const ConfigNode sn = section(c, "schedule");
    Schedule sch;
    sch.eta = sn.num("eta", 0.3);
    sch.decay = sn.num("decay", 0.0);
    sch.max_iters = sn.positive("max_iters", 40);
    sch.tol = sn.num("tol", 1e-12);
    sch.resample_paths = sn.flag("resample_paths", false);
    sch.seed = cx.sub_seed("train");
    const ConfigNode rn = section(c, "regularization");
    const Regularization reg{rn.num("l2", 0.0), rn.num("norm", 0.0)};
    const SolverSettings ss = lsmc_from(c.find("lsmc"), true);
    const DriverPtr init = driver_from(c.at("driver"), cx.seed, setup.model.state_dim, setup.model.noise_dim);

    write_dataset_csv(ds, cx.artifact("dataset", "dataset.csv"));
    const TrainState st = train(ds, init, sch, reg, setup, ss.basis, ss.opts);
    write_train_log(st, cx.artifact("train_log", "train_log.csv"));
    if (const auto* net = dynamic_cast<const DriverNet*>(st.driver.get())) {
        std::ofstream os(cx.artifact("driver", "driver.txt"));
        os << net->serialize();
    }
    json th = json::array();
    for (double v : st.theta) th.push_back(json_number(v));
    cx.value("theta", th);
    cx.value("iterations", st.log.size());
    cx.value("converged", st.converged);
    cx.number("final_loss", st.loss_history.empty() ? NAN : st.loss_history.back());

    std::size_t bad = 0;
    for (const auto& r : st.log) bad += r.constraints_ok ? 0 : 1;
    cx.check("constraints after every step", bad == 0, static_cast<double>(bad), 0.0, "steps violating ==",
             std::to_string(st.log.size()) + " steps, " + init->describe());
    if (auto e = c.find("expect")) {
        const double target = e->num("theta");
        const double rel = e->num("rel_tol", 0.05);
        if (st.theta.size() != 1) fail(ErrorKind::ConfigError, e->path("theta") + ": needs a single-parameter driver");
        const double err = std::abs(st.theta[0] - target) / std::abs(target);
        cx.check("recovered theta", err <= rel, err, rel, "rel error <=",
                 "theta " + fmt(st.theta[0]) + " vs " + fmt(target) + " from " + fmt(init->params().at(0)));
    }
    if (c.flag("check_reproducible", false)) {
        const TrainState again = train(ds, init, sch, reg, setup, ss.basis, ss.opts);
        const bool same = again.theta == st.theta && again.loss_history == st.loss_history;
        cx.check("identical seeds reproduce bitwise", same, same ? 0.0 : 1.0, 0.0, "mismatches ==", "second run from the same seed");
    }
}

// ---------------------------------------------------------------------------
// meanfield-lln / meanfield-clt

inline void write_lln_csv(const LlnTable& t, const std::string& path) {
    std::ofstream os(path);
    if (!os) fail(ErrorKind::InvalidArgument, "cannot write " + path);
    os.precision(17);
    os << "N,err_x,err_y,err_z,total,total_se\n";
    for (const auto& r : t.rows) os << r.N << ',' << r.err_x << ',' << r.err_y << ',' << r.err_z << ',' << r.total << ',' << r.total_se << '\n';
}

inline void run_meanfield_lln(RunContext& cx) {
    const ConfigNode& c = cx.cfg;
    const MeanFieldModel model = mean_field_from(c.at("model"));
    const TimeGrid g = grid_from(c.find("grid"), 1.0, 50);
    const auto ns = c.sizes("n_list", {16, 64, 256, 1024});
    const std::size_t trials = c.positive("trials", 20), cloud = c.positive("mv_cloud", 1u << 16);
    const SolverSettings ss = lsmc_from(c.find("lsmc"));
    const LlnTable t = lln_experiment(model, ns, g, trials, cx.sub_seed("lln"), ss.basis, ss.opts, cloud);
    write_lln_csv(t, cx.artifact("lln", "lln.csv"));
    json tot = json::array();
    for (const auto& r : t.rows) tot.push_back(json_number(r.total));
    cx.value("totals", tot);
    double worst_ratio = 0;
    for (std::size_t j = 1; j < t.rows.size(); ++j) worst_ratio = std::max(worst_ratio, t.rows[j].total / t.rows[j - 1].total);
    cx.check("errors strictly decreasing in N", worst_ratio < 1.0, worst_ratio, 1.0, "largest ratio <");
    const ConfigNode sl = section(c, "slope");
    const double target = sl.num("target", -1.0), tol = sl.num("tol", 0.3);
    const double slope = t.slope ? *t.slope : NAN;
    cx.number("slope", slope);
    cx.check("log-log slope", t.slope && std::abs(slope - target) <= tol, t.slope ? std::abs(slope - target) : NAN, tol,
             "abs-diff <=", "slope " + fmt(slope) + ", target " + fmt(target));
    if (c.flag("control", true)) {
        const LlnTable z = lln_experiment(mf_models::independent(), ns, g, c.positive("control_trials", 2),
                                          cx.sub_seed("lln-control"), ss.basis, ss.opts, cloud);
        write_lln_csv(z, cx.artifact("lln_control", "lln_control.csv"));
        double worst = 0;
        for (const auto& r : z.rows) worst = std::max(worst, r.total);
        cx.check("no-interaction control error", worst == 0.0, worst, 0.0, "==", "independent model");
    }
}

inline void run_meanfield_clt(RunContext& cx) {
    const ConfigNode& c = cx.cfg;
    const ConfigNode mn = c.at("model");
    const MeanFieldModel model = mean_field_from(mn);
    const TimeGrid g = grid_from(c.find("grid"), 1.0, 50);
    const auto ns = c.sizes("n_list", {256, 1024});
    const std::size_t trials = c.positive("trials", 20), cloud = c.positive("mv_cloud", 1u << 16);
    const CltTable t = clt_experiment(model, ns, g, trials, cx.sub_seed("clt"), cloud);
    {
        std::ofstream os(cx.artifact("clt", "clt.csv"));
        os.precision(17);
        os << "N,var_u,var_v,mean_u,mean_v,samples\n";
        for (const auto& r : t.rows) os << r.N << ',' << r.var_u << ',' << r.var_v << ',' << r.mean_u << ',' << r.mean_v << ',' << r.samples << '\n';
    }
    const CltRow& last = t.rows.back();
    cx.number("empirical_var_u", last.var_u);

    const bool linear = model.name == "linear-gaussian-clt" || model.name == "linear-mean-field";
    if (!linear) fail(ErrorKind::ConfigError, mn.path("name") + ": the CLT run needs a linear model (analytic coefficients)");
    static const json empty = json::object();
    const ConfigNode p = mn.has("params") ? mn.at("params") : ConfigNode(empty, mn.path("params"));
    const bool gauss = model.name == "linear-gaussian-clt";
    const double a = p.num("a", 0.5), cc = p.num("c", gauss ? -0.5 : 0.5), sigma = p.num("sigma", gauss ? 0.4 : 0.3);
    const double s0 = p.num("s0", gauss ? 0.3 : 0.2), u0 = gauss ? p.num("u0", 1.0) : 0.0, kappa = p.num("kappa", 0.5);
    const double beta = gauss ? 0.0 : p.num("beta", 0.5);
    const double vstar = mf_models::linear_clt_variance(a, cc, sigma, s0, u0, g.horizon());
    cx.number("analytic_var_u", vstar);
    const double rel_emp = std::abs(last.var_u - vstar) / vstar;
    const double tol_emp = c.num("analytic_rel_tol", 0.10);
    cx.check("empirical variance vs analytic limit", rel_emp <= tol_emp, rel_emp, tol_emp, "rel error <=",
             "N = " + std::to_string(last.N) + ", var " + fmt(last.var_u) + " vs " + fmt(vstar));

    const ConfigNode fn = section(c, "fluctuation");
    FluctuationOptions fo;
    fo.n_paths = fn.positive("paths", 4000);
    fo.n_copy = fn.positive("copies", 1000);
    fo.seed = cx.sub_seed("fluctuation");
    const double scale = fn.num("scale", 2.0);
    const auto mv = solve_mckean_vlasov(model, fo.n_paths + fo.n_copy, g, cx.sub_seed("fluctuation-cloud"));
    const auto coef = mf_models::linear_coefficients(a, cc, kappa, beta);
    fo.u0 = [u0](double z) { return u0 * z; };
    const FluctuationSolution one = solve_fluctuation_system(coef, mv, fo);
    fo.u0 = [u0, scale](double z) { return scale * (u0 * z); };
    const FluctuationSolution two = solve_fluctuation_system(coef, mv, fo);
    cx.number("fluctuation_var_u", one.var_u_T);
    double u_dev = 0, vz_dev = 0;
    for (std::size_t i = 0; i < one.U.size(); ++i) u_dev = std::max(u_dev, std::abs(two.U[i] - scale * one.U[i]));
    auto rel = [](double x2, double x1, double s) { return std::abs(x2 - s * x1) / (1 + std::abs(s * x1)); };
    for (std::size_t i = 0; i < one.V.size(); ++i) vz_dev = std::max(vz_dev, rel(two.V[i], one.V[i], scale));
    for (std::size_t i = 0; i < one.Zc.size(); ++i) vz_dev = std::max(vz_dev, rel(two.Zc[i], one.Zc[i], scale));
    cx.check("fluctuation linearity: U", u_dev == 0.0, u_dev, 0.0, "max deviation ==", "U0 scaled by " + fmt(scale));
    const double lin_tol = fn.num("linearity_tol", 1e-9);
    cx.check("fluctuation linearity: V, Z", vz_dev <= lin_tol, vz_dev, lin_tol, "max rel deviation <=",
             "regression refit on the scaled fluctuations");
    const double rel_x = std::abs(one.var_u_T - last.var_u) / last.var_u;
    const double tol_x = c.num("cross_rel_tol", 0.15);
    cx.check("CLT routes agree", rel_x <= tol_x, rel_x, tol_x, "rel diff <=",
             "fluctuation system " + fmt(one.var_u_T) + " vs particles " + fmt(last.var_u));
}

// ---------------------------------------------------------------------------
// fbsde: linear coupled model b = ε·y, f ≡ 0, ξ = X_T

inline void run_fbsde(RunContext& cx) {
    const SolverSettings ss = lsmc_from(cx.cfg.find("lsmc"));
    for (const ConfigNode& k : cx.cfg.objects("cases")) {
        const std::string name = k.str("name");
        const double eps = k.num("epsilon"), x0 = k.num("x0", 1.0);
        FbsdeProblem pb;
        pb.model = models::brownian(1, x0);
        pb.model.drift = [eps](double, std::span<const double>, const Coupling& c, std::span<double> out) { out[0] = eps * c.y; };
        pb.grid = grid_from(k.find("grid"), 1.0, 20);
        pb.bundle = share(sample_brownian(pb.grid, k.positive("paths", 4000), 1, cx.sub_seed("fbsde-" + name)));
        pb.terminal = terminals::state(0);
        pb.driver = std::make_shared<ZeroDriver>();
        PicardOptions po;
        po.max_iters = k.positive("max_iters", 30);
        po.tol = k.num("tol", 1e-10);
        const std::string expect = k.str("expect", "contraction");
        const double T = pb.grid.horizon();
        auto write_residuals = [&](const std::vector<double>& r) {
            std::ofstream os(cx.artifact(name + "_residuals", "fbsde_" + name + "_residuals.csv"));
            os.precision(17);
            os << "iteration,residual\n";
            for (std::size_t i = 0; i < r.size(); ++i) os << i + 1 << ',' << r[i] << '\n';
        };
        if (expect == "no-contraction") {
            try {
                const auto r = solve_fbsde_picard(pb, ss.basis, ss.opts, po);
                write_residuals(r.residuals);
                cx.check(name + ": raises no-contraction", false, static_cast<double>(r.iterations), std::nullopt, "",
                         "converged in " + std::to_string(r.iterations) + " iterations");
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::NoContraction) throw;
                cx.check(name + ": raises no-contraction", true, NAN, std::nullopt, "", e.what());
            }
            continue;
        }
        const auto r = solve_fbsde_picard(pb, ss.basis, ss.opts, po);
        write_residuals(r.residuals);
        cx.number(name + ".y0", r.solution->y0());
        if (eps * T < 1) cx.number(name + ".y0_exact", x0 / (1 - eps * T));
        cx.value(name + ".iterations", r.iterations);
        if (expect == "one-iteration") {
            const auto direct = solve_bsde_lsmc(make_problem(pb.model, pb.grid, pb.bundle, pb.terminal, pb.driver), ss.basis, ss.opts);
            const double d = std::abs(r.solution->y0() - direct.y0());
            cx.check(name + ": one iteration", r.converged && r.iterations == 1, static_cast<double>(r.iterations), 1.0, "==");
            cx.check(name + ": equals decoupled solve", d == 0.0, d, 0.0, "abs-diff ==");
        } else if (expect == "contraction") {
            double worst = 0;
            for (std::size_t i = 1; i < r.residuals.size(); ++i)
                if (r.residuals[i - 1] > 0) worst = std::max(worst, r.residuals[i] / r.residuals[i - 1]);
            const double mr = k.num("max_ratio", 0.5);
            const bool enough = r.residuals.size() >= 2;
            cx.check(name + ": geometric residual decay", r.converged && enough && worst <= mr, worst, mr, "largest ratio <=",
                     std::to_string(r.iterations) + " iterations");
        } else {
            fail(ErrorKind::ConfigError, k.path("expect") + ": expected one-iteration, contraction or no-contraction");
        }
    }
}

// ---------------------------------------------------------------------------
// merton / calibrate

inline void run_merton(RunContext& cx) {
    const ConfigNode& c = cx.cfg;
    const MarketParams p = market_from(c.find("market"));
    const HjbGridSpec spec = hjb_spec_from(c.find("grid"));
    const std::size_t stride = c.positive("csv_time_stride", 10);
    const auto cm = classical_merton(p);
    cx.number("pi_classical", cm.pi);
    if (c.has("expect_pi_classical")) {
        const double want = c.num("expect_pi_classical"), d = std::abs(cm.pi - want);
        cx.check("classical allocation", d <= 1e-12, d, 1e-12, "abs-diff <=", "pi " + fmt(cm.pi) + " vs " + fmt(want));
    }
    std::vector<double> thetas = c.nums("thetas", {0.0, 0.25, 0.5, 1.0});
    if (thetas.empty()) fail(ErrorKind::ConfigError, c.path("thetas") + ": needs at least one value");
    if (thetas.front() == 0.0) {
        const HjbGrid g = solve_hjb(p, 0.0, spec);
        write_hjb_csv(g, cx.artifact("hjb_classical", "hjb_theta_0.csv"), stride);
        double ev = 0, ep = 0;
        for (std::size_t n = 0; n <= g.n_time; ++n)
            for (std::size_t j = 1; j < g.J; ++j) {
                ev = std::max(ev, std::abs(g.value(n, j) / cm.value(g.t(n), g.x(j)) - 1));
                ep = std::max(ep, std::abs(g.policy(n, j) / cm.pi - 1));
            }
        const double tv = c.num("value_rel_tol", 0.005), tp = c.num("policy_rel_tol", 0.02);
        cx.check("theta=0 value vs closed form", ev <= tv, ev, tv, "max rel error <=", "interior nodes");
        cx.check("theta=0 policy vs closed form", ep <= tp, ep, tp, "max rel error <=", "interior nodes");
    }
    if (thetas.size() > 1 || thetas.front() > 0) {
        const AmbiguityReport rep = verify_ambiguity_properties(p, thetas, spec);
        std::ofstream os(cx.artifact("ambiguity", "ambiguity.csv"));
        os.precision(17);
        os << "theta,max_pi,min_pi,more_cautious,below_previous,wealth_profile\n";
        HjbGridSpec shared = spec;
        shared.n_time_steps = rep.n_time_steps;
        for (const auto& tp : rep.thetas) {
            os << tp.theta << ',' << tp.max_pi << ',' << tp.min_pi << ',' << tp.more_cautious << ',' << tp.below_previous << ','
               << tp.wealth_profile << '\n';
            cx.value("wealth_profile theta=" + fmt(tp.theta), tp.wealth_profile);
            if (tp.theta == 0.0) continue;
            write_hjb_csv(solve_hjb(p, tp.theta, shared), cx.artifact("hjb_theta_" + fmt(tp.theta), "hjb_theta_" + fmt(tp.theta) + ".csv"),
                          stride);
            cx.check("theta=" + fmt(tp.theta) + " more cautious than classical", tp.more_cautious, tp.max_pi, rep.pi_classical,
                     "max pi <", "every interior node");
            if (&tp != &rep.thetas.front())
                cx.check("theta=" + fmt(tp.theta) + " below previous theta", tp.below_previous, tp.max_pi, std::nullopt, "",
                         "strict pointwise decrease at interior nodes");
        }
    }
}

inline std::vector<std::pair<double, double>> default_observation_states() {
    std::vector<std::pair<double, double>> st;
    for (double t : {0.0, 0.25, 0.5, 0.75})
        for (double x : {0.5, 0.8, 1.0, 1.3, 2.0}) st.emplace_back(t, x);
    return st;
}

inline void run_calibrate(RunContext& cx) {
    const ConfigNode& c = cx.cfg;
    const MarketParams p = market_from(c.find("market"));
    const HjbGridSpec spec = hjb_spec_from(c.find("grid"));
    const ConfigNode sn = section(c, "search");
    const ThetaSearch search{sn.num("lo", 0.0), sn.num("hi", 1.0), sn.num("tol", 1e-4)};
    const double rel = c.num("rel_tol", 0.03);
    auto record = [&](const std::string& tag, const CalibrationResult& r) {
        std::ofstream os(cx.artifact("curve" + tag, "calibration_curve" + tag + ".csv"));
        os.precision(17);
        os << "theta,loss\n";
        for (auto [th, l] : r.curve) os << th << ',' << l << '\n';
        cx.number("theta" + tag, r.theta);
        cx.number("loss" + tag, r.loss);
        cx.value("clamped_queries" + tag, r.clamped_queries);
        if (!r.warning.empty()) cx.value("warning" + tag, r.warning);
    };
    const ConfigNode on = c.at("observations");
    if (on.has("file")) {
        std::vector<AllocationObservation> obs;
        try {
            obs = read_observations_csv(on.str("file"));
        } catch (const Error& e) {
            fail(ErrorKind::ConfigError, on.path("file") + ": " + e.what());
        }
        const auto r = calibrate_theta(p, obs, spec, search);
        record("", r);
        if (c.has("expect_theta")) {
            const double want = c.num("expect_theta"), err = std::abs(r.theta - want) / std::abs(want);
            cx.check("recovered theta", err <= rel, err, rel, "rel error <=", "theta " + fmt(r.theta) + " vs " + fmt(want));
        }
        return;
    }
    const ConfigNode syn = on.at("synthetic");
    const std::vector<double> truths = syn.raw()["theta_true"].is_array() ? syn.nums("theta_true") : std::vector<double>{syn.num("theta_true")};
    std::vector<std::pair<double, double>> states = default_observation_states();
    if (syn.has("states")) {
        states.clear();
        const json& s = syn.raw()["states"];
        if (!s.is_array()) fail(ErrorKind::ConfigError, syn.path("states") + ": expected [[t, x], ...]");
        for (const auto& e : s) {
            if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
                fail(ErrorKind::ConfigError, syn.path("states") + ": expected [[t, x], ...]");
            states.emplace_back(e[0].get<double>(), e[1].get<double>());
        }
    }
    for (double th : truths) {
        const std::string tag = " theta_true=" + fmt(th);
        const auto obs = synthetic_observations(p, th, states, spec);
        write_observations_csv(obs, cx.artifact("observations" + tag, "observations_" + fmt(th) + ".csv"));
        const auto r = calibrate_theta(p, obs, spec, search);
        record(tag, r);
        const double err = th == 0 ? std::abs(r.theta) : std::abs(r.theta - th) / th;
        cx.check("recovered" + tag, err <= rel, err, rel, th == 0 ? "abs error <=" : "rel error <=",
                 "theta " + fmt(r.theta) + (r.used_grid_scan ? ", grid scan" : ""));
    }
}

// ---------------------------------------------------------------------------

struct RunOptions {
    std::optional<std::string> output_dir;  // overrides config.output_dir
};

/// Validates, dispatches to the owning module, writes CSV artifacts and
/// report.json into the output directory, and returns the report.
inline RunReport run_experiment(json config, const RunOptions& ro = {}) {
    if (!config.is_object()) fail(ErrorKind::ConfigError, "config: expected a JSON object");
    if (ro.output_dir) config["output_dir"] = *ro.output_dir;
    const ConfigNode root(config, "config");
    const std::string kind = root.str("kind");
    const auto& kinds = experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
        fail(ErrorKind::ConfigError, "config.kind: unknown experiment kind '" + kind + "'");
    const std::uint64_t seed = root.uint("seed");
    const std::string out = root.str("output_dir", "nexp-out/" + kind);

    RunReport rep;
    rep.kind = kind;
    rep.config = config;
    rep.config_hash = config_hash(config);
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) fail(ErrorKind::ConfigError, "config.output_dir: cannot create " + out + ": " + ec.message());

    RunContext cx{root, seed, out, rep};
    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (kind == "solve") run_solve(cx);
        else if (kind == "oracle-suite") run_oracle_suite(cx);
        else if (kind == "verify-axioms") run_verify_axioms(cx);
        else if (kind == "train") run_train(cx);
        else if (kind == "meanfield-lln") run_meanfield_lln(cx);
        else if (kind == "meanfield-clt") run_meanfield_clt(cx);
        else if (kind == "fbsde") run_fbsde(cx);
        else if (kind == "merton") run_merton(cx);
        else run_calibrate(cx);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::ConfigError) throw;
        rethrow_with_context(e, kind);
    }
    rep.timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string rp = (std::filesystem::path(out) / "report.json").string();
    rep.artifacts["report"] = rp;
    std::ofstream os(rp);
    if (!os) fail(ErrorKind::ConfigError, "config.output_dir: cannot write " + rp);
    os << emit_json(rep).dump(2) << "\n";
    return rep;
}

}  // namespace nexp
