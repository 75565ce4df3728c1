#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "driver.hpp"
#include "error.hpp"
#include "lsmc.hpp"
#include "regression.hpp"
#include "stochastic.hpp"

namespace nexp {

/// One simulated path seen from a given step (normally the terminal step).
struct PathView {
    const PathEnsemble* paths = nullptr;
    std::size_t p = 0;
    std::size_t at = 0;

    std::span<const double> x() const { return {paths->state(p, at), paths->state_dim()}; }
    std::span<const double> state(std::size_t k) const { return {paths->state(p, k), paths->state_dim()}; }
    double w(std::size_t j = 0) const { return paths->bundle().brownian_between(p, 0, at, j); }
    double w_at(std::size_t k, std::size_t j = 0) const { return paths->bundle().brownian_between(p, 0, k, j); }
};

/// Terminal functional ξ. A state function g(X) keeps the problem Markovian,
/// which lets a solution report its terminal surface; a path function may look
/// at the whole trajectory and the driving noise.
class Terminal {
public:
    using PathFn = std::function<double(const PathView&)>;
    using StateFn = std::function<double(std::span<const double>)>;

    Terminal() = default;

    static Terminal of_state(StateFn g, std::string name = "g(X_T)") {
        Terminal t;
        t.state_ = std::move(g);
        t.name_ = std::move(name);
        return t;
    }
    static Terminal of_path(PathFn g, std::string name = "g(path)") {
        Terminal t;
        t.path_ = std::move(g);
        t.name_ = std::move(name);
        return t;
    }

    explicit operator bool() const noexcept { return static_cast<bool>(state_) || static_cast<bool>(path_); }
    bool markovian() const noexcept { return static_cast<bool>(state_); }
    const StateFn& state_fn() const noexcept { return state_; }
    const std::string& name() const noexcept { return name_; }

    double operator()(const PathView& v) const { return state_ ? state_(v.x()) : path_(v); }

    /// ξ evaluated on every path at step `at`.
    std::vector<double> evaluate(const PathEnsemble& paths, std::size_t at) const {
        if (!*this) fail(ErrorKind::InvalidArgument, "terminal functional is empty");
        std::vector<double> out(paths.n_paths());
        for (std::size_t p = 0; p < out.size(); ++p) {
            const double v = (*this)(PathView{&paths, p, at});
            if (!std::isfinite(v))
                fail(ErrorKind::InvalidArgument, "terminal functional is not finite on path " + std::to_string(p));
            out[p] = v;
        }
        return out;
    }

private:
    PathFn path_;
    StateFn state_;
    std::string name_;
};

namespace terminals {

/// a·W^j_T + c, read from the noise so it works for any forward model.
inline Terminal brownian(std::size_t j = 0, double a = 1.0, double c = 0.0) {
    return Terminal::of_path([=](const PathView& v) { return a * v.w(j) + c; }, "W_T");
}
inline Terminal abs_brownian(std::size_t j = 0) {
    return Terminal::of_path([=](const PathView& v) { return std::abs(v.w(j)); }, "|W_T|");
}
inline Terminal state(std::size_t i = 0, double a = 1.0, double c = 0.0) {
    return Terminal::of_state([=](std::span<const double> x) { return a * x[i] + c; }, "X_T");
}
inline Terminal constant(double c) {
    return Terminal::of_state([=](std::span<const double>) { return c; }, "constant");
}

/// φ(ξ); keeps the state form when ξ has one.
inline Terminal map(Terminal xi, std::function<double(double)> phi, std::string name = "phi(xi)") {
    if (xi.markovian()) {
        auto g = xi.state_fn();
        return Terminal::of_state([g, phi](std::span<const double> x) { return phi(g(x)); }, std::move(name));
    }
    return Terminal::of_path([xi, phi](const PathView& v) { return phi(xi(v)); }, std::move(name));
}

/// a·ξ₁ + b·ξ₂.
inline Terminal combine(double a, Terminal x1, double b, Terminal x2) {
    return Terminal::of_path([=](const PathView& v) { return a * x1(v) + b * x2(v); }, "combination");
}

/// clamp(ξ, −k, k).
inline Terminal clamped(Terminal xi, double k) {
    return map(std::move(xi), [k](double v) { return std::clamp(v, -k, k); }, "clamped");
}

}  // namespace terminals

struct BsdeProblem {
    std::shared_ptr<const PathEnsemble> paths;
    Terminal terminal;
    DriverPtr driver;

    const TimeGrid& grid() const { return paths->grid(); }
};

inline void validate(const BsdeProblem& pb) {
    if (!pb.paths) fail(ErrorKind::InvalidArgument, "problem has no simulated paths");
    if (!pb.terminal) fail(ErrorKind::InvalidArgument, "problem has no terminal functional");
    if (!pb.driver) fail(ErrorKind::InvalidArgument, "problem has no driver");
    if (pb.driver->state_dim() != 0 && pb.driver->state_dim() != pb.paths->state_dim())
        fail(ErrorKind::InvalidArgument, "driver state dimension " + std::to_string(pb.driver->state_dim()) +
                                             " does not match the forward model (" +
                                             std::to_string(pb.paths->state_dim()) + ")");
    if (pb.driver->noise_dim() != 0 && pb.driver->noise_dim() != pb.paths->noise_dim())
        fail(ErrorKind::InvalidArgument, "driver noise dimension " + std::to_string(pb.driver->noise_dim()) +
                                             " does not match the Brownian dimension (" +
                                             std::to_string(pb.paths->noise_dim()) + ")");
}

inline BsdeProblem make_problem(const ForwardModel& model, const TimeGrid& grid, std::shared_ptr<const BrownianBundle> bundle,
                                Terminal terminal, DriverPtr driver) {
    BsdeProblem pb{std::make_shared<const PathEnsemble>(simulate_forward(model, grid, std::move(bundle))),
                   std::move(terminal), std::move(driver)};
    validate(pb);
    return pb;
}

inline BsdeProblem with_driver(BsdeProblem pb, DriverPtr driver) {
    pb.driver = std::move(driver);
    return pb;
}
inline BsdeProblem with_terminal(BsdeProblem pb, Terminal xi) {
    pb.terminal = std::move(xi);
    return pb;
}

class BsdeSolution {
public:
    BsdeSolution(LsmcFields f, std::shared_ptr<const PathEnsemble> paths, DriverPtr driver, RegressionBasis basis,
                 LsmcOptions opts, Terminal terminal)
        : f_(std::move(f)), paths_(std::move(paths)), driver_(std::move(driver)), basis_(basis), opts_(opts),
          terminal_(std::move(terminal)) {
        std::span<const double> col = f_.path_value;
        double s = 0;
        for (std::size_t p = 0; p < f_.n_paths; ++p) s += f_.y(p, f_.k_begin);
        y0_ = s / static_cast<double>(f_.n_paths);
        se_ = standard_error(col);
    }

    /// Cross-path value at the first solved step.
    double y0() const noexcept { return y0_; }
    /// Monte Carlo standard error of y0, from the per-path values whose mean is y0.
    double y0_standard_error() const noexcept { return se_; }
    double max_abs_y() const noexcept { return f_.max_abs_y; }

    std::size_t n_paths() const noexcept { return f_.n_paths; }
    std::size_t n_steps() const noexcept { return f_.n_steps; }
    std::size_t noise_dim() const noexcept { return f_.noise_dim; }
    std::size_t first_step() const noexcept { return f_.k_begin; }
    std::size_t last_step() const noexcept { return f_.k_end; }

    double Y(std::size_t p, std::size_t k) const noexcept { return f_.y(p, k); }
    std::span<const double> Z(std::size_t p, std::size_t k) const noexcept { return {f_.z(p, k), f_.noise_dim}; }
    double continuation(std::size_t p, std::size_t k) const noexcept { return f_.continuation(p, k); }
    bool clipped(std::size_t p, std::size_t k, std::size_t j) const noexcept { return f_.is_clipped(p, k, j); }
    /// 0 unclipped, 1 held at the lower fence, 2 at the upper fence.
    int clip_side(std::size_t p, std::size_t k, std::size_t j) const noexcept {
        return f_.clipped[(p * f_.n_steps + k) * f_.noise_dim + j];
    }
    std::vector<double> Y_at(std::size_t k) const {
        std::vector<double> out(f_.n_paths);
        for (std::size_t p = 0; p < out.size(); ++p) out[p] = f_.y(p, k);
        return out;
    }

    const LsmcFields& fields() const noexcept { return f_; }
    const PathEnsemble& paths() const noexcept { return *paths_; }
    std::shared_ptr<const PathEnsemble> paths_ptr() const noexcept { return paths_; }
    const TimeGrid& grid() const noexcept { return paths_->grid(); }
    const DriverPtr& driver() const noexcept { return driver_; }
    const RegressionBasis& basis() const noexcept { return basis_; }
    const LsmcOptions& options() const noexcept { return opts_; }
    const std::vector<StepDiagnostics>& diagnostics() const noexcept { return f_.steps; }
    std::vector<double> condition_numbers() const {
        std::vector<double> c;
        for (std::size_t k = f_.k_begin; k < f_.k_end; ++k) c.push_back(f_.steps[k].condition);
        return c;
    }
    std::size_t total_clip_count() const {
        std::size_t n = 0;
        for (const auto& s : f_.steps) n += s.clip_count;
        return n;
    }

    /// Regressed value surface y_k(x). At the terminal step this is ξ itself
    /// when ξ is a state function.
    double y_surface(std::size_t k, std::span<const double> x) const {
        if (k == f_.k_end) {
            if (!terminal_.markovian())
                fail(ErrorKind::InvalidArgument, "terminal functional depends on the path and has no state surface");
            return terminal_.state_fn()(x);
        }
        if (k < f_.k_begin || k > f_.k_end) fail(ErrorKind::InvalidArgument, "step outside the solved range");
        return f_.fits[k].y.eval1(x.data());
    }
    /// Regressed Z_k(x) with the step's clip fences applied.
    void z_surface(std::size_t k, std::span<const double> x, std::span<double> out) const {
        if (k < f_.k_begin || k >= f_.k_end) fail(ErrorKind::InvalidArgument, "step outside the solved range");
        const StepFit& fit = f_.fits[k];
        fit.z.eval(x.data(), out.data());
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::clamp(out[j], fit.z_lo[j], fit.z_hi[j]);
    }

    /// Per-step diagnostics as CSV.
    void write_csv(const std::string& path) const {
        std::ofstream os(path);
        if (!os) fail(ErrorKind::InvalidArgument, "cannot write " + path);
        os.precision(17);
        os << "step,t,mean_y,sd_y,mean_norm_z,clip_count,condition\n";
        for (std::size_t k = f_.k_begin; k <= f_.k_end; ++k) {
            const auto& s = f_.steps[k];
            os << k << ',' << s.t << ',' << s.mean_y << ',' << s.sd_y << ',' << s.mean_norm_z << ',' << s.clip_count
               << ',' << s.condition << '\n';
        }
    }

private:
    LsmcFields f_;
    std::shared_ptr<const PathEnsemble> paths_;
    DriverPtr driver_;
    RegressionBasis basis_;
    LsmcOptions opts_;
    Terminal terminal_;
    double y0_ = 0, se_ = 0;
};

/// Backward solve on steps [k_begin, k_end] with the given terminal values at k_end.
inline BsdeSolution solve_bsde_range(const BsdeProblem& pb, std::span<const double> terminal_values, std::size_t k_begin,
                                     std::size_t k_end, const RegressionBasis& basis = {}, const LsmcOptions& opts = {},
                                     Terminal terminal = {}) {
    validate(pb);
    const PathEnsemble& paths = *pb.paths;
    const std::size_t n = paths.state_dim(), d = paths.noise_dim();
    const TimeGrid grid = paths.grid();
    const Driver& f = *pb.driver;
    BackwardInputs in;
    in.grid = grid;
    in.feature_dim = n;
    in.features = paths.raw().data();
    in.bundle = &paths.bundle();
    in.terminal = terminal_values;
    in.k_begin = k_begin;
    in.k_end = k_end;
    in.driver = [&](std::size_t k, std::size_t p, double y, const double* z) {
        return f.value(grid.node(k), std::span<const double>(paths.state(p, k), n), y, std::span<const double>(z, d));
    };
    LsmcFields fields = backward_lsmc(in, basis, opts);
    return BsdeSolution(std::move(fields), pb.paths, pb.driver, basis, opts, std::move(terminal));
}

inline BsdeSolution solve_bsde_lsmc(const BsdeProblem& pb, const RegressionBasis& basis = {}, const LsmcOptions& opts = {}) {
    validate(pb);
    const std::size_t K = pb.paths->n_steps();
    const std::vector<double> xi = pb.terminal.evaluate(*pb.paths, K);
    return solve_bsde_range(pb, xi, 0, K, basis, opts, pb.terminal);
}

/// Solve with ξ and the driver's y-argument both clamped to [−k, k].
inline BsdeSolution solve_truncated(const BsdeProblem& pb, double k_level, const RegressionBasis& basis = {},
                                    const LsmcOptions& opts = {}) {
    if (!(k_level > 0)) fail(ErrorKind::InvalidArgument, "truncation level must be positive");
    validate(pb);
    BsdeProblem t = pb;
    t.terminal = terminals::clamped(pb.terminal, k_level);
    t.driver = std::make_shared<ClampedDriver>(pb.driver, k_level);
    return solve_bsde_lsmc(t, basis, opts);
}

}  // namespace nexp
