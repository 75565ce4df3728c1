#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bsde.hpp"
#include "net_checks.hpp"
#include "nets.hpp"

namespace nexp {

struct SensitivityOptions {
    bool with_norm_penalty = false;  // also accumulate E Σ f(t,X,Ỹ,0)²Δt and its gradient
};

/// ∇_θ of the discrete solution along the primary solve's paths.
struct SensitivitySolution {
    std::size_t n_params = 0;
    std::vector<double> grad_y0;                   // ∇_θ Y₀
    std::vector<std::vector<double>> mean_grad_y;  // cross-path mean of ∇_θ Y at each step
    double norm_penalty = 0;
    std::vector<double> norm_penalty_grad;
};

/// Differentiates the backward scheme with respect to the driver parameters:
///   ∂C_k = R_k(∂Y_{k+1} − ∂z̃·ΔW),  ∂Z_k = R_k(∂z̃ + (∂Y_{k+1} − ∂C_k − ∂z̃·ΔW)ΔW/Δt),
///   ∂Y_k = ∂C_k + (∇_θ f + ∂_y f·∂Ỹ_k + D_z f·∂Z_k)Δt
/// with ∂Ỹ carried through the inner fixed-point passes and ∂z̃ = 0 unless the
/// primary solve used the Z control variate. Regressions are the primary
/// solve's, applied to all parameter coordinates at once. A Z entry
/// held at an IQR fence moves with the two quartile paths that define it; one
/// held at an absolute bound has zero derivative.
inline SensitivitySolution solve_sensitivity_bsde(const BsdeSolution& primary, const SensitivityOptions& so = {}) {
    const PathEnsemble& paths = primary.paths();
    const Driver& f = *primary.driver();
    const std::size_t P = f.param_count();
    if (P == 0) fail(ErrorKind::InvalidArgument, "driver has no parameters to differentiate");
    const LsmcFields& F = primary.fields();
    const std::size_t N = F.n_paths, K = F.n_steps, d = F.noise_dim, n = paths.state_dim();
    const std::size_t k0 = F.k_begin, k1 = F.k_end;
    const TimeGrid& g = primary.grid();
    const double dt = g.dt();
    const std::size_t iters = primary.options().inner_picard_iters;
    const auto Ni = static_cast<Eigen::Index>(N), Pi = static_cast<Eigen::Index>(P);

    SensitivitySolution out;
    out.n_params = P;
    out.mean_grad_y.assign(K + 1, std::vector<double>(P, 0.0));
    out.norm_penalty_grad.assign(P, 0.0);

    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(Ni, Pi);  // ∂Y at step k+1, terminal slice is zero
    Eigen::MatrixXd zt(Ni, Pi * static_cast<Eigen::Index>(d));
    std::vector<double> pen(N, 0.0);
    Eigen::MatrixXd pen_grad = Eigen::MatrixXd::Zero(Ni, Pi);

    const bool cv = primary.options().z_control_variate;
    const auto Pd = Pi * static_cast<Eigen::Index>(d);
    Eigen::MatrixXd dzc_next, dzt(Ni, Pd);  // ∂ of the step k+1 Z coefficients, and ∂z̃ per path
    Eigen::MatrixXd gt(Ni, Pi);
    std::vector<double> phi;

    for (std::size_t k = k1; k-- > k0;) {
        Regressor R(paths.raw().data() + k * n, N, n, (K + 1) * n, primary.basis());
        const bool use_cv = cv && k + 1 < k1;
        if (use_cv) {
            // ∂z̃ = Φ_{k+1}(X_k)·∂coef_{k+1}
            const PolynomialFrame& fr = *F.fits[k + 1].z.frame;
            phi.resize(fr.size());
            for (std::size_t p = 0; p < N; ++p) {
                fr.features(paths.state(p, k), phi.data());
                const Eigen::Map<const Eigen::RowVectorXd> row(phi.data(), static_cast<Eigen::Index>(phi.size()));
                dzt.row(static_cast<Eigen::Index>(p)) = row * dzc_next;
            }
        }
        gt = G;
        if (use_cv)
            for (std::size_t p = 0; p < N; ++p) {
                const double* dw = paths.bundle().increment(p, k);
                for (std::size_t j = 0; j < d; ++j)
                    for (std::size_t q = 0; q < P; ++q)
                        gt(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) -=
                            dzt(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j * P + q)) * dw[j];
            }
        const Eigen::MatrixXd dC = R.predict(R.fit(gt));
        for (std::size_t p = 0; p < N; ++p) {
            const double* dw = paths.bundle().increment(p, k);
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t q = 0; q < P; ++q) {
                    const auto pi = static_cast<Eigen::Index>(p), col = static_cast<Eigen::Index>(j * P + q);
                    const double r = gt(pi, static_cast<Eigen::Index>(q)) - dC(pi, static_cast<Eigen::Index>(q));
                    zt(pi, col) = (use_cv ? dzt(pi, col) : 0.0) + r * dw[j] / dt;
                }
        }
        dzc_next = R.fit(zt);
        const Eigen::MatrixXd dZ = R.predict(dzc_next);
        const double t = g.node(k);
        const StepFit& fit = F.fits[k];
        const bool iqr = primary.options().z_clip.mode == ZClipMode::IqrFence;
        const double cf = primary.options().z_clip.value;
        // derivative of Z_k[p][j] along coordinate q, honouring the clip
        auto dz_at = [&](std::size_t p, std::size_t j, std::size_t q) {
            const auto col = static_cast<Eigen::Index>(j * P + q);
            const int side = primary.clip_side(p, k, j);
            if (side == 0) return dZ(static_cast<Eigen::Index>(p), col);
            if (!iqr) return 0.0;
            const double d1 = dZ(static_cast<Eigen::Index>(fit.q1_path[j]), col);
            const double d3 = dZ(static_cast<Eigen::Index>(fit.q3_path[j]), col);
            return side == 1 ? (1.0 + cf) * d1 - cf * d3 : (1.0 + cf) * d3 - cf * d1;
        };

        parallel_for(N, [&](std::size_t b, std::size_t e) {
            DriverGradients gr;
            std::vector<double> dy(P), src(P), zero_z(d, 0.0);
            for (std::size_t p = b; p < e; ++p) {
                const auto pi = static_cast<Eigen::Index>(p);
                const std::span<const double> x{paths.state(p, k), n};
                const std::span<const double> z = primary.Z(p, k);
                const double c = F.continuation(p, k);
                // source term without the ∂_y f·∂y part: ∇_θ f + D_z f·∂Z
                auto source = [&](const DriverGradients& gg) {
                    for (std::size_t q = 0; q < P; ++q) {
                        double s = gg.dtheta[q];
                        for (std::size_t j = 0; j < d; ++j) s += gg.dz[j] * dz_at(p, j, q);
                        src[q] = s;
                    }
                };
                double y = c;
                for (std::size_t q = 0; q < P; ++q) dy[q] = dC(pi, static_cast<Eigen::Index>(q));
                f.gradients(t, x, y, z, gr);
                for (std::size_t it = 0; it < iters; ++it) {
                    source(gr);
                    for (std::size_t q = 0; q < P; ++q)
                        dy[q] = dC(pi, static_cast<Eigen::Index>(q)) + (src[q] + gr.dy * dy[q]) * dt;
                    y = c + gr.value * dt;
                    f.gradients(t, x, y, z, gr);
                }
                source(gr);
                for (std::size_t q = 0; q < P; ++q)
                    G(pi, static_cast<Eigen::Index>(q)) = dC(pi, static_cast<Eigen::Index>(q)) + (src[q] + gr.dy * dy[q]) * dt;
                if (so.with_norm_penalty) {
                    // y is the final fixed-point iterate Ỹ and dy its derivative
                    f.gradients(t, x, y, zero_z, gr);
                    pen[p] += gr.value * gr.value * dt;
                    for (std::size_t q = 0; q < P; ++q)
                        pen_grad(pi, static_cast<Eigen::Index>(q)) += 2.0 * gr.value * (gr.dtheta[q] + gr.dy * dy[q]) * dt;
                }
            }
        }, 256);

        for (std::size_t q = 0; q < P; ++q) out.mean_grad_y[k][q] = G.col(static_cast<Eigen::Index>(q)).mean();
    }
    out.grad_y0 = out.mean_grad_y[k0];
    if (so.with_norm_penalty) {
        double s = 0;
        for (double v : pen) s += v;
        out.norm_penalty = s / static_cast<double>(N);
        for (std::size_t q = 0; q < P; ++q) out.norm_penalty_grad[q] = pen_grad.col(static_cast<Eigen::Index>(q)).mean();
    }
    return out;
}

struct FdCheckReport {
    std::vector<std::size_t> coords;
    std::vector<double> fd, analytic;
    double max_rel_error = 0;
};

/// Central finite differences of Y₀ over re-solves at θ ± h·e_j on the same
/// paths, against the sensitivity solve. Per-coordinate relative errors use
/// max(|fd|, |analytic|, 10⁻³·max_j |analytic_j|) as the scale.
inline FdCheckReport fd_gradient_check(const BsdeProblem& pb, const std::vector<std::size_t>& coords, double h,
                                       const RegressionBasis& basis = {}, const LsmcOptions& opts = {}) {
    if (!(h > 0)) fail(ErrorKind::InvalidArgument, "finite-difference step must be positive");
    validate(pb);
    const std::vector<double> theta = pb.driver->params();
    const auto base = solve_bsde_lsmc(pb, basis, opts);
    const auto sens = solve_sensitivity_bsde(base);
    FdCheckReport r;
    r.coords = coords;
    double amax = 0;
    for (std::size_t j : coords) {
        if (j >= theta.size()) fail(ErrorKind::InvalidArgument, "coordinate " + std::to_string(j) + " out of range");
        std::vector<double> tp = theta, tm = theta;
        tp[j] += h;
        tm[j] -= h;
        const double yp = solve_bsde_lsmc(with_driver(pb, pb.driver->with_params(tp)), basis, opts).y0();
        const double ym = solve_bsde_lsmc(with_driver(pb, pb.driver->with_params(tm)), basis, opts).y0();
        r.fd.push_back((yp - ym) / (2 * h));
        r.analytic.push_back(sens.grad_y0[j]);
        amax = std::max(amax, std::abs(sens.grad_y0[j]));
    }
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double scale = std::max({std::abs(r.fd[i]), std::abs(r.analytic[i]), 1e-3 * amax});
        if (scale > 0) r.max_rel_error = std::max(r.max_rel_error, std::abs(r.fd[i] - r.analytic[i]) / scale);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Training

struct DataRecord {
    std::string id;
    std::string kind;            // terminal kind, see make_terminal
    std::vector<double> params;  // terminal parameters
    double observed = 0;
    double t = 0;                // evaluation time; only 0 is supported
};

using Dataset = std::vector<DataRecord>;

/// Terminal kinds: "brownian" (a, c) → a·W_T + c; "abs-brownian" (a) → a·|W_T|;
/// "state" (a, c) → a·X_T + c; "constant" (c); "square-brownian" (a) → a·W_T².
inline Terminal make_terminal(const std::string& kind, const std::vector<double>& p) {
    auto at = [&](std::size_t i, double dflt) { return i < p.size() ? p[i] : dflt; };
    if (kind == "brownian") return terminals::brownian(0, at(0, 1.0), at(1, 0.0));
    if (kind == "abs-brownian") {
        const double a = at(0, 1.0);
        return Terminal::of_path([a](const PathView& v) { return a * std::abs(v.w()); }, "a|W_T|");
    }
    if (kind == "state") return terminals::state(0, at(0, 1.0), at(1, 0.0));
    if (kind == "constant") return terminals::constant(at(0, 0.0));
    if (kind == "square-brownian") {
        const double a = at(0, 1.0);
        return Terminal::of_path([a](const PathView& v) { return a * v.w() * v.w(); }, "aW_T^2");
    }
    fail(ErrorKind::InvalidArgument, "unknown terminal kind '" + kind + "'");
}

inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorKind::InvalidArgument, "cannot read dataset " + path);
    std::string line;
    std::getline(is, line);  // header
    Dataset out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() < 3) fail(ErrorKind::InvalidArgument, "dataset row needs id, kind and observed value: " + line);
        DataRecord r;
        r.id = cells[0];
        r.kind = cells[1];
        for (std::size_t i = 2; i + 1 < cells.size(); ++i)
            if (!cells[i].empty()) r.params.push_back(std::stod(cells[i]));
        r.observed = std::stod(cells.back());
        if (!std::isfinite(r.observed)) fail(ErrorKind::InvalidArgument, "non-finite observation in record " + r.id);
        out.push_back(std::move(r));
    }
    return out;
}

inline void write_dataset_csv(const Dataset& ds, const std::string& path) {
    std::size_t np = 0;
    for (const auto& r : ds) np = std::max(np, r.params.size());
    std::ofstream os(path);
    if (!os) fail(ErrorKind::InvalidArgument, "cannot write " + path);
    os.precision(17);
    os << "record_id,terminal_kind";
    for (std::size_t i = 0; i < np; ++i) os << ",param" << i + 1;
    os << ",observed_value\n";
    for (const auto& r : ds) {
        os << r.id << ',' << r.kind;
        for (std::size_t i = 0; i < np; ++i) {
            os << ',';
            if (i < r.params.size()) os << r.params[i];
        }
        os << ',' << r.observed << '\n';
    }
}

struct Regularization {
    double l2 = 0.0;    // λ_reg on ‖θ‖²
    double norm = 0.0;  // λ_norm on E Σ f(t,X,Ỹ,0)²Δt
};

struct LossTerms {
    double loss = 0, fit = 0, l2 = 0, norm = 0;
    std::vector<double> grad;
    std::vector<double> y0;  // per record
};

/// Squared-error fit of Y₀(ξ_i; θ) to the observations plus regularizers, with
/// the gradient from sensitivity solves. All records share the paths.
inline LossTerms loss_and_gradient(const Dataset& ds, const DriverPtr& driver, std::shared_ptr<const PathEnsemble> paths,
                                   const Regularization& reg, const RegressionBasis& basis = {}, const LsmcOptions& opts = {}) {
    if (ds.empty()) fail(ErrorKind::InvalidArgument, "dataset is empty");
    const std::size_t P = driver->param_count(), M = ds.size();
    const std::vector<double> theta = driver->params();
    LossTerms L;
    L.grad.assign(P, 0.0);
    SensitivityOptions so;
    so.with_norm_penalty = reg.norm > 0;
    for (std::size_t i = 0; i < M; ++i) {
        const DataRecord& rec = ds[i];
        try {
            if (rec.t != 0.0) fail(ErrorKind::InvalidArgument, "only evaluation time 0 is supported");
            BsdeProblem pb{paths, make_terminal(rec.kind, rec.params), driver};
            const auto sol = solve_bsde_lsmc(pb, basis, opts);
            const auto sens = solve_sensitivity_bsde(sol, so);
            const double r = sol.y0() - rec.observed;
            L.y0.push_back(sol.y0());
            L.fit += r * r / static_cast<double>(M);
            for (std::size_t q = 0; q < P; ++q) L.grad[q] += 2.0 * r * sens.grad_y0[q] / static_cast<double>(M);
            if (so.with_norm_penalty) {
                L.norm += reg.norm * sens.norm_penalty / static_cast<double>(M);
                for (std::size_t q = 0; q < P; ++q)
                    L.grad[q] += reg.norm * sens.norm_penalty_grad[q] / static_cast<double>(M);
            }
        } catch (const Error& e) {
            rethrow_with_context(e, "record " + std::to_string(i) + " (" + rec.id + ")");
        }
    }
    for (std::size_t q = 0; q < P; ++q) {
        L.l2 += reg.l2 * theta[q] * theta[q];
        L.grad[q] += 2.0 * reg.l2 * theta[q];
    }
    L.loss = L.fit + L.l2 + L.norm;
    return L;
}

struct Schedule {
    double eta = 0.1;
    double decay = 0.0;  // η_k = η / (1 + decay·k)
    std::size_t max_iters = 50;
    double tol = 0.0;    // stop when |Δloss| < tol (0 disables)
    std::uint64_t seed = 1;
    bool resample_paths = false;  // fresh bundle per iteration instead of one fixed bundle

    double eta_at(std::size_t k) const { return eta / (1.0 + decay * static_cast<double>(k)); }
};

struct TrainingSetup {
    ForwardModel model = models::brownian(1);
    double horizon = 1.0;
    std::size_t n_steps = 20;
    std::size_t n_paths = 10000;
};

struct TrainLogRow {
    std::size_t iter = 0;
    double loss = 0, grad_norm = 0, theta_norm = 0, fit = 0, l2 = 0, norm = 0;
    bool constraints_ok = true;
};

struct TrainState {
    std::vector<double> theta;
    std::size_t iteration = 0;
    std::vector<double> loss_history;
    std::vector<TrainLogRow> log;
    bool converged = false;
    DriverPtr driver;
};

/// Re-runs the structural check matching the net's architecture.
inline bool constraints_hold(const Driver& d, std::uint64_t seed) {
    const auto* net = dynamic_cast<const DriverNet*>(&d);
    if (!net) return true;
    if (!effective_weights_respect_constraints(*net)) return false;
    switch (net->kind()) {
    case ArchitectureKind::MonotoneY: return verify_monotone(d, 200, seed).pass;
    case ArchitectureKind::IcnnYZ: return verify_convexity(d, 200, seed, 0.0).pass;
    default: return true;
    }
}

/// Plain gradient descent θ_{k+1} = θ_k − η_k ∇L(θ_k).
inline TrainState train(const Dataset& ds, DriverPtr driver, const Schedule& sch, const Regularization& reg,
                        const TrainingSetup& setup, const RegressionBasis& basis = {}, const LsmcOptions& opts = {}) {
    if (!(sch.eta >= 0) || sch.decay < 0) fail(ErrorKind::InvalidArgument, "learning-rate schedule must be non-negative");
    const TimeGrid grid = make_time_grid(setup.horizon, setup.n_steps);
    auto make_paths = [&](std::uint64_t s) {
        return std::make_shared<const PathEnsemble>(
            simulate_forward(setup.model, grid, share(sample_brownian(grid, setup.n_paths, setup.model.noise_dim, s))));
    };
    auto paths = make_paths(split_seed(sch.seed, "train-bundle"));
    TrainState st;
    st.driver = std::move(driver);
    st.theta = st.driver->params();
    for (std::size_t k = 0; k < sch.max_iters; ++k) {
        if (sch.resample_paths && k > 0) paths = make_paths(split_seed(split_seed(sch.seed, "train-bundle"), k));
        LossTerms L;
        try {
            L = loss_and_gradient(ds, st.driver, paths, reg, basis, opts);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::SolverDiverged)
                fail(ErrorKind::TrainingDiverged, "iteration " + std::to_string(k) + ": " + e.what());
            throw;
        }
        if (!std::isfinite(L.loss)) fail(ErrorKind::TrainingDiverged, "non-finite loss at iteration " + std::to_string(k));
        double gn = 0, tn = 0;
        for (double v : L.grad) gn += v * v;
        const double eta = sch.eta_at(k);
        std::vector<double> next = st.theta;
        for (std::size_t q = 0; q < next.size(); ++q) next[q] -= eta * L.grad[q];
        for (double v : next) {
            if (!std::isfinite(v)) fail(ErrorKind::TrainingDiverged, "non-finite parameter after iteration " + std::to_string(k));
            tn += v * v;
        }
        DriverPtr nd = st.driver->with_params(next);
        TrainLogRow row{k, L.loss, std::sqrt(gn), std::sqrt(tn), L.fit, L.l2, L.norm,
                        constraints_hold(*nd, split_seed(sch.seed, k))};
        const bool stop = sch.tol > 0 && !st.loss_history.empty() && std::abs(L.loss - st.loss_history.back()) < sch.tol;
        st.loss_history.push_back(L.loss);
        st.log.push_back(row);
        if (stop) {
            st.converged = true;
            break;
        }
        st.theta = std::move(next);
        st.driver = std::move(nd);
        st.iteration = k + 1;
    }
    return st;
}

inline void write_train_log(const TrainState& st, const std::string& path) {
    std::ofstream os(path);
    if (!os) fail(ErrorKind::InvalidArgument, "cannot write " + path);
    os.precision(17);
    os << "iter,loss,grad_norm,theta_norm,fit_term,l2_term,norm_term,constraints_ok\n";
    for (const auto& r : st.log)
        os << r.iter << ',' << r.loss << ',' << r.grad_norm << ',' << r.theta_norm << ',' << r.fit << ',' << r.l2 << ','
           << r.norm << ',' << (r.constraints_ok ? 1 : 0) << '\n';
}

}  // namespace nexp
