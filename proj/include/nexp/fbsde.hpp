#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bsde.hpp"

namespace nexp {

/// Forward model whose coefficients may read (y, z) through Coupling.
struct FbsdeProblem {
    ForwardModel model;
    TimeGrid grid;
    std::shared_ptr<const BrownianBundle> bundle;
    Terminal terminal;
    DriverPtr driver;
};

struct PicardOptions {
    std::size_t max_iters = 30;
    double tol = 1e-10;
};

struct FbsdeResult {
    std::shared_ptr<const PathEnsemble> paths;
    std::optional<BsdeSolution> solution;
    std::vector<double> residuals;  // one per iteration after the first solve
    std::size_t iterations = 0;
    bool converged = false;
};

namespace detail {

inline CouplingField coupling_from(const BsdeSolution& s) {
    return [&s](std::size_t k, std::span<const double> x, double& y, std::span<double> z) {
        y = s.y_surface(k, x);
        s.z_surface(k, x, z);
    };
}

inline std::string residual_trace(const std::vector<double>& r) {
    std::string out;
    for (double v : r) out += (out.empty() ? "" : ", ") + std::to_string(v);
    return out;
}

}  // namespace detail

/// Decoupling by Picard iteration: freeze the regressed (Y, Z) fields,
/// re-simulate the forward equation, re-solve backward. The residual of an
/// iteration is the larger of the change in Y₀ and the sup over steps and
/// current states of the change in the Y surface.
inline FbsdeResult solve_fbsde_picard(const FbsdeProblem& pb, const RegressionBasis& basis = {}, const LsmcOptions& opts = {},
                                      const PicardOptions& po = {}) {
    if (!pb.bundle) fail(ErrorKind::InvalidArgument, "FBSDE problem has no bundle");
    const std::size_t K = pb.grid.n_steps(), n = pb.model.state_dim;
    auto solve_with = [&](const CouplingField& field) {
        auto paths = std::make_shared<const PathEnsemble>(simulate_forward(pb.model, pb.grid, pb.bundle, field));
        BsdeProblem bp{paths, pb.terminal, pb.driver};
        return solve_bsde_lsmc(bp, basis, opts);
    };
    const CouplingField none = [](std::size_t, std::span<const double>, double& y, std::span<double> z) {
        y = 0.0;
        for (auto& v : z) v = 0.0;
    };

    FbsdeResult r;
    BsdeSolution prev = solve_with(none);
    std::size_t rising = 0;
    for (std::size_t it = 1; it <= po.max_iters; ++it) {
        std::optional<BsdeSolution> next;
        try {
            next.emplace(solve_with(detail::coupling_from(prev)));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::SimulationDiverged && e.kind() != ErrorKind::SolverDiverged) throw;
            fail(ErrorKind::NoContraction, "Picard iteration " + std::to_string(it) + " blew up (" + e.what() +
                                               "); residuals: " + detail::residual_trace(r.residuals));
        }
        BsdeSolution cur = std::move(*next);
        const PathEnsemble& xs = cur.paths();
        double res = std::abs(cur.y0() - prev.y0());
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t p = 0; p < xs.n_paths(); ++p) {
                const std::span<const double> x{xs.state(p, k), n};
                res = std::max(res, std::abs(cur.y_surface(k, x) - prev.y_surface(k, x)));
            }
        if (!std::isfinite(res))
            fail(ErrorKind::NoContraction, "Picard residual is not finite after iteration " + std::to_string(it) +
                                               "; residuals: " + detail::residual_trace(r.residuals));
        if (!r.residuals.empty() && res >= r.residuals.back()) {
            if (++rising >= 3) {
                r.residuals.push_back(res);
                fail(ErrorKind::NoContraction, "Picard residuals rose for 3 consecutive iterations (horizon likely too "
                                               "long for the coupling); residuals: " + detail::residual_trace(r.residuals));
            }
        } else {
            rising = 0;
        }
        r.residuals.push_back(res);
        r.iterations = it;
        prev = std::move(cur);
        if (res < po.tol) {
            r.converged = true;
            break;
        }
    }
    r.paths = prev.paths_ptr();
    r.solution.emplace(std::move(prev));
    return r;
}

}  // namespace nexp
