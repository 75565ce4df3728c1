#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace nexp {

class TimeGrid {
public:
    TimeGrid() = default;

    TimeGrid(double horizon, std::size_t n_steps) : horizon_(horizon), n_steps_(n_steps) {
        if (!(horizon > 0.0) || !std::isfinite(horizon))
            fail(ErrorKind::InvalidArgument, "time grid horizon must be positive, got " + std::to_string(horizon));
        if (n_steps == 0) fail(ErrorKind::InvalidArgument, "time grid needs at least one step");
        dt_ = horizon / static_cast<double>(n_steps);
    }

    double horizon() const noexcept { return horizon_; }
    std::size_t n_steps() const noexcept { return n_steps_; }
    double dt() const noexcept { return dt_; }

    double node(std::size_t k) const noexcept {
        if (k >= n_steps_) return horizon_;
        return horizon_ * static_cast<double>(k) / static_cast<double>(n_steps_);
    }

    std::vector<double> nodes() const {
        std::vector<double> t(n_steps_ + 1);
        for (std::size_t k = 0; k <= n_steps_; ++k) t[k] = node(k);
        return t;
    }

    /// Index of the node equal to t (within a relative tolerance), if any.
    std::optional<std::size_t> index_of(double t, double rel_tol = 1e-10) const {
        const double pos = t / dt_;
        const double k = std::round(pos);
        if (k < 0 || k > static_cast<double>(n_steps_)) return std::nullopt;
        if (std::abs(pos - k) > rel_tol * std::max(1.0, k)) return std::nullopt;
        return static_cast<std::size_t>(k);
    }

    bool operator==(const TimeGrid&) const = default;

private:
    double horizon_ = 1.0;
    std::size_t n_steps_ = 1;
    double dt_ = 1.0;
};

inline TimeGrid make_time_grid(double horizon, std::size_t n_steps) { return TimeGrid(horizon, n_steps); }

/// Gaussian increments, row-major [path][step][coord].
class BrownianBundle {
public:
    BrownianBundle() = default;
    BrownianBundle(std::size_t n_paths, std::size_t n_steps, std::size_t dim, std::uint64_t seed, double dt,
                   std::vector<double> increments)
        : n_paths_(n_paths), n_steps_(n_steps), dim_(dim), seed_(seed), dt_(dt), dw_(std::move(increments)) {
        if (dw_.size() != n_paths * n_steps * dim)
            fail(ErrorKind::InvalidArgument, "brownian bundle size does not match its shape");
    }

    std::size_t n_paths() const noexcept { return n_paths_; }
    std::size_t n_steps() const noexcept { return n_steps_; }
    std::size_t dim() const noexcept { return dim_; }
    std::uint64_t seed() const noexcept { return seed_; }
    double dt() const noexcept { return dt_; }

    const double* increment(std::size_t path, std::size_t step) const noexcept {
        return dw_.data() + (path * n_steps_ + step) * dim_;
    }
    double increment(std::size_t path, std::size_t step, std::size_t j) const noexcept {
        return dw_[(path * n_steps_ + step) * dim_ + j];
    }
    std::span<const double> raw() const noexcept { return dw_; }

    /// Sum of increments over [from, to) steps for one path and coordinate.
    double brownian_between(std::size_t path, std::size_t from, std::size_t to, std::size_t j = 0) const noexcept {
        double w = 0.0;
        for (std::size_t k = from; k < to; ++k) w += increment(path, k, j);
        return w;
    }
    double terminal(std::size_t path, std::size_t j = 0) const noexcept { return brownian_between(path, 0, n_steps_, j); }

    bool operator==(const BrownianBundle& o) const {
        return n_paths_ == o.n_paths_ && n_steps_ == o.n_steps_ && dim_ == o.dim_ && seed_ == o.seed_ &&
               std::memcmp(dw_.data(), o.dw_.data(), dw_.size() * sizeof(double)) == 0;
    }

private:
    std::size_t n_paths_ = 0;
    std::size_t n_steps_ = 0;
    std::size_t dim_ = 0;
    std::uint64_t seed_ = 0;
    double dt_ = 0.0;
    std::vector<double> dw_;
};

/// ΔW[p][k][j] = sqrt(dt)·Φ⁻¹(U(seed; p, k, j)), so each value depends only on
/// (seed, path, step, coordinate).
inline BrownianBundle sample_brownian(const TimeGrid& grid, std::size_t n_paths, std::size_t dim, std::uint64_t seed,
                                      std::size_t first_path = 0) {
    if (n_paths == 0) fail(ErrorKind::InvalidArgument, "sample_brownian needs n_paths >= 1");
    if (dim == 0) fail(ErrorKind::InvalidArgument, "sample_brownian needs dim >= 1");
    const std::size_t K = grid.n_steps();
    const double sdt = std::sqrt(grid.dt());
    std::vector<double> dw(n_paths * K * dim);
    const CounterRng rng(seed);
    parallel_for(n_paths, [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p)
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t j = 0; j < dim; ++j)
                    dw[(p * K + k) * dim + j] =
                        sdt * rng.normal(first_path + p, static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(j));
    });
    return BrownianBundle(n_paths, K, dim, seed, grid.dt(), std::move(dw));
}

inline std::shared_ptr<const BrownianBundle> share(BrownianBundle b) {
    return std::make_shared<const BrownianBundle>(std::move(b));
}

/// Binary dump: four little-endian u64 (n_paths, n_steps, d, seed) then the
/// increments as row-major f64.
inline void save_bundle(const BrownianBundle& b, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::InvalidArgument, "cannot open " + path + " for writing");
    const std::uint64_t header[4] = {b.n_paths(), b.n_steps(), b.dim(), b.seed()};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(reinterpret_cast<const char*>(b.raw().data()), static_cast<std::streamsize>(b.raw().size_bytes()));
    if (!out) fail(ErrorKind::InvalidArgument, "write failed for " + path);
}

inline BrownianBundle load_bundle(const std::string& path, const TimeGrid& grid) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::InvalidArgument, "cannot open " + path);
    std::uint64_t header[4];
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in) fail(ErrorKind::InvalidArgument, "truncated bundle header in " + path);
    if (header[1] != grid.n_steps())
        fail(ErrorKind::InvalidArgument, "bundle has " + std::to_string(header[1]) + " steps, grid has " +
                                             std::to_string(grid.n_steps()));
    std::vector<double> dw(header[0] * header[1] * header[2]);
    in.read(reinterpret_cast<char*>(dw.data()), static_cast<std::streamsize>(dw.size() * sizeof(double)));
    if (!in) fail(ErrorKind::InvalidArgument, "truncated bundle body in " + path);
    return BrownianBundle(header[0], header[1], header[2], header[3], grid.dt(), std::move(dw));
}

/// Empirical statistics of a 1-D measure; the only way measures enter coefficients.
struct MeasureFeatures {
    double mean = 0.0;
    double second_moment = 0.0;
    std::shared_ptr<const std::vector<double>> sorted;  // only when a model asks for it

    double variance() const noexcept { return second_moment - mean * mean; }
    bool operator==(const MeasureFeatures& o) const noexcept {
        return mean == o.mean && second_moment == o.second_moment;
    }
};

/// Features of a sample. Sums run over the sorted sample so the result does
/// not depend on particle order.
inline MeasureFeatures measure_features(std::span<const double> xs, bool keep_sorted = false) {
    auto sorted = std::make_shared<std::vector<double>>(xs.begin(), xs.end());
    std::sort(sorted->begin(), sorted->end());
    MeasureFeatures f;
    double s1 = 0.0, s2 = 0.0;
    for (double v : *sorted) {
        s1 += v;
        s2 += v * v;
    }
    const double n = static_cast<double>(sorted->size());
    f.mean = s1 / n;
    f.second_moment = s2 / n;
    if (keep_sorted) f.sorted = std::move(sorted);
    return f;
}

/// Optional arguments passed to coupled coefficients.
struct Coupling {
    double y = 0.0;
    std::span<const double> z{};
    const MeasureFeatures* features = nullptr;
};

struct ForwardModel {
    std::size_t state_dim = 1;
    std::size_t noise_dim = 1;
    std::vector<double> x0{0.0};
    /// out has state_dim entries
    std::function<void(double t, std::span<const double> x, const Coupling& c, std::span<double> out)> drift;
    /// out is state_dim × noise_dim, row-major
    std::function<void(double t, std::span<const double> x, const Coupling& c, std::span<double> out)> diffusion;
};

/// Coupling fields for FBSDE iterations: fills (y, z) at (step, x).
using CouplingField = std::function<void(std::size_t step, std::span<const double> x, double& y, std::span<double> z)>;

class PathEnsemble {
public:
    PathEnsemble() = default;
    PathEnsemble(TimeGrid grid, std::shared_ptr<const BrownianBundle> bundle, std::size_t state_dim, std::vector<double> states)
        : grid_(grid), bundle_(std::move(bundle)), n_(state_dim), x_(std::move(states)) {}

    const TimeGrid& grid() const noexcept { return grid_; }
    const BrownianBundle& bundle() const noexcept { return *bundle_; }
    std::shared_ptr<const BrownianBundle> bundle_ptr() const noexcept { return bundle_; }
    std::size_t n_paths() const noexcept { return bundle_->n_paths(); }
    std::size_t n_steps() const noexcept { return grid_.n_steps(); }
    std::size_t state_dim() const noexcept { return n_; }
    std::size_t noise_dim() const noexcept { return bundle_->dim(); }

    const double* state(std::size_t path, std::size_t step) const noexcept {
        return x_.data() + (path * (grid_.n_steps() + 1) + step) * n_;
    }
    double state(std::size_t path, std::size_t step, std::size_t i) const noexcept { return state(path, step)[i]; }
    std::span<const double> raw() const noexcept { return x_; }

    /// Column of states at one step, as a contiguous copy (paths × state_dim).
    std::vector<double> slice(std::size_t step) const {
        std::vector<double> out(n_paths() * n_);
        for (std::size_t p = 0; p < n_paths(); ++p) std::copy_n(state(p, step), n_, out.data() + p * n_);
        return out;
    }

private:
    TimeGrid grid_;
    std::shared_ptr<const BrownianBundle> bundle_;
    std::size_t n_ = 0;
    std::vector<double> x_;
};

/// Euler–Maruyama on every path of the bundle.
inline PathEnsemble simulate_forward(const ForwardModel& model, const TimeGrid& grid,
                                     std::shared_ptr<const BrownianBundle> bundle, const CouplingField& coupling = {}) {
    if (!bundle) fail(ErrorKind::InvalidArgument, "simulate_forward needs a bundle");
    const std::size_t n = model.state_dim, d = model.noise_dim, K = grid.n_steps();
    if (bundle->n_steps() != K) fail(ErrorKind::InvalidArgument, "bundle steps do not match grid");
    if (bundle->dim() != d) fail(ErrorKind::InvalidArgument, "bundle dimension does not match model noise dimension");
    if (model.x0.size() != n) fail(ErrorKind::InvalidArgument, "initial state has wrong dimension");
    if (!model.drift || !model.diffusion) fail(ErrorKind::InvalidArgument, "forward model is missing a coefficient");
    const std::size_t N = bundle->n_paths();
    std::vector<double> xs(N * (K + 1) * n);
    const double dt = grid.dt();
    parallel_for(N, [&](std::size_t b, std::size_t e) {
        std::vector<double> drift(n), diff(n * d), zbuf(d);
        for (std::size_t p = b; p < e; ++p) {
            double* row = xs.data() + p * (K + 1) * n;
            std::copy(model.x0.begin(), model.x0.end(), row);
            for (std::size_t k = 0; k < K; ++k) {
                const std::span<const double> x(row + k * n, n);
                Coupling c;
                if (coupling) {
                    coupling(k, x, c.y, zbuf);
                    c.z = zbuf;
                }
                const double t = grid.node(k);
                model.drift(t, x, c, drift);
                model.diffusion(t, x, c, diff);
                const double* dw = bundle->increment(p, k);
                double* next = row + (k + 1) * n;
                for (std::size_t i = 0; i < n; ++i) {
                    double v = x[i] + drift[i] * dt;
                    for (std::size_t j = 0; j < d; ++j) v += diff[i * d + j] * dw[j];
                    if (!std::isfinite(v))
                        fail(ErrorKind::SimulationDiverged, "non-finite state at path " + std::to_string(p) +
                                                                ", step " + std::to_string(k + 1));
                    next[i] = v;
                }
            }
        }
    }, 256);
    return PathEnsemble(grid, std::move(bundle), n, std::move(xs));
}

namespace models {

/// X = x0 + W (n = d).
inline ForwardModel brownian(std::size_t d = 1, double x0 = 0.0) {
    ForwardModel m;
    m.state_dim = d;
    m.noise_dim = d;
    m.x0.assign(d, x0);
    m.drift = [](double, std::span<const double>, const Coupling&, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
    };
    m.diffusion = [d](double, std::span<const double>, const Coupling&, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t i = 0; i < d; ++i) out[i * d + i] = 1.0;
    };
    return m;
}

inline ForwardModel geometric(double mu, double sigma, double x0) {
    ForwardModel m;
    m.x0 = {x0};
    m.drift = [mu](double, std::span<const double> x, const Coupling&, std::span<double> out) { out[0] = mu * x[0]; };
    m.diffusion = [sigma](double, std::span<const double> x, const Coupling&, std::span<double> out) {
        out[0] = sigma * x[0];
    };
    return m;
}

inline ForwardModel ornstein_uhlenbeck(double kappa, double mean, double sigma, double x0) {
    ForwardModel m;
    m.x0 = {x0};
    m.drift = [=](double, std::span<const double> x, const Coupling&, std::span<double> out) {
        out[0] = kappa * (mean - x[0]);
    };
    m.diffusion = [sigma](double, std::span<const double>, const Coupling&, std::span<double> out) { out[0] = sigma; };
    return m;
}

}  // namespace models

/// Exact W₂ between two equal-size 1-D empirical measures via the sorted coupling.
inline double wasserstein2_1d(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) fail(ErrorKind::InvalidArgument, "wasserstein2_1d needs non-empty samples");
    if (a.size() != b.size())
        fail(ErrorKind::InvalidArgument, "wasserstein2_1d needs equal sample sizes (" + std::to_string(a.size()) +
                                             " vs " + std::to_string(b.size()) + ")");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double s = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) s += (sa[i] - sb[i]) * (sa[i] - sb[i]);
    return std::sqrt(s / static_cast<double>(sa.size()));
}

}  // namespace nexp
