#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "driver.hpp"
#include "nets.hpp"
#include "rng.hpp"

namespace nexp {

/// Region the checks sample (t, x, y, z) from.
struct SampleBox {
    double t_lo = 0.0, t_hi = 1.0;
    double x_lo = -2.0, x_hi = 2.0;
    double y_lo = -2.0, y_hi = 2.0;
    double z_lo = -2.0, z_hi = 2.0;
};

namespace detail {
inline std::size_t dim_or_one(std::size_t d) { return d == 0 ? 1 : d; }

struct SamplePoint {
    double t = 0, y = 0;
    std::vector<double> x, z;
};

inline void draw_point(SeqRng& rng, const SampleBox& box, std::size_t nx, std::size_t nz, SamplePoint& p) {
    p.t = rng.uniform(box.t_lo, box.t_hi);
    p.x.resize(nx);
    p.z.resize(nz);
    for (auto& v : p.x) v = rng.uniform(box.x_lo, box.x_hi);
    p.y = rng.uniform(box.y_lo, box.y_hi);
    for (auto& v : p.z) v = rng.uniform(box.z_lo, box.z_hi);
}
}  // namespace detail

struct MonotoneReport {
    double max_dfdy = -std::numeric_limits<double>::infinity();
    std::size_t n_positive = 0;
    std::size_t n_samples = 0;
    bool pass = true;
};

/// Samples ∂f/∂y; passes iff no sample is strictly positive.
inline MonotoneReport verify_monotone(const Driver& f, std::size_t n_samples, std::uint64_t seed, const SampleBox& box = {}) {
    MonotoneReport r;
    r.n_samples = n_samples;
    SeqRng rng(seed, 0x6d6f6e);
    detail::SamplePoint p;
    DriverGradients g;
    const std::size_t nx = detail::dim_or_one(f.state_dim()), nz = detail::dim_or_one(f.noise_dim());
    for (std::size_t i = 0; i < n_samples; ++i) {
        detail::draw_point(rng, box, nx, nz, p);
        f.gradients(p.t, p.x, p.y, p.z, g);
        r.max_dfdy = std::max(r.max_dfdy, g.dy);
        if (g.dy > 0.0) ++r.n_positive;
    }
    r.pass = r.n_positive == 0;
    return r;
}

struct ConvexityReport {
    double worst_gap = std::numeric_limits<double>::infinity();  // min over segments of avg − mid
    std::size_t violations = 0;
    std::size_t n_segments = 0;
    bool pass = true;
};

/// Midpoint test in (y, z) at sampled (t, x): f(mid) ≤ (f(u1)+f(u2))/2 + tol.
inline ConvexityReport verify_convexity(const Driver& f, std::size_t n_segments, std::uint64_t seed, double tol,
                                        const SampleBox& box = {}) {
    ConvexityReport r;
    r.n_segments = n_segments;
    SeqRng rng(seed, 0x637678);
    detail::SamplePoint a, b;
    const std::size_t nx = detail::dim_or_one(f.state_dim()), nz = detail::dim_or_one(f.noise_dim());
    std::vector<double> zm(nz);
    for (std::size_t i = 0; i < n_segments; ++i) {
        detail::draw_point(rng, box, nx, nz, a);
        detail::draw_point(rng, box, nx, nz, b);
        const double ym = 0.5 * (a.y + b.y);
        for (std::size_t j = 0; j < nz; ++j) zm[j] = 0.5 * (a.z[j] + b.z[j]);
        const double f1 = f.value(a.t, a.x, a.y, a.z);
        const double f2 = f.value(a.t, a.x, b.y, b.z);
        const double fm = f.value(a.t, a.x, ym, zm);
        const double gap = 0.5 * (f1 + f2) - fm;
        r.worst_gap = std::min(r.worst_gap, gap);
        if (gap < -tol) ++r.violations;
    }
    r.pass = r.violations == 0;
    return r;
}

struct GrowthReport {
    double K = 0, alpha = 0;
    int p = 1;
    double L_R = 0;
    double residual = 0;
};

/// Fits |f| ≈ K(1+‖x‖^p+|y|) + (α/2)‖z‖² by least squares for p ∈ {1,2} and
/// measures the local Lipschitz constant in y on [−R, R]. Diagnostic only.
inline GrowthReport estimate_growth_and_lipschitz(const Driver& f, double R, std::size_t n_samples, std::uint64_t seed,
                                                  const SampleBox& box = {}) {
    require(R > 0, "estimate_growth_and_lipschitz needs R > 0");
    require(n_samples >= 2, "estimate_growth_and_lipschitz needs at least 2 samples");
    GrowthReport best;
    best.residual = std::numeric_limits<double>::infinity();
    const std::size_t nx = detail::dim_or_one(f.state_dim()), nz = detail::dim_or_one(f.noise_dim());
    SampleBox gbox = box;
    gbox.y_lo = -R;
    gbox.y_hi = R;
    for (int p : {1, 2}) {
        SeqRng rng(seed, 0x67726f);
        Eigen::MatrixXd A(static_cast<Eigen::Index>(n_samples), 2);
        Eigen::VectorXd b(static_cast<Eigen::Index>(n_samples));
        detail::SamplePoint pt;
        for (std::size_t i = 0; i < n_samples; ++i) {
            detail::draw_point(rng, gbox, nx, nz, pt);
            double xn = 0, zn = 0;
            for (double v : pt.x) xn += v * v;
            for (double v : pt.z) zn += v * v;
            const auto r = static_cast<Eigen::Index>(i);
            A(r, 0) = 1.0 + std::pow(std::sqrt(xn), p) + std::abs(pt.y);
            A(r, 1) = 0.5 * zn;
            b(r) = std::abs(f.value(pt.t, pt.x, pt.y, pt.z));
        }
        const Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
        const double res = (A * c - b).norm();
        if (res < best.residual) {
            best.residual = res;
            best.K = c(0);
            best.alpha = c(1);
            best.p = p;
        }
    }
    // y-pairs come from their own stream so changing the z range leaves them unchanged
    SeqRng ry(seed, 0x6c6970);
    SeqRng rz(seed, 0x6c697a);
    detail::SamplePoint pt;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double y1 = ry.uniform(-R, R);
        double y2 = ry.uniform(-R, R);
        if (std::abs(y1 - y2) < 0.01 * R) y2 = y1 + (y1 < 0 ? 0.01 * R : -0.01 * R);
        detail::draw_point(rz, box, nx, nz, pt);
        const double d = std::abs(f.value(pt.t, pt.x, y1, pt.z) - f.value(pt.t, pt.x, y2, pt.z)) / std::abs(y1 - y2);
        best.L_R = std::max(best.L_R, d);
    }
    return best;
}

struct GradientCheck {
    double rel_error = 0;  // ‖analytic − fd‖ / max(‖fd‖, ‖analytic‖) over (dy, dz, dθ) jointly
    double abs_error = 0;
};

/// Central differences of value() in y, z and every raw parameter.
inline GradientCheck check_driver_gradients(const Driver& f, double t, std::span<const double> x, double y,
                                            std::span<const double> z, double h = 1e-5) {
    DriverGradients g;
    f.gradients(t, x, y, z, g);
    std::vector<double> an, fd;
    an.push_back(g.dy);
    fd.push_back((f.value(t, x, y + h, z) - f.value(t, x, y - h, z)) / (2 * h));
    std::vector<double> zz(z.begin(), z.end());
    for (std::size_t j = 0; j < zz.size(); ++j) {
        const double z0 = zz[j];
        zz[j] = z0 + h;
        const double fp = f.value(t, x, y, zz);
        zz[j] = z0 - h;
        const double fm = f.value(t, x, y, zz);
        zz[j] = z0;
        an.push_back(g.dz[j]);
        fd.push_back((fp - fm) / (2 * h));
    }
    std::vector<double> th = f.params();
    for (std::size_t k = 0; k < th.size(); ++k) {
        const double t0 = th[k];
        th[k] = t0 + h;
        const double fp = f.with_params(th)->value(t, x, y, z);
        th[k] = t0 - h;
        const double fm = f.with_params(th)->value(t, x, y, z);
        th[k] = t0;
        an.push_back(g.dtheta[k]);
        fd.push_back((fp - fm) / (2 * h));
    }
    double num = 0, na = 0, nf = 0;
    for (std::size_t i = 0; i < an.size(); ++i) {
        num += (an[i] - fd[i]) * (an[i] - fd[i]);
        na += an[i] * an[i];
        nf += fd[i] * fd[i];
    }
    GradientCheck c;
    c.abs_error = std::sqrt(num);
    const double scale = std::max(std::sqrt(na), std::sqrt(nf));
    c.rel_error = scale > 0 ? c.abs_error / scale : 0.0;
    return c;
}

}  // namespace nexp
