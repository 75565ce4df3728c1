#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace nexp {

struct DriverGradients {
    double value = 0.0;
    double dy = 0.0;
    std::vector<double> dz;
    std::vector<double> dtheta;
};

/// The generator f(t, x, y, z). Implementations are immutable; a parameter
/// change produces a new object through with_params.
class Driver {
public:
    virtual ~Driver() = default;

    /// 0 means "accepts any dimension".
    virtual std::size_t state_dim() const { return 0; }
    virtual std::size_t noise_dim() const { return 0; }

    virtual std::size_t param_count() const { return 0; }
    virtual std::vector<double> params() const { return {}; }
    virtual std::shared_ptr<const Driver> with_params(std::span<const double> theta) const {
        if (!theta.empty()) fail(ErrorKind::InvalidArgument, describe() + " has no parameters");
        return nullptr;
    }

    virtual double value(double t, std::span<const double> x, double y, std::span<const double> z) const = 0;

    /// Fills value, dy, dz (size of z) and dtheta (param_count).
    virtual void gradients(double t, std::span<const double> x, double y, std::span<const double> z,
                           DriverGradients& g) const = 0;

    virtual bool y_independent() const { return false; }

    /// g(u) = inf_z (z·u + f(z)) for drivers depending on z only, when known
    /// analytically. −inf marks an unbounded infimum.
    virtual std::optional<double> fenchel(std::span<const double>) const { return std::nullopt; }

    virtual std::string describe() const = 0;
};

using DriverPtr = std::shared_ptr<const Driver>;

namespace detail {
inline void size_grad(std::span<const double> z, std::size_t np, DriverGradients& g) {
    g.dz.assign(z.size(), 0.0);
    g.dtheta.assign(np, 0.0);
}
inline bool all_zero(std::span<const double> u) {
    for (double v : u)
        if (v != 0.0) return false;
    return true;
}
constexpr double neg_inf = -std::numeric_limits<double>::infinity();
}  // namespace detail

class ZeroDriver final : public Driver {
public:
    double value(double, std::span<const double>, double, std::span<const double>) const override { return 0.0; }
    void gradients(double, std::span<const double>, double, std::span<const double> z, DriverGradients& g) const override {
        detail::size_grad(z, 0, g);
        g.value = 0.0;
        g.dy = 0.0;
    }
    bool y_independent() const override { return true; }
    std::optional<double> fenchel(std::span<const double> u) const override {
        return detail::all_zero(u) ? 0.0 : detail::neg_inf;
    }
    std::string describe() const override { return "zero"; }
};

/// f = b·z
class LinearZDriver final : public Driver {
public:
    explicit LinearZDriver(std::vector<double> b) : b_(std::move(b)) {}
    std::size_t noise_dim() const override { return b_.size(); }
    double value(double, std::span<const double>, double, std::span<const double> z) const override {
        double v = 0.0;
        for (std::size_t j = 0; j < b_.size(); ++j) v += b_[j] * z[j];
        return v;
    }
    void gradients(double t, std::span<const double> x, double y, std::span<const double> z, DriverGradients& g) const override {
        detail::size_grad(z, 0, g);
        g.value = value(t, x, y, z);
        g.dy = 0.0;
        for (std::size_t j = 0; j < b_.size(); ++j) g.dz[j] = b_[j];
    }
    bool y_independent() const override { return true; }
    std::optional<double> fenchel(std::span<const double> u) const override {
        for (std::size_t j = 0; j < b_.size(); ++j)
            if (u[j] + b_[j] != 0.0) return detail::neg_inf;
        return 0.0;
    }
    std::string describe() const override { return "linear-z"; }
    const std::vector<double>& b() const noexcept { return b_; }

private:
    std::vector<double> b_;
};

/// f = sign·(θ/2)‖z‖², with θ as the single parameter. sign = −1 is the
/// entropic (ambiguity-averse) driver.
class QuadraticZDriver final : public Driver {
public:
    QuadraticZDriver(double theta, double sign) : theta_(theta), sign_(sign >= 0 ? 1.0 : -1.0) {}
    std::size_t param_count() const override { return 1; }
    std::vector<double> params() const override { return {theta_}; }
    DriverPtr with_params(std::span<const double> th) const override {
        if (th.size() != 1) fail(ErrorKind::InvalidArgument, "quadratic driver takes one parameter");
        return std::make_shared<QuadraticZDriver>(th[0], sign_);
    }
    double value(double, std::span<const double>, double, std::span<const double> z) const override {
        double s = 0.0;
        for (double v : z) s += v * v;
        return sign_ * 0.5 * theta_ * s;
    }
    void gradients(double, std::span<const double>, double, std::span<const double> z, DriverGradients& g) const override {
        detail::size_grad(z, 1, g);
        double s = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) {
            s += z[j] * z[j];
            g.dz[j] = sign_ * theta_ * z[j];
        }
        g.value = sign_ * 0.5 * theta_ * s;
        g.dy = 0.0;
        g.dtheta[0] = sign_ * 0.5 * s;
    }
    bool y_independent() const override { return true; }
    std::optional<double> fenchel(std::span<const double> u) const override {
        if (sign_ < 0 || theta_ <= 0) return std::nullopt;
        double s = 0.0;
        for (double v : u) s += v * v;
        return -s / (2.0 * theta_);
    }
    std::string describe() const override { return sign_ < 0 ? "entropic" : "quadratic-z"; }
    double theta() const noexcept { return theta_; }
    double sign() const noexcept { return sign_; }

private:
    double theta_;
    double sign_;
};

inline DriverPtr entropic_driver(double theta) { return std::make_shared<QuadraticZDriver>(theta, -1.0); }

/// f = θ·c
class ConstantSourceDriver final : public Driver {
public:
    ConstantSourceDriver(double theta, double c) : theta_(theta), c_(c) {}
    std::size_t param_count() const override { return 1; }
    std::vector<double> params() const override { return {theta_}; }
    DriverPtr with_params(std::span<const double> th) const override {
        if (th.size() != 1) fail(ErrorKind::InvalidArgument, "constant-source driver takes one parameter");
        return std::make_shared<ConstantSourceDriver>(th[0], c_);
    }
    double value(double, std::span<const double>, double, std::span<const double>) const override { return theta_ * c_; }
    void gradients(double, std::span<const double>, double, std::span<const double> z, DriverGradients& g) const override {
        detail::size_grad(z, 1, g);
        g.value = theta_ * c_;
        g.dy = 0.0;
        g.dtheta[0] = c_;
    }
    bool y_independent() const override { return true; }
    std::optional<double> fenchel(std::span<const double> u) const override {
        return detail::all_zero(u) ? theta_ * c_ : detail::neg_inf;
    }
    std::string describe() const override { return "constant-source"; }

private:
    double theta_;
    double c_;
};

/// f = a0 + ay·y + az·z
class AffineDriver final : public Driver {
public:
    AffineDriver(double a0, double ay, std::vector<double> az) : a0_(a0), ay_(ay), az_(std::move(az)) {}
    double value(double, std::span<const double>, double y, std::span<const double> z) const override {
        double v = a0_ + ay_ * y;
        for (std::size_t j = 0; j < az_.size(); ++j) v += az_[j] * z[j];
        return v;
    }
    void gradients(double t, std::span<const double> x, double y, std::span<const double> z, DriverGradients& g) const override {
        detail::size_grad(z, 0, g);
        g.value = value(t, x, y, z);
        g.dy = ay_;
        for (std::size_t j = 0; j < az_.size(); ++j) g.dz[j] = az_[j];
    }
    bool y_independent() const override { return ay_ == 0.0; }
    std::string describe() const override { return "affine"; }

private:
    double a0_, ay_;
    std::vector<double> az_;
};

/// Wraps a plain callable. Derivatives in (y, z) come from central
/// differences unless a gradient callable is supplied.
class FunctionDriver final : public Driver {
public:
    using ValueFn = std::function<double(double, std::span<const double>, double, std::span<const double>)>;
    using GradFn = std::function<void(double, std::span<const double>, double, std::span<const double>, DriverGradients&)>;

    explicit FunctionDriver(ValueFn f, GradFn g = {}, std::string name = "function", bool y_indep = false)
        : f_(std::move(f)), g_(std::move(g)), name_(std::move(name)), y_indep_(y_indep) {}

    double value(double t, std::span<const double> x, double y, std::span<const double> z) const override {
        return f_(t, x, y, z);
    }
    void gradients(double t, std::span<const double> x, double y, std::span<const double> z, DriverGradients& g) const override {
        if (g_) {
            g_(t, x, y, z, g);
            return;
        }
        detail::size_grad(z, 0, g);
        g.value = f_(t, x, y, z);
        const double h = 1e-6;
        g.dy = (f_(t, x, y + h, z) - f_(t, x, y - h, z)) / (2 * h);
        std::vector<double> zz(z.begin(), z.end());
        for (std::size_t j = 0; j < zz.size(); ++j) {
            const double z0 = zz[j];
            zz[j] = z0 + h;
            const double fp = f_(t, x, y, zz);
            zz[j] = z0 - h;
            const double fm = f_(t, x, y, zz);
            zz[j] = z0;
            g.dz[j] = (fp - fm) / (2 * h);
        }
    }
    bool y_independent() const override { return y_indep_; }
    std::string describe() const override { return name_; }

private:
    ValueFn f_;
    GradFn g_;
    std::string name_;
    bool y_indep_;
};

/// Evaluates the wrapped driver with its y-argument clamped to [-k, k].
class ClampedDriver final : public Driver {
public:
    ClampedDriver(DriverPtr inner, double k) : inner_(std::move(inner)), k_(k) {}
    double value(double t, std::span<const double> x, double y, std::span<const double> z) const override {
        return inner_->value(t, x, std::clamp(y, -k_, k_), z);
    }
    void gradients(double t, std::span<const double> x, double y, std::span<const double> z, DriverGradients& g) const override {
        inner_->gradients(t, x, std::clamp(y, -k_, k_), z, g);
        if (y < -k_ || y > k_) g.dy = 0.0;
    }
    std::size_t param_count() const override { return inner_->param_count(); }
    std::vector<double> params() const override { return inner_->params(); }
    DriverPtr with_params(std::span<const double> th) const override {
        return std::make_shared<ClampedDriver>(inner_->with_params(th), k_);
    }
    bool y_independent() const override { return inner_->y_independent(); }
    std::optional<double> fenchel(std::span<const double> u) const override { return inner_->fenchel(u); }
    std::string describe() const override { return "clamped(" + inner_->describe() + ")"; }

private:
    DriverPtr inner_;
    double k_;
};

}  // namespace nexp
