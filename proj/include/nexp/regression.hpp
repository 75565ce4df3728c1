#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace nexp {

struct RegressionBasis {
    std::size_t degree = 3;  // total polynomial degree in the state features
};

/// Standardization plus monomial exponents; enough to evaluate a fitted
/// surface at points that were not in the sample.
struct PolynomialFrame {
    std::vector<std::size_t> active;  // input coordinates with non-zero sample variance
    std::vector<double> center, scale;
    std::vector<std::vector<std::uint8_t>> exponents;  // one row per basis function
    std::size_t degree = 0;

    std::size_t size() const noexcept { return exponents.size(); }

    void features(const double* x, double* out) const {
        const std::size_t a = active.size();
        // powers[i][p] = u_i^p
        double powers[8][8];
        for (std::size_t i = 0; i < a; ++i) {
            const double u = (x[active[i]] - center[i]) / scale[i];
            powers[i][0] = 1.0;
            for (std::size_t p = 1; p <= degree; ++p) powers[i][p] = powers[i][p - 1] * u;
        }
        for (std::size_t b = 0; b < exponents.size(); ++b) {
            double v = 1.0;
            for (std::size_t i = 0; i < a; ++i) v *= powers[i][exponents[b][i]];
            out[b] = v;
        }
    }
};

/// A fitted conditional-expectation surface with q outputs.
struct Surface {
    std::shared_ptr<const PolynomialFrame> frame;
    Eigen::MatrixXd coef;  // basis × q

    bool empty() const noexcept { return !frame; }
    std::size_t outputs() const noexcept { return static_cast<std::size_t>(coef.cols()); }

    void eval(const double* x, double* out) const {
        double phi[128];
        frame->features(x, phi);
        const std::size_t m = frame->size();
        for (Eigen::Index j = 0; j < coef.cols(); ++j) {
            double v = 0.0;
            for (std::size_t b = 0; b < m; ++b) v += phi[b] * coef(static_cast<Eigen::Index>(b), j);
            out[j] = v;
        }
    }
    double eval1(const double* x, Eigen::Index col = 0) const {
        double phi[128];
        frame->features(x, phi);
        double v = 0.0;
        for (std::size_t b = 0; b < frame->size(); ++b) v += phi[b] * coef(static_cast<Eigen::Index>(b), col);
        return v;
    }
};

/// Least-squares projection onto polynomials of the sample points, built once
/// per time step and reused for every target regressed at that step.
class Regressor {
public:
    /// Sample i lives at x + i*stride and has `dim` coordinates.
    Regressor(const double* x, std::size_t n, std::size_t dim, std::size_t stride, const RegressionBasis& basis)
        : n_(n) {
        if (dim > 8 || basis.degree > 7)
            fail(ErrorKind::InvalidArgument, "polynomial basis supports at most 8 coordinates and degree 7");
        auto frame = std::make_shared<PolynomialFrame>();
        frame->degree = basis.degree;
        for (std::size_t i = 0; i < dim; ++i) {
            double s1 = 0.0;
            for (std::size_t p = 0; p < n; ++p) s1 += x[p * stride + i];
            const double mean = s1 / static_cast<double>(n);
            double s2 = 0.0;
            for (std::size_t p = 0; p < n; ++p) {
                const double dv = x[p * stride + i] - mean;
                s2 += dv * dv;
            }
            const double sd = std::sqrt(s2 / static_cast<double>(n));
            if (sd > 1e-12 * (1.0 + std::abs(mean))) {
                frame->active.push_back(i);
                frame->center.push_back(mean);
                frame->scale.push_back(sd);
            }
        }
        enumerate(frame->active.size(), basis.degree, frame->exponents);
        if (frame->size() > 128) fail(ErrorKind::InvalidArgument, "polynomial basis too large");
        const std::size_t m = frame->size();
        phi_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        std::vector<double> row(m);
        for (std::size_t p = 0; p < n; ++p) {
            frame->features(x + p * stride, row.data());
            for (std::size_t b = 0; b < m; ++b) phi_(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(b)) = row[b];
        }
        frame_ = std::move(frame);
        const Eigen::MatrixXd gram = (phi_.transpose() * phi_) / static_cast<double>(n);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        cond_ = (lo > 0.0 && n >= m) ? std::sqrt(hi / lo) : std::numeric_limits<double>::infinity();
        ldlt_.compute(gram);
    }

    std::size_t basis_size() const noexcept { return frame_->size(); }
    std::size_t samples() const noexcept { return n_; }
    /// Condition number of the (standardized) design matrix.
    double condition() const noexcept { return cond_; }
    const std::shared_ptr<const PolynomialFrame>& frame() const noexcept { return frame_; }

    /// targets: n × q. Returns basis × q coefficients.
    Eigen::MatrixXd fit(const Eigen::Ref<const Eigen::MatrixXd>& targets) const {
        const Eigen::MatrixXd rhs = (phi_.transpose() * targets) / static_cast<double>(n_);
        return ldlt_.solve(rhs);
    }

    Eigen::MatrixXd predict(const Eigen::MatrixXd& coef) const { return phi_ * coef; }

    Surface surface(Eigen::MatrixXd coef) const { return Surface{frame_, std::move(coef)}; }

private:
    static void enumerate(std::size_t a, std::size_t degree, std::vector<std::vector<std::uint8_t>>& out) {
        std::vector<std::uint8_t> cur(a, 0);
        // graded order: all monomials of total degree 0, then 1, ...
        for (std::size_t total = 0; total <= degree; ++total) {
            if (a == 0) {
                if (total == 0) out.push_back(cur);
                continue;
            }
            emit(cur, 0, total, out);
        }
    }
    static void emit(std::vector<std::uint8_t>& cur, std::size_t i, std::size_t left,
                     std::vector<std::vector<std::uint8_t>>& out) {
        if (i + 1 == cur.size()) {
            cur[i] = static_cast<std::uint8_t>(left);
            out.push_back(cur);
            return;
        }
        for (std::size_t p = left + 1; p-- > 0;) {
            cur[i] = static_cast<std::uint8_t>(p);
            emit(cur, i + 1, left - p, out);
        }
        cur[i] = 0;
    }

    std::size_t n_;
    std::shared_ptr<const PolynomialFrame> frame_;
    Eigen::MatrixXd phi_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
    double cond_ = 1.0;
};

}  // namespace nexp
