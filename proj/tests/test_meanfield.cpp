#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <numeric>

#include "nexp/meanfield.hpp"

using namespace nexp;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::InvalidArgument;
}

FluctuationCoefficients zero_coefficients() {
    FluctuationCoefficients f = mf_models::linear_coefficients(0.0, 0.0, 0.0, 0.0);
    return f;
}

// Covariance ODE of (U, H) with dU = (cU + aH)dt, dH = (a+c)H dt + σdB, integrated by RK4.
double clt_variance_by_ode(double a, double c, double sigma, double s0, double u0, double T) {
    using M = std::array<double, 3>;  // P_uu, P_uh, P_hh
    const double l = a + c;
    auto rhs = [&](const M& p) {
        return M{2 * (c * p[0] + a * p[1]), c * p[1] + a * p[2] + l * p[1], 2 * l * p[2] + sigma * sigma};
    };
    M p{u0 * u0, 0.0, s0 * s0};
    const int n = 20000;
    const double h = T / n;
    for (int i = 0; i < n; ++i) {
        M k1 = rhs(p), q;
        for (int j = 0; j < 3; ++j) q[j] = p[j] + 0.5 * h * k1[j];
        M k2 = rhs(q);
        for (int j = 0; j < 3; ++j) q[j] = p[j] + 0.5 * h * k2[j];
        M k3 = rhs(q);
        for (int j = 0; j < 3; ++j) q[j] = p[j] + h * k3[j];
        M k4 = rhs(q);
        for (int j = 0; j < 3; ++j) p[j] += h / 6 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);
    }
    return p[0];
}

}  // namespace

TEST(Particles, IndependentModelGivesUncorrelatedParticles) {
    const TimeGrid g(1.0, 20);
    const auto run = simulate_particles(mf_models::independent(), 4000, g, 3);
    double m = 0, v = 0, cov = 0;
    for (std::size_t i = 0; i < 4000; ++i) m += run.x(i, 20) / 4000;
    for (std::size_t i = 0; i < 4000; ++i) v += (run.x(i, 20) - m) * (run.x(i, 20) - m) / 4000;
    for (std::size_t i = 0; i < 2000; ++i) cov += (run.x(2 * i, 20) - m) * (run.x(2 * i + 1, 20) - m) / 2000;
    EXPECT_LT(std::abs(cov), 3 * v / std::sqrt(2000.0));
}

TEST(Particles, CrowdMeanStaysAtInitialMean) {
    const TimeGrid g(1.0, 50);
    const std::size_t N = 2000;
    const auto run = simulate_particles(mf_models::mean_reversion_to_crowd(1.0, 0.1, 1.0), N, g, 5);
    for (std::size_t k = 0; k <= 50; ++k) {
        const double sd = std::sqrt(1.0 + 0.01 * g.node(k));
        EXPECT_LT(std::abs(run.features[k].mean), 4 * sd / std::sqrt(static_cast<double>(N))) << "step " << k;
    }
}

TEST(Particles, FixedSeedIsBitwiseReproducible) {
    const TimeGrid g(1.0, 20);
    const auto model = mf_models::linear();
    const auto a = simulate_particles(model, 300, g, 9), b = simulate_particles(model, 300, g, 9);
    EXPECT_EQ(a.X, b.X);
    EXPECT_EQ(a.Y, b.Y);
    EXPECT_EQ(a.Z, b.Z);
    EXPECT_NE(a.X, simulate_particles(model, 300, g, 10).X);
}

TEST(Particles, RecordedFeaturesMatchStoredTrajectories) {
    const TimeGrid g(1.0, 20);
    const auto run = simulate_particles(mf_models::linear(), 500, g, 4);
    for (std::size_t k = 0; k <= 20; ++k) {
        const auto s = run.slice(k);
        EXPECT_EQ(run.features[k], measure_features(s)) << "step " << k;
    }
}

TEST(Particles, PermutedIdsPermuteTrajectories) {
    const TimeGrid g(1.0, 20);
    const std::size_t N = 400;
    const auto model = mf_models::mean_reversion_to_crowd();
    std::vector<std::uint64_t> ids(N);
    std::iota(ids.begin(), ids.end(), 0);
    std::reverse(ids.begin(), ids.begin() + 150);
    std::rotate(ids.begin() + 150, ids.begin() + 170, ids.end());
    const auto base = simulate_particles(model, N, g, 21);
    ParticleOptions po;
    po.particle_ids = &ids;
    const auto perm = run_particles(model, N, g, 21, po);
    for (std::size_t k = 0; k <= 20; ++k) EXPECT_EQ(base.features[k], perm.features[k]);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t k = 0; k <= 20; ++k) ASSERT_EQ(perm.x(i, k), base.x(ids[i], k));
        EXPECT_NEAR(perm.y(i, 0), base.y(ids[i], 0), 1e-9);
    }
}

TEST(Particles, RejectsFewerThanTwoParticles) {
    EXPECT_EQ(kind_of([] { simulate_particles(mf_models::linear(), 1, TimeGrid(1.0, 5), 1); }), ErrorKind::InvalidArgument);
}

TEST(Particles, DivergentDriftIsReported) {
    auto m = mf_models::linear();
    m.drift = [](double, double x, const MeasureFeatures&) { return x * x * x * 1e3; };
    EXPECT_EQ(kind_of([&] { simulate_particles(m, 50, TimeGrid(1.0, 50), 1); }), ErrorKind::SimulationDiverged);
}

TEST(McKeanVlasov, NoMeasureDependenceConvergesInOneIteration) {
    const auto r = solve_mckean_vlasov(mf_models::independent(), 1000, TimeGrid(1.0, 20), 2);
    EXPECT_EQ(r.iterations, 1u);
    EXPECT_EQ(r.residuals.front(), 0.0);
    EXPECT_TRUE(r.representative.has_backward());
}

TEST(McKeanVlasov, LinearMeanFlowMatchesMomentOde) {
    const TimeGrid g(1.0, 100);
    const auto r = solve_mckean_vlasov(mf_models::linear(0.5, 0.5, 0.3, 1.0, 0.2), 1 << 14, g, 6);
    EXPECT_NEAR(r.flow.back().mean, std::exp(1.0), 0.01 * std::exp(1.0));
    ASSERT_GE(r.residuals.size(), 2u);
    for (std::size_t i = 1; i < r.residuals.size(); ++i) EXPECT_LE(r.residuals[i], 0.9 * r.residuals[i - 1]);
    EXPECT_LE(r.residuals.back(), 1e-10);
}

TEST(McKeanVlasov, ReportsResidualTraceWithoutFixedPoint) {
    try {
        solve_mckean_vlasov(mf_models::linear(), 500, TimeGrid(1.0, 20), 2, {.max_iters = 2, .tol = 1e-14});
        FAIL() << "expected no-fixed-point";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoFixedPoint);
        EXPECT_NE(std::string(e.what()).find("residuals"), std::string::npos);
    }
}

TEST(McKeanVlasov, RejectsSmallCloud) {
    EXPECT_EQ(kind_of([] { solve_mckean_vlasov(mf_models::linear(), 99, TimeGrid(1.0, 5), 1); }), ErrorKind::InvalidArgument);
}

TEST(McKeanVlasov, SortedSampleModelsIncludeWassersteinResidual) {
    auto m = mf_models::independent();
    m.uses_sorted = true;
    m.drift = [](double, double x, const MeasureFeatures& mu) { return 0.1 * ((*mu.sorted)[mu.sorted->size() / 2] - x); };
    const auto r = solve_mckean_vlasov(m, 400, TimeGrid(1.0, 20), 3);
    EXPECT_LE(r.residuals.back(), 1e-10);
    EXPECT_TRUE(r.flow.back().sorted);
}

TEST(Lln, NoInteractionErrorIsExactlyZero) {
    const auto t = lln_experiment(mf_models::independent(), {16, 64}, TimeGrid(1.0, 20), 3, 4, {}, {}, 1000);
    for (const auto& r : t.rows) EXPECT_EQ(r.total, 0.0);
    EXPECT_FALSE(t.slope.has_value());
}

TEST(Lln, ErrorsDecreaseOnEveryInteractingModel) {
    const TimeGrid g(1.0, 25);
    for (const auto& m : {mf_models::linear(), mf_models::mean_reversion_to_crowd(), mf_models::linear_gaussian_clt()}) {
        const auto t = lln_experiment(m, {16, 64, 256}, g, 10, 8, {}, {}, 1 << 14);
        for (std::size_t i = 1; i < t.rows.size(); ++i) EXPECT_LT(t.rows[i].total, t.rows[i - 1].total) << m.name;
        ASSERT_TRUE(t.slope.has_value());
        EXPECT_LT(*t.slope, 0.0) << m.name;
    }
}

TEST(Lln, RejectsBadParticleLists) {
    const TimeGrid g(1.0, 5);
    EXPECT_EQ(kind_of([&] { lln_experiment(mf_models::linear(), {16}, g, 2, 1); }), ErrorKind::InvalidArgument);
    EXPECT_EQ(kind_of([&] { lln_experiment(mf_models::linear(), {64, 16}, g, 2, 1); }), ErrorKind::InvalidArgument);
}

TEST(Lln, LogLogSlopeOfPowerLaw) {
    const auto s = loglog_slope({16, 64, 256}, {1.0 / 16, 1.0 / 64, 1.0 / 256});
    ASSERT_TRUE(s.has_value());
    EXPECT_NEAR(*s, -1.0, 1e-12);
}

TEST(Clt, NoInteractionFluctuationsVanish) {
    const auto t = clt_experiment(mf_models::independent(), {16, 64}, TimeGrid(1.0, 20), 2, 3, 1000);
    for (const auto& r : t.rows) {
        EXPECT_EQ(r.var_u, 0.0);
        EXPECT_EQ(r.var_v, 0.0);
    }
}

TEST(Clt, AnalyticVarianceSolvesCovarianceOde) {
    for (auto [a, c, s, s0, u0] : {std::array{0.5, -0.5, 0.4, 0.3, 1.0}, std::array{1.0, 0.0, 0.5, 0.5, 0.5},
                                   std::array{0.3, 0.4, 0.2, 0.1, 0.7}}) {
        EXPECT_NEAR(mf_models::linear_clt_variance(a, c, s, s0, u0, 1.0), clt_variance_by_ode(a, c, s, s0, u0, 1.0), 1e-9);
    }
}

// Where the empirical-measure noise dominates, the empirical fluctuations follow
// the full limit variance while the fluctuation system (with only the E′ terms)
// keeps u0²e^{2cT}. The empirical-measure part is common to all particles of a
// trial, so the variance needs many trials rather than many particles.
TEST(Clt, FluctuationSystemOmitsEmpiricalMeasureNoise) {
    const double a = 1.0, c = 0.0, sigma = 0.5, s0 = 0.5, u0 = 0.5;
    const TimeGrid g(1.0, 40);
    const auto m = mf_models::linear_gaussian_clt(a, c, sigma, 1.0, s0, u0);
    const auto t = clt_experiment(m, {32, 128}, g, 200, 17, 1 << 14);
    const double vstar = mf_models::linear_clt_variance(a, c, sigma, s0, u0, 1.0);
    EXPECT_NEAR(t.rows.back().var_u, vstar, 0.15 * vstar);

    const auto mv = solve_mckean_vlasov(m, 6000, g, 5);
    FluctuationOptions fo;
    fo.u0 = [u0](double z) { return u0 * z; };
    fo.n_paths = 4000;
    fo.n_copy = 1000;
    const auto fl = solve_fluctuation_system(mf_models::linear_coefficients(a, c), mv, fo);
    EXPECT_NEAR(fl.var_u_T, u0 * u0, 0.1 * u0 * u0);
    EXPECT_GT(vstar, 3 * u0 * u0);
}

TEST(Fluctuation, LinearDriftGrowsExponentially) {
    const double a = 0.8;
    const TimeGrid g(1.0, 50);
    const auto mv = solve_mckean_vlasov(mf_models::independent(), 600, g, 1);
    auto f = zero_coefficients();
    f.dx_b = [a](double, double, const MeasureFeatures&) { return a; };
    FluctuationOptions fo;
    fo.u0 = [](double z) { return z; };
    fo.n_paths = 400;
    fo.n_copy = 100;
    const auto r = solve_fluctuation_system(f, mv, fo);
    const double growth = std::pow(1 + a * g.dt(), 50.0);
    for (std::size_t p = 0; p < 400; ++p) {
        EXPECT_NEAR(r.u(p, 50), r.u(p, 0) * growth, 1e-12 * (1 + std::abs(r.u(p, 0))));
        EXPECT_NEAR(r.u(p, 50), r.u(p, 0) * std::exp(a), 0.01 * std::abs(r.u(p, 0) * std::exp(a)) + 1e-12);
    }
}

TEST(Fluctuation, ZeroCoefficientsGiveMartingaleTerminal) {
    const TimeGrid g(1.0, 20);
    const auto mv = solve_mckean_vlasov(mf_models::linear(), 800, g, 2);
    FluctuationOptions fo;
    fo.u0 = [](double z) { return 0.3 + z; };
    fo.n_paths = 500;
    fo.n_copy = 200;
    const auto r = solve_fluctuation_system(zero_coefficients(), mv, fo);
    double m0 = 0;
    for (std::size_t p = 0; p < 500; ++p) {
        for (std::size_t k = 0; k <= 20; ++k) ASSERT_EQ(r.u(p, k), r.u(p, 0));
        EXPECT_EQ(r.v(p, 20), r.u(p, 0));
        m0 += r.u(p, 0) / 500;
    }
    EXPECT_NEAR(r.v0, m0, 1e-12);
}

TEST(Fluctuation, OutputsScaleWithInitialFluctuations) {
    const TimeGrid g(1.0, 20);
    const auto mv = solve_mckean_vlasov(mf_models::linear(), 800, g, 2);
    const auto coef = mf_models::linear_coefficients(0.5, 0.5, 0.5, 0.2);
    FluctuationOptions fo;
    fo.n_paths = 500;
    fo.n_copy = 200;
    fo.u0 = [](double z) { return z; };
    const auto one = solve_fluctuation_system(coef, mv, fo);
    fo.u0 = [](double z) { return 2 * z; };
    const auto two = solve_fluctuation_system(coef, mv, fo);
    for (std::size_t i = 0; i < one.U.size(); ++i) EXPECT_EQ(two.U[i], 2 * one.U[i]);
    for (std::size_t i = 0; i < one.V.size(); ++i) EXPECT_NEAR(two.V[i], 2 * one.V[i], 1e-9 * (1 + std::abs(one.V[i])));
    for (std::size_t i = 0; i < one.Zc.size(); ++i) EXPECT_NEAR(two.Zc[i], 2 * one.Zc[i], 1e-9 * (1 + std::abs(one.Zc[i])));
}

TEST(Fluctuation, MissingCallbackIsNamed) {
    const auto mv = solve_mckean_vlasov(mf_models::independent(), 300, TimeGrid(1.0, 5), 1);
    auto f = zero_coefficients();
    f.dmu_f = nullptr;
    FluctuationOptions fo;
    fo.u0 = [](double z) { return z; };
    fo.n_paths = 100;
    fo.n_copy = 50;
    try {
        solve_fluctuation_system(f, mv, fo);
        FAIL() << "expected incomplete-coefficients";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::IncompleteCoefficients);
        EXPECT_NE(std::string(e.what()).find("D_mu f"), std::string::npos);
    }
    fo.u0 = nullptr;
    EXPECT_EQ(kind_of([&] { solve_fluctuation_system(zero_coefficients(), mv, fo); }), ErrorKind::IncompleteCoefficients);
}

TEST(Fluctuation, RejectsOversizedEnsembles) {
    const auto mv = solve_mckean_vlasov(mf_models::independent(), 300, TimeGrid(1.0, 5), 1);
    FluctuationOptions fo;
    fo.u0 = [](double z) { return z; };
    fo.n_paths = 250;
    fo.n_copy = 100;
    EXPECT_EQ(kind_of([&] { solve_fluctuation_system(zero_coefficients(), mv, fo); }), ErrorKind::InvalidArgument);
}

TEST(MeanFieldRegistry, BuiltInModelsByName) {
    for (const char* n : {"independent", "mean-reversion-to-crowd", "linear-mean-field", "linear-gaussian-clt"})
        EXPECT_EQ(mean_field_model(n).name, n);
    EXPECT_EQ(kind_of([] { mean_field_model("nope"); }), ErrorKind::InvalidArgument);
}
