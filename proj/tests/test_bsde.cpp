#include <gtest/gtest.h>

#include <cmath>

#include "nexp/bsde.hpp"
#include "nexp/oracles.hpp"

using namespace nexp;

namespace {

BsdeProblem brownian_problem(std::size_t N, std::size_t K, std::uint64_t seed, DriverPtr f, Terminal xi = terminals::brownian(),
                             double T = 1.0) {
    auto g = make_time_grid(T, K);
    return make_problem(models::brownian(1), g, share(sample_brownian(g, N, 1, seed)), std::move(xi), std::move(f));
}

std::vector<double> terminal_w(const BsdeProblem& pb) {
    std::vector<double> w(pb.paths->n_paths());
    for (std::size_t p = 0; p < w.size(); ++p) w[p] = pb.paths->bundle().terminal(p);
    return w;
}

}  // namespace

TEST(Oracle, ZeroIsArithmeticMean) {
    std::vector<double> xi{1, 2, 3};
    EXPECT_EQ(closed_form_oracle(OracleSpec::zero(), xi, 1.0), 2.0);
}

TEST(Oracle, EntropicSmallThetaApproachesMean) {
    SeqRng rng(4);
    std::vector<double> xi(20000);
    double m = 0;
    for (auto& v : xi) m += (v = rng.normal());
    m /= xi.size();
    EXPECT_NEAR(closed_form_oracle(OracleSpec::entropic(1e-4), xi, 1.0), m, 1e-3);
}

TEST(Oracle, EntropicGaussianMgf) {
    SeqRng rng(8);
    std::vector<double> xi(1000000);
    for (auto& v : xi) v = rng.normal();
    EXPECT_NEAR(closed_form_oracle(OracleSpec::entropic(1.0), xi, 1.0), -0.5, 0.0025);
}

TEST(Oracle, EntropicSurvivesHugeExponents) {
    // naive exp(−θξ) would overflow at ξ = −1000
    std::vector<double> xi{-1000.0, -1000.0};
    EXPECT_NEAR(closed_form_oracle(OracleSpec::entropic(1.0), xi, 1.0), -1000.0, 1e-12);
    std::vector<double> bad{INFINITY};
    try {
        closed_form_oracle(OracleSpec::entropic(1.0), bad, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::OracleOverflow);
    }
    EXPECT_THROW(closed_form_oracle(OracleSpec::entropic(0.0), xi, 1.0), Error);
    EXPECT_THROW(closed_form_oracle(OracleSpec::zero(), std::vector<double>{}, 1.0), Error);
}

TEST(Oracle, LinearReweightsTowardDrift) {
    auto g = make_time_grid(1.0, 1);
    auto b = sample_brownian(g, 200000, 1, 5);
    std::vector<double> w(b.n_paths());
    for (std::size_t p = 0; p < w.size(); ++p) w[p] = b.terminal(p);
    // E^Q[W_T] = b·T under the tilted measure
    EXPECT_NEAR(closed_form_oracle(OracleSpec::linear({0.3}), w, 1.0, w), 0.3, 0.01);
    EXPECT_THROW(closed_form_oracle(OracleSpec::linear({0.3}), w, 1.0), Error);
}

TEST(Bsde, TerminalAnchoring) {
    auto pb = brownian_problem(2000, 10, 1, entropic_driver(1.0));
    auto sol = solve_bsde_lsmc(pb);
    for (std::size_t p = 0; p < 2000; ++p) EXPECT_EQ(sol.Y(p, 10), pb.paths->bundle().terminal(p));
    for (std::size_t p = 0; p < 2000; ++p)
        for (std::size_t k = 0; k <= 10; ++k) ASSERT_TRUE(std::isfinite(sol.Y(p, k)));
}

TEST(Bsde, ZeroDriverMartingale) {
    auto pb = brownian_problem(20000, 20, 2, std::make_shared<ZeroDriver>());
    auto sol = solve_bsde_lsmc(pb);
    EXPECT_NEAR(sol.y0(), 0.0, 3 * sol.y0_standard_error());
    // the constant column makes the step-0 value the sample mean of ξ
    EXPECT_NEAR(sol.y0(), closed_form_oracle(OracleSpec::zero(), terminal_w(pb), 1.0), 1e-12);
    // Z ≈ 1 for ξ = W_T
    EXPECT_NEAR(sol.diagnostics()[5].mean_norm_z, 1.0, 0.05);
}

TEST(Bsde, LinearDriverMatchesClosedFormAndOracle) {
    for (std::size_t N : {1000u, 10000u}) {
        auto pb = brownian_problem(N, 20, 3 + N, std::make_shared<LinearZDriver>(std::vector<double>{0.3}));
        auto sol = solve_bsde_lsmc(pb);
        const auto w = terminal_w(pb);
        const double oracle = closed_form_oracle(OracleSpec::linear({0.3}), w, 1.0, w);
        EXPECT_NEAR(sol.y0(), oracle, 3 * sol.y0_standard_error()) << N;
        EXPECT_NEAR(sol.y0(), 0.3, 3 * sol.y0_standard_error()) << N;
    }
}

TEST(Bsde, EntropicMatchesOracle) {
    for (std::size_t N : {1000u, 10000u}) {
        auto pb = brownian_problem(N, 20, 7 + N, entropic_driver(1.0));
        auto sol = solve_bsde_lsmc(pb);
        const double oracle = closed_form_oracle(OracleSpec::entropic(1.0), terminal_w(pb), 1.0);
        EXPECT_NEAR(sol.y0(), oracle, 3 * sol.y0_standard_error()) << N;
        EXPECT_NEAR(sol.y0(), -0.5, 3 * sol.y0_standard_error()) << N;
    }
}

TEST(Bsde, GridRefinementConverges) {
    // f = −y on ξ = X_T with X = 1 + W: Y₀ = e^{−T}·E[1+W_T] = e^{−1}; explicit error shrinks with Δt
    auto g_model = models::brownian(1, 1.0);
    auto run = [&](std::size_t K) {
        auto g = make_time_grid(1.0, K);
        auto pb = make_problem(g_model, g, share(sample_brownian(g, 4000, 1, 99)), terminals::state(0),
                               std::make_shared<AffineDriver>(0.0, -1.0, std::vector<double>{0.0}));
        LsmcOptions o;
        o.inner_picard_iters = 0;
        return solve_bsde_lsmc(pb, {}, o).y0();
    };
    const double y10 = run(10), y20 = run(20), y40 = run(40);
    EXPECT_LT(std::abs(y20 - y40), std::abs(y10 - y20));
}

TEST(Bsde, SingularRegressionReported) {
    // two perfectly collinear state coordinates
    ForwardModel m = models::brownian(1);
    m.state_dim = 2;
    m.x0 = {0.0, 0.0};
    m.diffusion = [](double, std::span<const double>, const Coupling&, std::span<double> out) {
        out[0] = 1.0;
        out[1] = 2.0;
    };
    m.drift = [](double, std::span<const double>, const Coupling&, std::span<double> out) { out[0] = out[1] = 0.0; };
    auto g = make_time_grid(1.0, 4);
    auto pb = make_problem(m, g, share(sample_brownian(g, 500, 1, 1)), terminals::state(0), std::make_shared<ZeroDriver>());
    try {
        solve_bsde_lsmc(pb);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SingularRegression);
        EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos);
    }
}

TEST(Bsde, DivergenceReported) {
    auto f = std::make_shared<FunctionDriver>(
        [](double, std::span<const double>, double y, std::span<const double>) { return 1e200 * (1 + y * y); }, nullptr,
        "explosive");
    auto pb = brownian_problem(200, 5, 1, f);
    try {
        solve_bsde_lsmc(pb);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SolverDiverged);
    }
}

TEST(Bsde, DriverDimensionMismatchRejected) {
    auto g = make_time_grid(1.0, 4);
    EXPECT_THROW(make_problem(models::brownian(1), g, share(sample_brownian(g, 100, 1, 1)), terminals::brownian(),
                              std::make_shared<LinearZDriver>(std::vector<double>{0.1, 0.2})),
                 Error);
}

TEST(Bsde, PicardItersMatterOnlyForYDependence) {
    auto pb = brownian_problem(3000, 10, 4, entropic_driver(1.0));
    LsmcOptions a, b;
    a.inner_picard_iters = 0;
    b.inner_picard_iters = 5;
    EXPECT_EQ(solve_bsde_lsmc(pb, {}, a).y0(), solve_bsde_lsmc(pb, {}, b).y0());
}

TEST(Bsde, DeterministicAcrossThreadCounts) {
    auto pb = brownian_problem(5000, 10, 6, entropic_driver(0.7));
    const double a = solve_bsde_lsmc(pb).y0();
    set_thread_cap(4);
    const double b = solve_bsde_lsmc(pb).y0();
    set_thread_cap(1);
    EXPECT_EQ(a, b);
}

TEST(Bsde, ZClipCountsAndBounds) {
    auto pb = brownian_problem(3000, 10, 6, std::make_shared<ZeroDriver>());
    LsmcOptions o;
    o.z_clip = ZClip::absolute(0.5);
    auto sol = solve_bsde_lsmc(pb, {}, o);
    EXPECT_GT(sol.total_clip_count(), 0u);
    for (std::size_t p = 0; p < 3000; ++p) EXPECT_LE(std::abs(sol.Z(p, 3)[0]), 0.5);
    o.z_clip = ZClip::off();
    EXPECT_EQ(solve_bsde_lsmc(pb, {}, o).total_clip_count(), 0u);
}

TEST(Bsde, ControlVariateKeepsMeanIdentityAndCutsNoise) {
    auto pb = brownian_problem(4000, 10, 7, std::make_shared<ZeroDriver>());
    LsmcOptions o;
    o.z_control_variate = true;
    auto plain = solve_bsde_lsmc(pb);
    auto cv = solve_bsde_lsmc(pb, {}, o);
    double m = 0;
    for (double v : cv.fields().path_value) m += v;
    EXPECT_NEAR(cv.y0(), m / 4000.0, 1e-12);
    EXPECT_NEAR(cv.y0(), 0.0, 3 * cv.y0_standard_error() + 1e-12);
    // only the last step runs without z̃, leaving variance Δt = 0.1 of the plain 1
    EXPECT_LT(cv.y0_standard_error(), 0.4 * plain.y0_standard_error());
    for (std::size_t p = 0; p < 4000; ++p) EXPECT_EQ(cv.Y(p, 10), plain.Y(p, 10));
}

TEST(Bsde, ControlVariateIsUnbiasedUnderStrongNonlinearity) {
    // f = −(θ/2)z², ξ = 2W_T, θ = 1.5: Y₀ = −3; averaged over independent bundles
    const int reps = 12;
    double s1 = 0, s2 = 0, sp = 0;
    LsmcOptions o;
    o.z_control_variate = true;
    for (int r = 0; r < reps; ++r) {
        auto pb = brownian_problem(4000, 10, 500 + static_cast<std::uint64_t>(r), entropic_driver(1.5), terminals::brownian(0, 2.0));
        const double e = solve_bsde_lsmc(pb, {}, o).y0() + 3.0;
        const double ep = solve_bsde_lsmc(pb).y0() + 3.0;
        s1 += e;
        s2 += e * e;
        sp += ep * ep;
    }
    const double mean = s1 / reps, sd = std::sqrt(s2 / reps - mean * mean);
    EXPECT_LE(std::abs(mean), 3 * sd / std::sqrt(static_cast<double>(reps)));
    EXPECT_LT(s2, sp);  // smaller mean-square error than the plain estimator
}

TEST(Truncation, InactiveClampIsIdentical) {
    auto pb = brownian_problem(4000, 10, 9, entropic_driver(1.0));
    auto full = solve_bsde_lsmc(pb);
    auto t = solve_truncated(pb, 2.0 * full.max_abs_y() + 1.0);
    EXPECT_EQ(t.y0(), full.y0());
}

TEST(Truncation, TinyLevelDominates) {
    auto pb = brownian_problem(4000, 10, 9, std::make_shared<ZeroDriver>());
    EXPECT_LE(std::abs(solve_truncated(pb, 0.01).y0()), 0.01);
    EXPECT_THROW(solve_truncated(pb, 0.0), Error);
}

TEST(Truncation, DistanceShrinksWithLevel) {
    auto pb = brownian_problem(20000, 20, 10, std::make_shared<ZeroDriver>());
    const double inf = solve_bsde_lsmc(pb).y0();
    double prev = INFINITY;
    for (double k : {0.5, 1.0, 2.0, 4.0, 8.0}) {
        const double dist = std::abs(solve_truncated(pb, k).y0() - inf);
        EXPECT_LE(dist, prev) << k;
        prev = dist;
    }
}

TEST(BsdeSolution, SurfacesAndCsv) {
    auto pb = brownian_problem(4000, 10, 2, std::make_shared<LinearZDriver>(std::vector<double>{0.3}), terminals::state(0));
    auto sol = solve_bsde_lsmc(pb);
    std::vector<double> x{0.4};
    // Y_t = x + 0.3(T − t)
    EXPECT_NEAR(sol.y_surface(5, x), 0.4 + 0.15, 0.05);
    EXPECT_EQ(sol.y_surface(10, x), 0.4);
    std::vector<double> z(1);
    sol.z_surface(5, x, z);
    EXPECT_NEAR(z[0], 1.0, 0.05);
    const std::string path = ::testing::TempDir() + "sol.csv";
    sol.write_csv(path);
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "step,t,mean_y,sd_y,mean_norm_z,clip_count,condition");
    std::remove(path.c_str());
}
