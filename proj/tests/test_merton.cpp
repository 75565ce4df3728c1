#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "nexp/merton.hpp"

using namespace nexp;

namespace {

struct OracleError {
    double value = 0, policy = 0;
};

OracleError classical_error(const HjbGrid& g) {
    const auto cm = classical_merton(g.params);
    OracleError e;
    for (std::size_t n = 0; n <= g.n_time; ++n)
        for (std::size_t j = 1; j < g.J; ++j) {
            e.value = std::max(e.value, std::abs(g.value(n, j) / cm.value(g.t(n), g.x(j)) - 1));
            e.policy = std::max(e.policy, std::abs(g.policy(n, j) / cm.pi - 1));
        }
    return e;
}

std::vector<std::pair<double, double>> observation_states() {
    std::vector<std::pair<double, double>> st;
    for (double t : {0.0, 0.25, 0.5, 0.75})
        for (double x : {0.5, 0.8, 1.0, 1.3, 2.0}) st.emplace_back(t, x);
    return st;
}

}  // namespace

TEST(Merton, ClassicalAllocation) {
    const auto m = classical_merton({0.08, 0.02, 0.2, 0.5, 1.0});
    EXPECT_NEAR(m.pi, 3.0, 1e-12);
    EXPECT_EQ(m.value(1.0, 2.0), std::pow(2.0, 0.5) / 0.5);
    EXPECT_NEAR(m.rho, 0.5 * (0.02 + 0.0036 / (2 * 0.04 * 0.5)), 1e-15);
}

TEST(Merton, InvalidMarketsAreRejected) {
    for (MarketParams p : {MarketParams{0.02, 0.02, 0.2, 0.5, 1}, MarketParams{0.08, 0.02, 0.2, 0.0, 1},
                           MarketParams{0.08, 0.02, 0.2, 1.0, 1}, MarketParams{0.08, 0.02, 0.0, 0.5, 1}}) {
        try {
            classical_merton(p);
            ADD_FAILURE() << "accepted invalid market";
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
        }
    }
}

TEST(Hjb, TerminalValueIsExactUtility) {
    const MarketParams p;
    for (double th : {0.0, 0.5}) {
        const auto g = solve_hjb(p, th);
        for (std::size_t j = 0; j <= g.J; ++j) EXPECT_EQ(g.value(g.n_time, j), std::pow(g.x(j), 0.5) / 0.5);
    }
}

TEST(Hjb, ClassicalCaseMatchesClosedForm) {
    for (double gamma : {0.5, -1.0, 0.3}) {
        MarketParams p;
        p.gamma = gamma;
        const auto g = solve_hjb(p, 0.0);
        const auto e = classical_error(g);
        EXPECT_LT(e.value, 0.005) << gamma;
        EXPECT_LT(e.policy, 0.02) << gamma;
    }
}

TEST(Hjb, ClassicalPolicyIsThreeEverywhere) {
    const auto g = solve_hjb(MarketParams{}, 0.0);
    for (std::size_t n = 0; n <= g.n_time; n += 7)
        for (std::size_t j = 1; j < g.J; ++j) EXPECT_NEAR(g.policy(n, j), 3.0, 0.06);
}

// Upwinded drift and Euler time steps are first order; π uses central
// differences and converges at second order.
TEST(Hjb, ErrorHalvesWhenBothResolutionsDouble) {
    const MarketParams p;
    HjbGridSpec s;
    std::vector<OracleError> e;
    for (std::size_t m : {1, 2, 4}) {
        s.J = 100 * m;
        s.n_time_steps = 2000 * m;
        e.push_back(classical_error(solve_hjb(p, 0.0, s)));
    }
    for (std::size_t i = 0; i + 1 < e.size(); ++i) {
        const double r = e[i].value / e[i + 1].value;
        EXPECT_GT(r, 1.5);
        EXPECT_LT(r, 2.5);
        EXPECT_GT(e[i].policy / e[i + 1].policy, 1.5);
    }
}

TEST(Hjb, WiderDomainDoesNotMoveInterior) {
    const MarketParams p;
    HjbGridSpec a;
    const auto ga = solve_hjb(p, 0.5, a);
    HjbGridSpec b = a;
    b.J = 2 * a.J;
    b.ell_lo = ga.ell(0) - (ga.ell(a.J) - ga.ell(0)) / 2;
    b.ell_hi = ga.ell(a.J) + (ga.ell(a.J) - ga.ell(0)) / 2;
    const auto gb = solve_hjb(p, 0.5, b);
    const auto sa = extract_policy(ga), sb = extract_policy(gb);
    for (double x : {0.5, 1.0, 2.0}) {
        EXPECT_NEAR(sa.value(0, x).pi, sb.value(0, x).pi, 1e-3 * std::abs(sa.value(0, x).pi));
        EXPECT_NEAR(sa.at(0, x).pi, sb.at(0, x).pi, 0.01 * sa.at(0, x).pi);
    }
}

TEST(Hjb, ReportsRequiredStepsOnUnstableGrid) {
    HjbGridSpec s;
    s.n_time_steps = 20;
    try {
        solve_hjb(MarketParams{}, 0.5, s);
        FAIL() << "expected unstable-grid";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnstableGrid);
        EXPECT_NE(std::string(e.what()).find("time steps"), std::string::npos);
    }
}

TEST(Hjb, RisklessStrategyGrowsAtTheRate) {
    // π = 0 makes wealth deterministic, so V = U(x)·e^{γrT} whatever θ is
    const MarketParams p;
    HjbGridSpec s;
    s.fixed_fraction = 0.0;
    s.n_time_steps = 400;
    const auto g = solve_hjb(p, 0.7, s);
    for (std::size_t j = 1; j < g.J; ++j)
        EXPECT_NEAR(g.value(0, j), p.utility(g.x(j)) * std::exp(p.gamma * p.r * p.T), 1e-3 * g.value(0, j));
}

TEST(Hjb, AmbiguityMakesEveryNodeMoreCautious) {
    const MarketParams p;
    const double pc = classical_merton(p).pi;
    const auto g = solve_hjb(p, 0.5);
    double mx = 0;
    for (std::size_t n = 0; n <= g.n_time; ++n)
        for (std::size_t j = 1; j < g.J; ++j) mx = std::max(mx, g.policy(n, j));
    EXPECT_LT(mx, pc);
}

TEST(Hjb, DenominatorNegativeNearMaturity) {
    const auto g = solve_hjb(MarketParams{}, 0.5);
    const std::size_t n = g.n_time - 1;
    for (std::size_t j = 1; j < g.J; ++j) {
        EXPECT_TRUE(std::isfinite(g.policy(n, j)));
        EXPECT_LT(g.Vxx[g.at(n, j)] - 0.5 * g.Vx[g.at(n, j)] * g.Vx[g.at(n, j)], 0.0);
    }
}

TEST(Policy, PolicyDecreasesInTheta) {
    const MarketParams p;
    HjbGridSpec s;
    s.n_time_steps = solve_hjb(p, 0.5, s).n_time;
    const auto a = solve_hjb(p, 0.2, s), b = solve_hjb(p, 0.5, s);
    for (std::size_t n = 0; n <= a.n_time; ++n)
        for (std::size_t j = 1; j < a.J; ++j) ASSERT_GT(a.policy(n, j), b.policy(n, j)) << n << "," << j;
}

TEST(Policy, InterpolationHitsNodesAndClampsOutside) {
    const auto g = solve_hjb(MarketParams{}, 0.5);
    const auto s = extract_policy(g);
    const auto q = s.at(g.t(10), g.x(37));
    EXPECT_FALSE(q.clamped);
    EXPECT_NEAR(q.pi, g.policy(10, 37), 1e-12);
    const double mid = s.at(0.5 * (g.t(10) + g.t(11)), g.x(37)).pi;
    EXPECT_NEAR(mid, 0.5 * (g.policy(10, 37) + g.policy(11, 37)), 1e-12);
    const auto far = s.at(0.0, 1e9);
    EXPECT_TRUE(far.clamped);
    EXPECT_NEAR(far.pi, g.policy(0, g.J), 1e-12);
    EXPECT_TRUE(s.at(-1.0, 1.0).clamped);
}

TEST(Ambiguity, CautionAndMonotonicityOnStandardMarket) {
    const auto rep = verify_ambiguity_properties(MarketParams{}, {0, 0.25, 0.5, 1.0});
    EXPECT_TRUE(rep.caution_holds);
    EXPECT_TRUE(rep.monotone_holds);
    EXPECT_EQ(rep.thetas.size(), 4u);
    for (std::size_t i = 1; i < rep.thetas.size(); ++i) EXPECT_LT(rep.thetas[i].max_pi, rep.pi_classical);
}

TEST(Ambiguity, ClassicalOnlyListIsVacuous) {
    const auto rep = verify_ambiguity_properties(MarketParams{}, {0});
    EXPECT_TRUE(rep.caution_holds);
    EXPECT_TRUE(rep.monotone_holds);
    EXPECT_NEAR(rep.thetas[0].max_pi, rep.pi_classical, 1e-3);
    EXPECT_EQ(rep.thetas[0].wealth_profile, "flat");
}

TEST(Ambiguity, WealthProfileIsReported) {
    const auto rep = verify_ambiguity_properties(MarketParams{}, {0.5});
    EXPECT_EQ(rep.thetas[0].wealth_profile, "decreasing");
    EXPECT_TRUE(rep.thetas[0].wealth_profile_matches_heuristic);
    MarketParams p;
    p.gamma = -1.0;
    const auto neg = verify_ambiguity_properties(p, {0.5});
    EXPECT_FALSE(neg.thetas[0].wealth_profile.empty());
}

TEST(Ambiguity, RejectsUnorderedThetas) {
    EXPECT_THROW(verify_ambiguity_properties(MarketParams{}, {0.5, 0.2}), Error);
    EXPECT_THROW(verify_ambiguity_properties(MarketParams{}, {-0.1, 0.2}), Error);
    EXPECT_THROW(verify_ambiguity_properties(MarketParams{}, {}), Error);
}

TEST(Calibration, RecoversThetaFromOwnSolves) {
    const MarketParams p;
    for (double th : {0.1, 0.4, 0.8}) {
        const auto obs = synthetic_observations(p, th, observation_states());
        const auto r = calibrate_theta(p, obs);
        EXPECT_NEAR(r.theta, th, 0.03 * th);
        EXPECT_FALSE(r.used_grid_scan);
        EXPECT_FALSE(r.curve.empty());
    }
}

TEST(Calibration, ClassicalObservationsGiveNearZeroTheta) {
    const MarketParams p;
    const auto obs = synthetic_observations(p, 0.0, observation_states());
    EXPECT_LT(calibrate_theta(p, obs).theta, 0.02);
}

TEST(Calibration, ObservationBetweenPoliciesHasInteriorMinimum) {
    const MarketParams p;
    HjbGridSpec s;
    s.n_time_steps = solve_hjb(p, 1.0, s).n_time;
    const double lo = synthetic_observations(p, 0.2, {{0.0, 1.0}}, s)[0].allocation;
    const double hi = synthetic_observations(p, 0.6, {{0.0, 1.0}}, s)[0].allocation;
    const auto r = calibrate_theta(p, {{0.0, 1.0, 0.5 * (lo + hi)}}, s);
    EXPECT_GT(r.theta, 0.2);
    EXPECT_LT(r.theta, 0.6);
}

TEST(Calibration, NonUnimodalLossFallsBackToScan) {
    // two observations pulling toward different θ: the bracketing check may or
    // may not fire, but the answer must be the best θ among those evaluated
    const MarketParams p;
    const auto a = synthetic_observations(p, 0.1, {{0.0, 0.5}});
    const auto b = synthetic_observations(p, 0.9, {{0.0, 2.0}});
    const auto r = calibrate_theta(p, {a[0], b[0]});
    for (const auto& [th, v] : r.curve) EXPECT_GE(v, r.loss - 1e-15);
    if (r.used_grid_scan) {
        EXPECT_NE(r.warning.find("64-point"), std::string::npos);
    }
}

TEST(Calibration, RejectsEmptyObservationsAndBadRange) {
    EXPECT_THROW(calibrate_theta(MarketParams{}, {}), Error);
    EXPECT_THROW(calibrate_theta(MarketParams{}, {{0, 1, 1}}, {}, {1.0, 0.5, 1e-4}), Error);
}

TEST(Calibration, ObservationsCsvRoundTrip) {
    const auto path = (std::filesystem::temp_directory_path() / "nexp_obs_roundtrip.csv").string();
    const std::vector<AllocationObservation> obs{{0.0, 1.0, 2.5}, {0.5, 1.7, 3.25}};
    write_observations_csv(obs, path);
    const auto back = read_observations_csv(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].x, 1.7);
    EXPECT_EQ(back[1].allocation, 3.25);
    std::remove(path.c_str());
}

TEST(Calibration, HjbCsvHasOneRowPerNode) {
    HjbGridSpec s;
    s.J = 20;
    const auto g = solve_hjb(MarketParams{}, 0.5, s);
    const auto path = (std::filesystem::temp_directory_path() / "nexp_hjb.csv").string();
    write_hjb_csv(g, path);
    std::ifstream is(path);
    std::size_t lines = 0;
    for (std::string l; std::getline(is, l);) ++lines;
    EXPECT_EQ(lines, 1 + (g.n_time + 1) * (g.J + 1));
    std::remove(path.c_str());
}

TEST(CrossCheck, PdeBsdeAndQuadratureAgreeForFixedStrategy) {
    const MarketParams p;
    for (double th : {0.0, 0.5, 1.0}) {
        const auto c = cross_check_fixed_strategy(p, th, 1.5, 1.0, 20000, 50, 3);
        EXPECT_NEAR(c.pde, c.quadrature, 1e-3 * std::abs(c.quadrature)) << th;
        EXPECT_NEAR(c.bsde, c.quadrature, 4 * c.bsde_se) << th;
    }
}
