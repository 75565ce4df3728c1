#include <gtest/gtest.h>

#include <cmath>

#include "nexp/net_checks.hpp"
#include "nexp/nets.hpp"

using namespace nexp;

namespace {

NetLayout layout_with(std::vector<std::size_t> hidden, std::size_t nx = 1, std::size_t nz = 1) {
    NetLayout l;
    l.hidden = std::move(hidden);
    l.state_dim = nx;
    l.noise_dim = nz;
    return l;
}

NetLayout aux_layout(std::vector<std::size_t> hidden, std::vector<std::size_t> aux) {
    NetLayout l = layout_with(std::move(hidden));
    l.aux_hidden = std::move(aux);
    return l;
}

// index of the raw parameter holding input weight (row, input column) of layer 0 in subnet n
std::size_t input_weight_index(const DriverNet& net, std::size_t n, std::size_t row, std::size_t col) {
    const auto& s = net.subnets()[n];
    return s.layers[0].in_off + row * s.inputs.size() + col;
}

}  // namespace

TEST(DriverNet, MonotoneYPassesExactly) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto net = build_driver(ArchitectureKind::MonotoneY, layout_with({8, 8}), seed);
        EXPECT_TRUE(effective_weights_respect_constraints(*net));
        auto r = verify_monotone(*net, 10000, seed + 100);
        EXPECT_TRUE(r.pass);
        EXPECT_EQ(r.n_positive, 0u);
        EXPECT_LE(r.max_dfdy, 0.0);
    }
}

TEST(DriverNet, IcnnPassesConvexityWithZeroTolerance) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto net = build_driver(ArchitectureKind::IcnnYZ, layout_with({8, 8}, 1, 2), seed);
        auto r = verify_convexity(*net, 2000, seed + 7, 0.0);
        EXPECT_TRUE(r.pass) << "worst gap " << r.worst_gap;
    }
}

TEST(DriverNet, SeparableWithZeroN2IsYIndependent) {
    auto net = build_driver(ArchitectureKind::Separable, aux_layout({8}, {4}), 3);
    // make every N2 parameter give zero effective weight/bias: free entries 0, sign-constrained very negative
    std::vector<double> th = net->raw();
    const auto& n2 = net->subnets()[1];
    for (const auto& L : n2.layers) {
        const std::size_t end = L.b_off + L.width;
        const std::size_t begin = L.has_hidden ? L.w_off : L.in_off;
        for (std::size_t i = begin; i < end; ++i) th[i] = net->signs()[i] == WeightSign::Free ? 0.0 : -800.0;
    }
    auto z = net->with_raw(th);
    std::vector<double> x{0.4}, zz{-0.7};
    const double f1 = z->value(0.3, x, -1.5, zz);
    for (double y : {-2.0, 0.0, 0.25, 3.0}) EXPECT_EQ(z->value(0.3, x, y, zz), f1);
}

TEST(DriverNet, ZeroNetEvaluatesToZero) {
    auto net = build_driver(ArchitectureKind::Free, layout_with({4, 4}), 1);
    std::vector<double> zeros(net->param_count(), 0.0);
    auto z = net->with_raw(zeros);
    std::vector<double> x{1.3}, zz{0.2};
    EXPECT_EQ(z->value(0.1, x, 2.0, zz), 0.0);
}

TEST(DriverNet, HandSetSingleLayerMonotone) {
    auto net = build_driver(ArchitectureKind::MonotoneY, layout_with({}), 1);
    std::vector<double> th(net->param_count(), 0.0);
    // inputs are (t, x, y, z); y is column 2 and is sign-constrained
    th[input_weight_index(*net, 0, 0, 2)] = softplus_inverse(1.0);
    auto h = net->with_raw(th);
    std::vector<double> x{0.0}, z{0.0};
    EXPECT_NEAR(h->value(0.0, x, 0.3, z), -0.3, 1e-14);
    EXPECT_EQ(h->value(0.0, x, 0.3, z), h->value(0.0, x, 0.3, z));
}

TEST(DriverNet, RejectsMismatchedLayouts) {
    NetLayout relu = layout_with({8});
    relu.activation = Activation::Relu;
    EXPECT_THROW(build_driver(ArchitectureKind::MonotoneY, relu, 1), Error);
    NetLayout tanh_icnn = layout_with({8});
    tanh_icnn.activation = Activation::Tanh;
    EXPECT_THROW(build_driver(ArchitectureKind::IcnnYZ, tanh_icnn, 1), Error);
    EXPECT_THROW(build_driver(ArchitectureKind::Separable, layout_with({8}), 1), Error);
    NetLayout bad_bound = aux_layout({4}, {4});
    bad_bound.bound = 0.0;
    EXPECT_THROW(build_driver(ArchitectureKind::BoundedInteraction, bad_bound, 1), Error);
    try {
        build_driver(ArchitectureKind::Separable, layout_with({8}), 1);
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidArchitecture);
    }
    // relu is fine where monotonicity is not built in
    EXPECT_NO_THROW(build_driver(ArchitectureKind::Free, relu, 1));
}

TEST(DriverNet, RejectsNonFiniteInput) {
    auto net = build_driver(ArchitectureKind::Free, layout_with({4}), 1);
    std::vector<double> x{NAN}, z{0.0};
    EXPECT_THROW(net->value(0, x, 0, z), Error);
}

TEST(DriverNet, GradientsMatchFiniteDifferences) {
    SeqRng rng(77);
    const ArchitectureKind kinds[] = {ArchitectureKind::Free, ArchitectureKind::Separable,
                                      ArchitectureKind::BoundedInteraction, ArchitectureKind::MonotoneY,
                                      ArchitectureKind::IcnnYZ};
    for (int i = 0; i < 25; ++i) {
        const auto kind = kinds[i % 5];
        NetLayout l = aux_layout({6, 5}, {4});
        l.noise_dim = 2;
        l.state_dim = 1 + (i % 2);
        auto net = build_driver(kind, l, 1000 + i);
        std::vector<double> x(l.state_dim), z(2);
        for (auto& v : x) v = rng.uniform(-1, 1);
        for (auto& v : z) v = rng.uniform(-1, 1);
        auto c = check_driver_gradients(*net, rng.uniform(0, 1), x, rng.uniform(-1, 1), z);
        EXPECT_LT(c.rel_error, 1e-6) << to_string(kind);
    }
}

TEST(DriverNet, ZeroZWeightsGiveZeroZGradient) {
    auto net = build_driver(ArchitectureKind::Free, layout_with({5}), 4);
    std::vector<double> th = net->raw();
    for (std::size_t r = 0; r < 5; ++r) th[input_weight_index(*net, 0, r, 3)] = 0.0;  // column 3 is z
    auto h = net->with_raw(th);
    DriverGradients g;
    std::vector<double> x{0.2}, z{0.9};
    h->gradients(0.5, x, 0.1, z, g);
    EXPECT_EQ(g.dz[0], 0.0);
}

TEST(DriverNet, BoundedInteractionRespectsBound) {
    NetLayout l = aux_layout({6}, {6});
    l.bound = 0.25;
    l.init_scale = 20.0;  // push the squashing map into saturation
    auto net = build_driver(ArchitectureKind::BoundedInteraction, l, 8);
    SeqRng rng(3);
    std::vector<double> x(1), z(1);
    for (int i = 0; i < 5000; ++i) {
        x[0] = rng.uniform(-50, 50);
        z[0] = rng.uniform(-50, 50);
        EXPECT_LE(std::abs(net->subnet_output(1, rng.uniform(0, 1), x, rng.uniform(-5, 5), z)), 0.25);
    }
}

TEST(DriverNet, ConstraintsSurviveArbitraryRawParameters) {
    SeqRng rng(12);
    for (auto kind : {ArchitectureKind::MonotoneY, ArchitectureKind::IcnnYZ}) {
        auto net = build_driver(kind, layout_with({8, 8}), 2);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> th(net->param_count());
            for (auto& v : th) v = 30.0 * rng.normal();
            auto m = net->with_raw(th);
            EXPECT_TRUE(effective_weights_respect_constraints(*m));
            if (kind == ArchitectureKind::MonotoneY) {
                EXPECT_TRUE(verify_monotone(*m, 500, rep).pass);
            }
        }
    }
}

TEST(DriverNet, SerializationRoundTripsBitExactly) {
    for (auto kind : {ArchitectureKind::Free, ArchitectureKind::Separable, ArchitectureKind::BoundedInteraction,
                      ArchitectureKind::MonotoneY, ArchitectureKind::IcnnYZ}) {
        NetLayout l = aux_layout({7, 3}, {5});
        l.bound = 0.3;
        auto net = build_driver(kind, l, 19);
        const std::string text = net->serialize();
        auto back = DriverNet::parse(text);
        EXPECT_EQ(back->raw(), net->raw());
        EXPECT_EQ(back->serialize(), text);
        EXPECT_EQ(back->kind(), kind);
    }
    EXPECT_THROW(DriverNet::parse("garbage"), Error);
}

TEST(NetChecks, VerifyMonotoneFailsOnIncreasingFreeNet) {
    auto net = build_driver(ArchitectureKind::Free, layout_with({}), 1);
    std::vector<double> th(net->param_count(), 0.0);
    th[input_weight_index(*net, 0, 0, 2)] = 1.0;
    auto r = verify_monotone(*net->with_raw(th), 100, 1);
    EXPECT_FALSE(r.pass);
    EXPECT_GT(r.max_dfdy, 0.0);
}

TEST(NetChecks, SeparableWithMonotoneN2Passes) {
    auto net = build_driver(ArchitectureKind::Separable, aux_layout({8}, {6}), 5);
    EXPECT_TRUE(verify_monotone(*net, 5000, 1).pass);
}

TEST(NetChecks, ConvexityOfBuiltins) {
    QuadraticZDriver concave(1.0, -1.0);
    EXPECT_FALSE(verify_convexity(concave, 200, 1, 0.0).pass);
    AffineDriver aff(0.3, -0.2, {0.7});
    auto r = verify_convexity(aff, 200, 1, 1e-12);
    EXPECT_TRUE(r.pass);
    EXPECT_NEAR(r.worst_gap, 0.0, 1e-12);
}

TEST(NetChecks, GrowthFitOnQuadratic) {
    QuadraticZDriver q(1.0, -1.0);
    auto r = estimate_growth_and_lipschitz(q, 1.0, 2000, 3);
    EXPECT_NEAR(r.alpha, 1.0, 0.05);
    EXPECT_NEAR(r.K, 0.0, 1e-9);
    EXPECT_EQ(r.L_R, 0.0);
}

TEST(NetChecks, GrowthFitOnZeroNet) {
    auto net = build_driver(ArchitectureKind::Free, layout_with({4}), 1);
    auto z = net->with_raw(std::vector<double>(net->param_count(), 0.0));
    auto r = estimate_growth_and_lipschitz(*z, 2.0, 500, 3);
    EXPECT_EQ(r.K, 0.0);
    EXPECT_EQ(r.alpha, 0.0);
    EXPECT_EQ(r.L_R, 0.0);
}

TEST(NetChecks, SeparableLipschitzIgnoresZRange) {
    auto net = build_driver(ArchitectureKind::Separable, aux_layout({8}, {6}), 9);
    SampleBox lo, hi;
    lo.z_lo = -1;
    lo.z_hi = 0;
    hi.z_lo = 2;
    hi.z_hi = 5;
    auto a = estimate_growth_and_lipschitz(*net, 1.5, 3000, 4, lo);
    auto b = estimate_growth_and_lipschitz(*net, 1.5, 3000, 4, hi);
    EXPECT_GT(a.L_R, 0.0);
    EXPECT_NEAR(a.L_R, b.L_R, 0.01 * a.L_R);
}
