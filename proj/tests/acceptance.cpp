// Acceptance suite: one PASS/FAIL line per criterion. Every criterion runs
// through run_experiment with a seed fixed up front (split from 1), so the
// same configs can be replayed with the CLI from the emitted report.json.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>

#include "nexp/experiments.hpp"

using namespace nexp;

namespace {

std::filesystem::path out_root = "acceptance-out";

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;  // one per failed check or extra condition
};

RunReport run(const std::string& tag, json cfg, Outcome& o) {
    cfg["output_dir"] = (out_root / tag).string();
    RunReport r = run_experiment(cfg);
    for (const auto& c : r.checks) {
        if (c.passed) continue;
        o.pass = false;
        std::ostringstream os;
        os << tag << ": " << c.name << " measured=" << (c.measured ? std::to_string(*c.measured) : "n/a");
        if (c.tolerance) os << " " << c.comparator << " " << *c.tolerance;
        if (!c.detail.empty()) os << " (" << c.detail << ")";
        o.notes.push_back(os.str());
    }
    return r;
}

void require(Outcome& o, bool cond, const std::string& what) {
    if (cond) return;
    o.pass = false;
    o.notes.push_back(what);
}

std::uint64_t seed_for(int n) { return split_seed(1, "criterion-" + std::to_string(n)); }

Outcome criterion_1() {
    Outcome o;
    run("c1-oracles", {{"kind", "oracle-suite"}, {"seed", seed_for(1)}, {"paths", 100000}, {"grid", {{"horizon", 1.0}, {"steps", 50}}},
                       {"linear_b", 0.3}, {"entropic_theta", 1.0}},
        o);
    return o;
}

Outcome criterion_2() {
    Outcome o;
    const RunReport r = run("c2-architectures",
                            {{"kind", "verify-axioms"},
                             {"seed", seed_for(2)},
                             {"sections", {"architecture"}},
                             {"architecture", {{"monotone_nets", 100}, {"monotone_points", 10000}, {"icnn_nets", 100}, {"icnn_segments", 1000}}}},
                            o);
    require(o, r.checks.size() == 2, "expected two architecture checks");
    return o;
}

Outcome criterion_3() {
    Outcome o;
    const RunReport r = run("c3-gradients",
                            {{"kind", "verify-axioms"},
                             {"seed", seed_for(3)},
                             {"sections", {"gradients"}},
                             {"gradients", {{"nets", 100}, {"fd_cases", 20}, {"net_tol", 1e-6}, {"fd_tol", 1e-3}}}},
                            o);
    // entropic: Y0 = -theta T / 2, so dY0/dtheta = -T/2
    const json& g = r.values.at("gradients.entropic_dY0_dtheta");
    require(o, g.is_number() && std::abs(g.get<double>() + 0.5) <= 0.02,
            "entropic dY0/dtheta " + g.dump() + " not within 0.02 of -T/2 = -0.5");
    return o;
}

Outcome criterion_4() {
    Outcome o;
    run("c4-axioms",
        {{"kind", "verify-axioms"},
         {"seed", seed_for(4)},
         {"sections", {"comparison", "convexity", "dynamic_consistency", "dual"}},
         {"comparison", {{"nets", 5}, {"paths", 5000}}},
         {"convexity", {{"nets", 5}, {"paths", 10000}}},
         {"dynamic_consistency", {{"theta", 1.0}, {"split", 0.5}, {"paths", 20000}, {"rel_tol", 0.02}}},
         {"dual", {{"theta", 1.0}, {"controls", {0.0, 0.5, 1.0, 1.5, 2.0}}, {"paths", 100000}, {"rel_tol", 0.02}}}},
        o);
    return o;
}

Outcome criterion_5() {
    Outcome o;
    const RunReport r = run("c5-truncation",
                            {{"kind", "solve"},
                             {"seed", seed_for(5)},
                             {"problem",
                              {{"terminal", {{"kind", "brownian"}}},
                               {"driver", {{"type", "entropic"}, {"theta", 1.0}}},
                               {"grid", {{"horizon", 1.0}, {"steps", 20}}},
                               {"paths", 20000}}},
                             {"truncation", {0.5, 1.0, 2.0, 4.0, 8.0}}},
                            o);
    const double max_y = r.values.at("max_abs_y").get<double>();
    require(o, max_y < 8.0, "no truncation level exceeds max|Y| = " + std::to_string(max_y) + "; exactness check was vacuous");
    return o;
}

Outcome criterion_6() {
    Outcome o;
    json cfg = json::parse(R"({
      "kind": "fbsde",
      "cases": [
        {"name": "decoupled", "epsilon": 0.0, "grid": {"horizon": 1.0, "steps": 20}, "paths": 4000, "expect": "one-iteration"},
        {"name": "weak", "epsilon": 0.1, "grid": {"horizon": 0.2, "steps": 20}, "paths": 4000, "expect": "contraction", "max_ratio": 0.5},
        {"name": "long", "epsilon": 0.1, "grid": {"horizon": 50.0, "steps": 50}, "paths": 4000, "expect": "no-contraction"}
      ]})");
    cfg["seed"] = seed_for(6);
    const RunReport r = run("c6-fbsde", cfg, o);
    require(o, r.checks.size() == 4, "expected four fbsde checks");
    return o;
}

Outcome criterion_7() {
    Outcome o;
    run("c7-lln",
        {{"kind", "meanfield-lln"},
         {"seed", seed_for(7)},
         {"model", {{"name", "linear-mean-field"}}},
         {"n_list", {16, 64, 256, 1024}},
         {"trials", 20},
         {"grid", {{"horizon", 1.0}, {"steps", 50}}},
         {"slope", {{"target", -1.0}, {"tol", 0.3}}},
         {"control", true}},
        o);
    return o;
}

Outcome criterion_8() {
    Outcome o;
    run("c8-clt",
        {{"kind", "meanfield-clt"},
         {"seed", seed_for(8)},
         {"model", {{"name", "linear-gaussian-clt"}}},
         {"n_list", {256, 1024}},
         {"trials", 20},
         {"grid", {{"horizon", 1.0}, {"steps", 50}}},
         {"analytic_rel_tol", 0.10},
         {"cross_rel_tol", 0.15},
         {"fluctuation", {{"paths", 4000}, {"copies", 1000}, {"scale", 2.0}}}},
        o);
    return o;
}

Outcome criterion_9() {
    Outcome o;
    const json market = {{"mu", 0.08}, {"r", 0.02}, {"sigma", 0.2}, {"gamma", 0.5}, {"T", 1.0}};
    run("c9-merton",
        {{"kind", "merton"},
         {"seed", seed_for(9)},
         {"market", market},
         {"thetas", {0.0, 0.25, 0.5, 1.0}},
         {"value_rel_tol", 0.005},
         {"policy_rel_tol", 0.02},
         {"expect_pi_classical", 3.0}},
        o);
    run("c9-calibrate",
        {{"kind", "calibrate"},
         {"seed", seed_for(9)},
         {"market", market},
         {"observations", {{"synthetic", {{"theta_true", {0.1, 0.4, 0.8}}}}}},
         {"rel_tol", 0.03}},
        o);
    return o;
}

Outcome criterion_10() {
    Outcome o;
    const RunReport r = run("c10-entropic",
                            {{"kind", "train"},
                             {"seed", seed_for(10)},
                             {"data", {{"synthetic", {{"kind", "entropic"}, {"theta_true", 1.5}, {"records", 10}}}}},
                             {"driver", {{"type", "entropic"}, {"theta", 0.3}}},
                             {"grid", {{"horizon", 1.0}, {"steps", 10}}},
                             {"paths", 20000},
                             {"schedule", {{"eta", 0.3}, {"max_iters", 40}, {"tol", 1e-12}}},
                             {"lsmc", {{"control_variate", true}}},
                             {"expect", {{"theta", 1.5}, {"rel_tol", 0.05}}},
                             {"check_reproducible", true}},
                            o);
    require(o, r.checks.size() == 3, "expected three entropic training checks");
    for (const std::string arch : {"monotone-y", "icnn-yz"}) {
        run("c10-" + arch,
            {{"kind", "train"},
             {"seed", seed_for(10)},
             {"data", {{"synthetic", {{"kind", "entropic"}, {"theta_true", 1.0}, {"records", 6}}}}},
             {"driver", {{"type", "net"}, {"architecture", arch}, {"hidden", {6, 6}}, {"aux_hidden", {4}}}},
             {"grid", {{"horizon", 1.0}, {"steps", 10}}},
             {"paths", 4000},
             {"schedule", {{"eta", 0.05}, {"max_iters", 10}}},
             {"check_reproducible", true}},
            o);
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 1) out_root = argv[1];
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"BSDE oracles (zero, linear, entropic)", criterion_1},
        {"architecture constraints (monotone-y, icnn-yz)", criterion_2},
        {"net gradients and sensitivity vs finite differences", criterion_3},
        {"risk-measure axioms and dual bound", criterion_4},
        {"truncation monotone and exact above max|Y|", criterion_5},
        {"FBSDE Picard coupling", criterion_6},
        {"mean-field law of large numbers", criterion_7},
        {"mean-field fluctuations", criterion_8},
        {"Merton under ambiguity and calibration", criterion_9},
        {"driver training", criterion_10},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.notes.push_back(std::string("error: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += o.pass ? 0 : 1;
        std::printf("%s criterion %zu: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), secs);
        for (const auto& n : o.notes) std::printf("    - %s\n", n.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
