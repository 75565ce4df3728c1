// nexp: run experiments from JSON configs and emit reports.
//
//   nexp solve --config configs/solve.json --seed 7 --format json
//   nexp report nexp-out/solve/report.json
//
// Exit codes: 0 all checks pass, 1 a check failed, 2 config error,
// 3 numerical failure.

#include <iostream>

#include "CLI11.hpp"

#include "nexp/experiments.hpp"
#include "nexp/parallel.hpp"

namespace {

// Subcommand → experiment kinds it may run; the first is used when the
// config leaves "kind" out.
const std::map<std::string, std::vector<std::string>>& subcommand_kinds() {
    static const std::map<std::string, std::vector<std::string>> m{
        {"solve", {"solve", "oracle-suite"}},
        {"verify", {"verify-axioms", "oracle-suite"}},
        {"train", {"train"}},
        {"meanfield", {"meanfield-lln", "meanfield-clt"}},
        {"fbsde", {"fbsde"}},
        {"merton", {"merton"}},
        {"calibrate", {"calibrate"}},
    };
    return m;
}

struct Args {
    std::string config, out, format = "text", report_file;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 0;
};

int run(const std::string& sub, const Args& a) {
    using namespace nexp;
    if (a.format != "text" && a.format != "json") fail(ErrorKind::ConfigError, "--format: expected text or json");
    if (sub == "report") {
        const RunReport r = report_from_json(load_json_file(a.report_file));
        if (!config_hash_matches(r))
            fail(ErrorKind::ConfigError, a.report_file + ": config hash does not match the echoed config");
        std::cout << emit_report(r, a.format);
        return exit_code(r);
    }
    json cfg = load_json_file(a.config);
    if (!cfg.is_object()) fail(ErrorKind::ConfigError, "config: expected a JSON object");
    const auto& allowed = subcommand_kinds().at(sub);
    if (!cfg.contains("kind")) {
        if (allowed.size() > 1)
            fail(ErrorKind::ConfigError, "missing required field config.kind (one of " + allowed[0] + ", " + allowed[1] + ")");
        cfg["kind"] = allowed[0];
    } else if (!cfg["kind"].is_string() ||
               std::find(allowed.begin(), allowed.end(), cfg["kind"].get<std::string>()) == allowed.end()) {
        fail(ErrorKind::ConfigError, "config.kind: '" + cfg["kind"].dump() + "' cannot run under '" + sub + "'");
    }
    if (a.seed) cfg["seed"] = *a.seed;
    if (a.threads > 0) set_thread_cap(a.threads);
    RunOptions ro;
    if (!a.out.empty()) ro.output_dir = a.out;
    const RunReport r = run_experiment(std::move(cfg), ro);
    std::cout << emit_report(r, a.format);
    return exit_code(r);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nexp: neural BSDE experiments"};
    app.require_subcommand(1);
    Args a;
    std::map<CLI::App*, std::string> subs;
    for (const auto& [name, kinds] : subcommand_kinds()) {
        auto* s = app.add_subcommand(name, "run a " + kinds[0] + " experiment");
        s->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        s->add_option("--seed", a.seed, "override config.seed");
        s->add_option("--out", a.out, "output directory (overrides config.output_dir)");
        s->add_option("--threads", a.threads, "worker thread cap");
        s->add_option("--format", a.format, "text or json")->check(CLI::IsMember({"text", "json"}));
        subs[s] = name;
    }
    auto* rep = app.add_subcommand("report", "re-emit a saved report.json");
    rep->add_option("file", a.report_file, "report.json")->required()->check(CLI::ExistingFile);
    rep->add_option("--format", a.format, "text or json")->check(CLI::IsMember({"text", "json"}));
    subs[rep] = "report";

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    std::string sub;
    for (const auto& [p, name] : subs)
        if (p->parsed()) sub = name;
    try {
        return run(sub, a);
    } catch (const nexp::Error& e) {
        std::cerr << "nexp: " << e.what() << "\n";
        return nexp::exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "nexp: internal error: " << e.what() << "\n";
        return 3;
    }
}
