#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "error.hpp"
#include "rng.hpp"

namespace nexp {

using json = nlohmann::json;

struct Check {
    std::string name;
    bool passed = false;
    std::optional<double> measured;   // absent when the value is not finite
    std::optional<double> tolerance;
    std::string comparator;           // how measured relates to tolerance, e.g. "<=" or "abs-diff <="
    std::string detail;

    bool operator==(const Check&) const = default;
};

struct RunReport {
    std::string kind;
    std::string config_hash;
    json config;
    std::vector<Check> checks;
    std::map<std::string, json> values;
    std::map<std::string, std::string> artifacts;
    std::map<std::string, double> timings;  // seconds

    std::size_t failed_count() const {
        std::size_t n = 0;
        for (const auto& c : checks) n += c.passed ? 0 : 1;
        return n;
    }
    bool all_passed() const { return failed_count() == 0; }

    /// Adds a check; names are unique within a report.
    Check& add_check(Check c) {
        for (const auto& o : checks)
            if (o.name == c.name) fail(ErrorKind::InvalidArgument, "duplicate check name '" + c.name + "'");
        checks.push_back(std::move(c));
        return checks.back();
    }

    bool operator==(const RunReport&) const = default;
};

inline std::optional<double> finite_or_none(double v) {
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

/// JSON number, or null for NaN/inf (JSON has no encoding for those).
inline json json_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// FNV-1a over the compact dump; object keys are sorted, so the hash does not
/// depend on key order in the source file.
inline std::string config_hash(const json& config) { return hex64(fnv1a(config.dump())); }

inline bool config_hash_matches(const RunReport& r) { return config_hash(r.config) == r.config_hash; }

inline json emit_json(const RunReport& r) {
    json checks = json::array();
    for (const auto& c : r.checks) {
        checks.push_back({{"name", c.name},
                          {"passed", c.passed},
                          {"measured", c.measured ? json(*c.measured) : json(nullptr)},
                          {"tolerance", c.tolerance ? json(*c.tolerance) : json(nullptr)},
                          {"comparator", c.comparator},
                          {"detail", c.detail}});
    }
    json values = json::object();
    for (const auto& [k, v] : r.values) values[k] = v;
    return {{"kind", r.kind},
            {"config_hash", r.config_hash},
            {"config", r.config},
            {"checks", checks},
            {"values", values},
            {"artifacts", r.artifacts},
            {"timings", r.timings},
            {"summary", {{"checks", r.checks.size()}, {"failed", r.failed_count()}, {"exit_code", r.all_passed() ? 0 : 1}}}};
}

inline RunReport report_from_json(const json& j) {
    try {
        RunReport r;
        r.kind = j.at("kind").get<std::string>();
        r.config_hash = j.at("config_hash").get<std::string>();
        r.config = j.at("config");
        for (const auto& c : j.at("checks")) {
            Check k;
            k.name = c.at("name").get<std::string>();
            k.passed = c.at("passed").get<bool>();
            if (!c.at("measured").is_null()) k.measured = c.at("measured").get<double>();
            if (!c.at("tolerance").is_null()) k.tolerance = c.at("tolerance").get<double>();
            k.comparator = c.at("comparator").get<std::string>();
            k.detail = c.at("detail").get<std::string>();
            r.checks.push_back(std::move(k));
        }
        for (const auto& [k, v] : j.at("values").items()) r.values[k] = v;
        r.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
        r.timings = j.at("timings").get<std::map<std::string, double>>();
        return r;
    } catch (const json::exception& e) {
        fail(ErrorKind::ConfigError, std::string("malformed report: ") + e.what());
    }
}

namespace detail {
inline std::string fmt_num(std::optional<double> v) {
    if (!v) return "n/a";
    std::ostringstream os;
    os.precision(6);
    os << *v;
    return os.str();
}
}  // namespace detail

/// Fixed layout: header block, one row per check starting with PASS or FAIL,
/// then values, artifacts, timings and a status line.
inline std::string emit_text(const RunReport& r) {
    std::ostringstream os;
    os << "nexp report\n";
    os << "kind:        " << r.kind << "\n";
    os << "config hash: " << r.config_hash << "\n";
    os << "checks:      " << r.checks.size() << " (" << r.checks.size() - r.failed_count() << " passed, "
       << r.failed_count() << " failed)\n";
    for (const auto& c : r.checks) {
        os << (c.passed ? "PASS" : "FAIL") << "  " << c.name << "  measured=" << detail::fmt_num(c.measured);
        if (c.tolerance || !c.comparator.empty())
            os << "  " << (c.comparator.empty() ? "tol" : c.comparator) << " " << detail::fmt_num(c.tolerance);
        if (!c.detail.empty()) os << "  (" << c.detail << ")";
        os << "\n";
    }
    if (!r.values.empty()) {
        os << "values:\n";
        for (const auto& [k, v] : r.values) os << "  " << k << " = " << v.dump() << "\n";
    }
    if (!r.artifacts.empty()) {
        os << "artifacts:\n";
        for (const auto& [k, v] : r.artifacts) os << "  " << k << ": " << v << "\n";
    }
    if (!r.timings.empty()) {
        os << "timings (s):\n";
        for (const auto& [k, v] : r.timings) os << "  " << k << ": " << detail::fmt_num(v) << "\n";
    }
    if (r.all_passed())
        os << "status: all checks passed (exit 0)\n";
    else
        os << "status: " << r.failed_count() << " check(s) did not pass; exit with nonzero status (1)\n";
    return os.str();
}

inline std::string emit_report(const RunReport& r, const std::string& format) {
    if (format == "json") return emit_json(r).dump(2) + "\n";
    if (format == "text") return emit_text(r);
    fail(ErrorKind::ConfigError, "unknown report format '" + format + "' (text or json)");
}

/// 0 all-pass, 1 assertion failure.
inline int exit_code(const RunReport& r) { return r.all_passed() ? 0 : 1; }

/// 2 for configuration and input errors, 3 for numerical failures.
inline int exit_code(ErrorKind k) {
    switch (k) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidArgument:
    case ErrorKind::InvalidArchitecture:
    case ErrorKind::InvalidComparisonPair:
    case ErrorKind::InvalidDriver:
    case ErrorKind::IncompleteCoefficients: return 2;
    default: return 3;
    }
}

}  // namespace nexp
