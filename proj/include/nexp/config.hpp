#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "report.hpp"

namespace nexp {

/// Read-only view of one JSON object with its dotted path, so every
/// validation error names the offending field ("config.problem.grid.steps").
class ConfigNode {
public:
    ConfigNode(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
        if (!j.is_object()) fail(ErrorKind::ConfigError, path_ + ": expected an object");
    }

    const json& raw() const noexcept { return *j_; }
    const std::string& path() const noexcept { return path_; }
    std::string path(const std::string& key) const { return path_ + "." + key; }
    bool has(const std::string& key) const { return j_->contains(key) && !(*j_)[key].is_null(); }

    ConfigNode at(const std::string& key) const { return ConfigNode(field(key), path(key)); }
    std::optional<ConfigNode> find(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        return at(key);
    }

    double num(const std::string& key) const { return as_num(field(key), path(key)); }
    double num(const std::string& key, double dflt) const { return has(key) ? num(key) : dflt; }

    std::uint64_t uint(const std::string& key) const { return as_uint(field(key), path(key)); }
    std::uint64_t uint(const std::string& key, std::uint64_t dflt) const { return has(key) ? uint(key) : dflt; }
    std::size_t size(const std::string& key, std::size_t dflt) const { return static_cast<std::size_t>(uint(key, dflt)); }
    std::size_t positive(const std::string& key, std::size_t dflt) const {
        const std::size_t v = size(key, dflt);
        if (v == 0) fail(ErrorKind::ConfigError, path(key) + ": must be positive");
        return v;
    }

    std::string str(const std::string& key) const {
        const json& v = field(key);
        if (!v.is_string()) fail(ErrorKind::ConfigError, path(key) + ": expected a string");
        return v.get<std::string>();
    }
    std::string str(const std::string& key, const std::string& dflt) const { return has(key) ? str(key) : dflt; }

    bool flag(const std::string& key, bool dflt) const {
        if (!has(key)) return dflt;
        const json& v = field(key);
        if (!v.is_boolean()) fail(ErrorKind::ConfigError, path(key) + ": expected true or false");
        return v.get<bool>();
    }

    std::vector<double> nums(const std::string& key, std::vector<double> dflt) const {
        if (!has(key)) return dflt;
        return nums(key);
    }
    std::vector<double> nums(const std::string& key) const {
        const json& v = field(key);
        if (!v.is_array()) fail(ErrorKind::ConfigError, path(key) + ": expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_num(v[i], path(key) + "[" + std::to_string(i) + "]"));
        return out;
    }
    std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> dflt) const {
        if (!has(key)) return dflt;
        const json& v = field(key);
        if (!v.is_array()) fail(ErrorKind::ConfigError, path(key) + ": expected an array of integers");
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < v.size(); ++i)
            out.push_back(static_cast<std::size_t>(as_uint(v[i], path(key) + "[" + std::to_string(i) + "]")));
        return out;
    }

    /// Array of objects under key.
    std::vector<ConfigNode> objects(const std::string& key) const {
        const json& v = field(key);
        if (!v.is_array()) fail(ErrorKind::ConfigError, path(key) + ": expected an array of objects");
        std::vector<ConfigNode> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(v[i], path(key) + "[" + std::to_string(i) + "]");
        return out;
    }

private:
    const json& field(const std::string& key) const {
        if (!has(key)) fail(ErrorKind::ConfigError, "missing required field " + path(key));
        return (*j_)[key];
    }
    static double as_num(const json& v, const std::string& p) {
        if (!v.is_number()) fail(ErrorKind::ConfigError, p + ": expected a number");
        return v.get<double>();
    }
    static std::uint64_t as_uint(const json& v, const std::string& p) {
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
        fail(ErrorKind::ConfigError, p + ": expected a non-negative integer");
    }

    const json* j_;
    std::string path_;
};

inline json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorKind::ConfigError, "cannot read " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        fail(ErrorKind::ConfigError, path + ": " + e.what());
    }
}

}  // namespace nexp
