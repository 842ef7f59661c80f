#pragma once

// Flat key=value run configuration. Files hold one `key = value` pair per
// line with '#' comments; command-line overrides are applied on top and win.
// The canonical dump (sorted keys, exact value strings) feeds the run
// manifest, so parsing never normalizes values it does not have to.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "scalpel/common.hpp"

namespace scalpel {

class Config {
public:
    Config() = default;

    static Config load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw InputError("cannot read config file " + path.string());
        return parse(is, path.string());
    }

    static Config parse(std::istream& is, const std::string& name) {
        Config cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string s = trim(line);
            if (s.empty() || s[0] == '#') continue;
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                throw FormatError(name + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + s + "'");
            const std::string key = trim(s.substr(0, eq));
            const std::string value = trim(s.substr(eq + 1));
            if (key.empty())
                throw FormatError(name + ":" + std::to_string(lineno) + ": empty key");
            if (cfg.values_.count(key))
                throw FormatError(name + ":" + std::to_string(lineno) + ": duplicate key '" +
                                  key + "'");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    // Overrides (e.g. from command-line flags) replace file values.
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
        return it->second;
    }
    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    i64 get_i64(const std::string& key) const { return parse_i64(key, get_string(key)); }
    i64 get_i64(const std::string& key, i64 fallback) const {
        return has(key) ? get_i64(key) : fallback;
    }

    u64 get_u64(const std::string& key) const {
        const std::string v = get_string(key);
        try {
            std::size_t used = 0;
            const u64 out = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
        }
    }
    u64 get_u64(const std::string& key, u64 fallback) const {
        return has(key) ? get_u64(key) : fallback;
    }

    double get_f64(const std::string& key) const {
        const std::string v = get_string(key);
        try {
            std::size_t used = 0;
            const double out = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
        }
    }
    double get_f64(const std::string& key, double fallback) const {
        return has(key) ? get_f64(key) : fallback;
    }

    bool get_bool(const std::string& key) const {
        const std::string v = get_string(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
    }
    bool get_bool(const std::string& key, bool fallback) const {
        return has(key) ? get_bool(key) : fallback;
    }

    // Comma-separated list values; empty string means empty list.
    std::vector<std::string> get_list(const std::string& key) const {
        std::vector<std::string> out;
        std::stringstream ss(get_string(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }
    std::vector<i64> get_i64_list(const std::string& key) const {
        std::vector<i64> out;
        for (const auto& s : get_list(key)) out.push_back(parse_i64(key, s));
        return out;
    }
    std::vector<double> get_f64_list(const std::string& key) const {
        std::vector<double> out;
        for (const auto& s : get_list(key)) {
            try {
                std::size_t used = 0;
                out.push_back(std::stod(s, &used));
                if (used != s.size()) throw std::invalid_argument(s);
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
            }
        }
        return out;
    }

    // Deterministic text form: sorted keys, verbatim values.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            out += k;
            out += " = ";
            out += v;
            out += '\n';
        }
        return out;
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    i64 parse_i64(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const i64 out = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
        }
    }

    std::map<std::string, std::string> values_;
};

}  // namespace scalpel
