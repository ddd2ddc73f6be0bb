#pragma once

#include <charconv>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "tactus/data.hpp"
#include "tactus/errors.hpp"

namespace tactus {

// Flat key=value configuration: '#' starts a comment, blank lines are
// skipped, later assignments win. Command-line flags are merged on top of
// the file, and every command writes the fully resolved set of keys it
// consumed next to its outputs, so any artifact can be regenerated from
// its own directory.
struct RunConfig {
    std::map<std::string, std::string> kv;

    bool has(const std::string& key) const { return kv.find(key) != kv.end(); }
    void set(const std::string& key, const std::string& value) { kv[key] = value; }

    const std::string& get(const std::string& key) const {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("config: missing required key '" + key + "'");
        return it->second;
    }

    std::string get_str(const std::string& key, const std::string& def) const {
        auto it = kv.find(key);
        return it == kv.end() ? def : it->second;
    }

    int64_t get_int(const std::string& key, int64_t def) const {
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        const std::string& s = it->second;
        int64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
            throw ConfigError("config: key '" + key + "' is not an integer: '" + s + "'");
        return v;
    }

    double get_real(const std::string& key, double def) const {
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        const std::string& s = it->second;
        char* end = nullptr;
        double v = std::strtod(s.c_str(), &end);
        if (end != s.c_str() + s.size() || s.empty())
            throw ConfigError("config: key '" + key + "' is not a number: '" + s + "'");
        return v;
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        const std::string& s = it->second;
        if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
        if (s == "0" || s == "false" || s == "no" || s == "off") return false;
        throw ConfigError("config: key '" + key + "' is not a boolean: '" + s + "'");
    }

    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& def) const {
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        std::vector<int> out;
        const std::string& s = it->second;
        size_t pos = 0;
        while (pos <= s.size()) {
            size_t comma = s.find(',', pos);
            if (comma == std::string::npos) comma = s.size();
            const std::string item = s.substr(pos, comma - pos);
            int v = 0;
            auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
            if (ec != std::errc() || p != item.data() + item.size())
                throw ConfigError("config: key '" + key + "' is not an integer list: '" + s + "'");
            out.push_back(v);
            pos = comma + 1;
        }
        return out;
    }

    // Sorted key=value lines; parsing this text reproduces the map exactly.
    std::string resolved() const {
        std::string out;
        for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
        return out;
    }
};

namespace detail {

inline std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::strip(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        const std::string key = detail::strip(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.set(key, detail::strip(line.substr(eq + 1)));
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) { return parse_config(detail::read_file(path)); }

inline void merge_overrides(RunConfig& base, const RunConfig& over) {
    for (const auto& [k, v] : over.kv) base.set(k, v);
}

inline std::string default_out_root() {
    const char* env = std::getenv("TACTUS_OUT_ROOT");
    return env && *env ? std::string(env) : std::string(".");
}

}  // namespace tactus
