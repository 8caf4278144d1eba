#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vwl/core.hpp"

namespace vwl {

// Flat key-value config store. File format: one "key = value" per line,
// '#' starts a comment, blank lines ignored. Keys are listed in the README
// reference page; every TrainConfig / DataConfig field is addressable.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        KeyValueConfig kv;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip_comment(line);
            if (s.empty()) continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) + " of " + path +
                                  " is not 'key = value': " + line);
            std::string key = trim(s.substr(0, eq));
            std::string val = trim(s.substr(eq + 1));
            if (key.empty()) throw ConfigError("empty key on line " + std::to_string(lineno));
            kv.set(key, val);
        }
        return kv;
    }

    void to_file(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ConfigError("cannot write config file: " + path);
        out << serialize();
    }

    // Canonical serialization: keys sorted, one per line. The config hash is
    // FNV-1a over these bytes, so equal configs hash equal regardless of the
    // order keys were set.
    std::string serialize() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
        return os.str();
    }

    uint64_t hash() const { return fnv1a64(serialize()); }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, const std::string& val) { values_[key] = val; }
    void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
    void set_real(const std::string& key, double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        set(key, os.str());
    }
    void set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

    std::string get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    }
    std::string get_or(const std::string& key, const std::string& dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : it->second;
    }

    long long get_int(const std::string& key) const {
        const std::string s = get(key);
        try {
            size_t pos = 0;
            long long v = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' is not an integer: " + s);
        }
    }

    double get_real(const std::string& key) const {
        const std::string s = get(key);
        try {
            size_t pos = 0;
            double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' is not a number: " + s);
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string s = get(key);
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw ConfigError("key '" + key + "' is not a boolean: " + s);
    }

    // comma-separated list of integers, e.g. "1,2,4"
    std::vector<int> get_int_list(const std::string& key) const {
        std::vector<int> out;
        for (const std::string& tok : split_list(get(key)))
            out.push_back(static_cast<int>(parse_ll(tok, key)));
        return out;
    }

    std::vector<double> get_real_list(const std::string& key) const {
        std::vector<double> out;
        for (const std::string& tok : split_list(get(key))) {
            try {
                out.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ConfigError("key '" + key + "' has a non-numeric entry: " + tok);
            }
        }
        return out;
    }

    const std::map<std::string, std::string>& items() const { return values_; }

    static std::string join_ints(const std::vector<int>& xs) {
        std::ostringstream os;
        for (size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
        return os.str();
    }
    static std::string join_reals(const std::vector<double>& xs) {
        std::ostringstream os;
        os.precision(17);
        for (size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
        return os.str();
    }

private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }
    static std::string strip_comment(const std::string& s) {
        auto h = s.find('#');
        return trim(h == std::string::npos ? s : s.substr(0, h));
    }
    static std::vector<std::string> split_list(const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream is(s);
        while (std::getline(is, cur, ',')) {
            cur = trim(cur);
            if (!cur.empty()) out.push_back(cur);
        }
        return out;
    }
    static long long parse_ll(const std::string& s, const std::string& key) {
        try {
            return std::stoll(s);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' has a non-integer entry: " + s);
        }
    }

    std::map<std::string, std::string> values_;
};

}  // namespace vwl
