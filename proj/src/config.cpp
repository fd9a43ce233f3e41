#include "treesae/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "treesae/errors.hpp"

namespace treesae {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool valid_name(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    });
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
    throw ConfigError("config key '" + key + "': expected " + what + ", got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        const auto t = trim(item);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

} // namespace

Config Config::parse(std::string_view text) {
    Config cfg;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
            }
            const auto name = trim(line.substr(1, line.size() - 2));
            if (!valid_name(name)) {
                throw ConfigError("config line " + std::to_string(line_no) + ": bad section name '" +
                                  std::string(name) + "'");
            }
            section = std::string(name);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (const auto hash = value.find(" #"); hash != std::string_view::npos) {
            value = trim(value.substr(0, hash));
        }
        if (!valid_name(key)) {
            throw ConfigError("config line " + std::to_string(line_no) + ": bad key '" +
                              std::string(key) + "'");
        }
        const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
        if (cfg.has(full)) {
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + full + "'");
        }
        cfg.values_[full] = std::string(value);
    }
    return cfg;
}

Config Config::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void Config::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

std::optional<std::string> Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    std::int64_t out = 0;
    const auto* end = v->data() + v->size();
    auto [ptr, ec] = std::from_chars(v->data(), end, out);
    if (ec != std::errc() || ptr != end) bad_value(key, *v, "an integer");
    return out;
}

std::uint64_t Config::get_uint(const std::string& key, std::uint64_t fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    const auto* end = v->data() + v->size();
    auto [ptr, ec] = std::from_chars(v->data(), end, out);
    if (ec != std::errc() || ptr != end) bad_value(key, *v, "a non-negative integer");
    return out;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    // Accept "1/32" style fractions as well as plain decimals.
    if (const auto slash = v->find('/'); slash != std::string::npos) {
        Config tmp;
        tmp.set("n", v->substr(0, slash));
        tmp.set("d", v->substr(slash + 1));
        try {
            const double d = tmp.get_double("d", 1.0);
            if (d == 0.0) bad_value(key, *v, "a non-zero denominator");
            return tmp.get_double("n", 0.0) / d;
        } catch (const ConfigError&) {
            bad_value(key, *v, "a number");
        }
    }
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(*v, &used);
    } catch (const std::exception&) {
        bad_value(key, *v, "a number");
    }
    if (used != v->size() || !std::isfinite(out)) bad_value(key, *v, "a finite number");
    return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    bad_value(key, *v, "a boolean");
}

std::vector<std::uint32_t> Config::get_uint_list(const std::string& key,
                                                 const std::vector<std::uint32_t>& fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    std::vector<std::uint32_t> out;
    for (const auto& item : split_list(*v)) {
        Config tmp;
        tmp.set("x", item);
        std::uint64_t x = 0;
        try {
            x = tmp.get_uint("x", 0);
        } catch (const ConfigError&) {
            bad_value(key, *v, "a comma-separated list of non-negative integers");
        }
        if (x > 0xFFFFFFFEull) bad_value(key, *v, "values below 2^32 - 1");
        out.push_back(static_cast<std::uint32_t>(x));
    }
    return out;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(*v)) {
        Config tmp;
        tmp.set("x", item);
        try {
            out.push_back(tmp.get_double("x", 0.0));
        } catch (const ConfigError&) {
            bad_value(key, *v, "a comma-separated list of numbers");
        }
    }
    return out;
}

void Config::overlay(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string Config::to_text() const {
    // Group by section (text before the first dot); std::map order keeps
    // both levels sorted.
    std::map<std::string, std::map<std::string, std::string>> grouped;
    for (const auto& [k, v] : values_) {
        const auto dot = k.find('.');
        if (dot == std::string::npos) {
            grouped[""][k] = v;
        } else {
            grouped[k.substr(0, dot)][k.substr(dot + 1)] = v;
        }
    }
    std::ostringstream os;
    bool first = true;
    for (const auto& [section, entries] : grouped) {
        if (!section.empty()) {
            if (!first) os << '\n';
            os << '[' << section << "]\n";
        }
        for (const auto& [k, v] : entries) os << k << " = " << v << '\n';
        first = false;
    }
    return os.str();
}

std::uint64_t Config::hash() const { return fnv1a64(to_text()); }

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

} // namespace treesae
