#pragma once

// Plain-text configuration: `key = value` lines grouped under `[section]`
// headers. Grammar in docs/formats.md.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace treesae {

class Config {
  public:
    Config() = default;

    // Throws ConfigError with the 1-based line number on malformed input.
    static Config parse(std::string_view text);
    static Config load(const std::string& path);

    // Keys are "section.name"; keys before any header live in section "".
    void set(const std::string& key, std::string value);
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> get(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // Comma-separated list, e.g. "26, 6".
    std::vector<std::uint32_t> get_uint_list(const std::string& key,
                                             const std::vector<std::uint32_t>& fallback) const;
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const;

    // Values of `other` replace ours.
    void overlay(const Config& other);

    // Canonical form: sections and keys sorted, one `key = value` per line.
    std::string to_text() const;
    // FNV-1a 64 of to_text().
    std::uint64_t hash() const;

    const std::map<std::string, std::string>& values() const noexcept { return values_; }
    bool operator==(const Config&) const = default;

  private:
    std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

} // namespace treesae
