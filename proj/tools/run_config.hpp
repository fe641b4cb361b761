#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace cifgen::cli {

/// Raised for bad flags or config files; maps to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Plain `key = value` text. Blank lines and `#` comments are ignored.
class RunConfig {
public:
    static RunConfig parse(const std::string& text, const std::string& origin);
    static RunConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::string require_string(const std::string& key) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Throws UsageError naming every key outside `known`.
    void reject_unknown(const std::set<std::string>& known) const;

    const std::map<std::string, std::string>& values() const noexcept { return values_; }

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
};

}  // namespace cifgen::cli
