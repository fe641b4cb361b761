#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace cifgen::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
    RunConfig c;
    c.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw UsageError(origin + ":" + std::to_string(number) + ": empty key");
        if (c.values_.count(key)) throw UsageError(origin + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
        c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path.string());
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::string RunConfig::require_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw UsageError(origin_ + ": missing required key '" + key + "'");
    return it->second;
}

int RunConfig::get_int(const std::string& key, int fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    int v = 0;
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw UsageError(origin_ + ": '" + key + "' is not an integer");
    return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::uint64_t v = 0;
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw UsageError(origin_ + ": '" + key + "' is not an unsigned integer");
    return v;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    double v = 0;
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw UsageError(origin_ + ": '" + key + "' is not a number");
    return v;
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw UsageError(origin_ + ": '" + key + "' must be true or false");
}

void RunConfig::reject_unknown(const std::set<std::string>& known) const {
    std::string bad;
    for (const auto& [k, v] : values_)
        if (!known.count(k)) bad += (bad.empty() ? "" : ", ") + k;
    if (!bad.empty()) throw UsageError(origin_ + ": unknown key(s): " + bad);
}

}  // namespace cifgen::cli
