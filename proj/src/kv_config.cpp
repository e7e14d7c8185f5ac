#include "bestn/kv_config.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bestn/error.hpp"

namespace bestn {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

KvConfig KvConfig::parse(std::string_view text, const std::string& source) {
    KvConfig cfg;
    cfg.source_ = source;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            throw UsageError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key(trim(body.substr(0, eq)));
        const std::string value(trim(body.substr(eq + 1)));
        if (key.empty()) throw UsageError(source + ":" + std::to_string(line_no) + ": empty key");
        if (!cfg.values_.emplace(key, value).second) {
            throw UsageError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }
    return cfg;
}

KvConfig KvConfig::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    KvConfig cfg = parse(ss.str(), path.string());
    cfg.base_dir_ = path.parent_path();
    return cfg;
}

std::optional<std::string> KvConfig::get(const std::string& key) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KvConfig::get_or(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

std::string KvConfig::require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw UsageError((source_.empty() ? std::string("config") : source_) + ": missing key '" + key + "'");
    return *v;
}

void KvConfig::reject_unknown() const {
    std::string unknown;
    for (const auto& [key, _] : values_) {
        if (!consumed_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    }
    if (!unknown.empty()) {
        throw UsageError((source_.empty() ? std::string("config") : source_) + ": unknown key(s): " + unknown);
    }
}

std::string KvConfig::to_string() const {
    std::string out;
    for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
    return out;
}

std::vector<std::string> split_list(std::string_view text, char sep) {
    std::vector<std::string> out;
    if (trim(text).empty()) return out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = text.find(sep, start);
        out.emplace_back(trim(text.substr(start, pos == std::string_view::npos ? text.npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_double(std::string_view text, std::string_view what) {
    const std::string s(trim(text));
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) {
        throw UsageError("invalid number for " + std::string(what) + ": '" + s + "'");
    }
    return v;
}

std::uint64_t parse_uint(std::string_view text, std::string_view what) {
    const std::string s(trim(text));
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s.front() == '-' || end != s.c_str() + s.size() || errno == ERANGE) {
        throw UsageError("invalid non-negative integer for " + std::string(what) + ": '" + s + "'");
    }
    return v;
}

bool parse_bool(std::string_view text, std::string_view what) {
    const auto s = trim(text);
    if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "off" || s == "no") return false;
    throw UsageError("invalid boolean for " + std::string(what) + ": '" + std::string(s) + "'");
}

std::vector<std::size_t> parse_size_list(std::string_view text, std::string_view what) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(text)) out.push_back(parse_uint(item, what));
    return out;
}

std::vector<double> parse_double_list(std::string_view text, std::string_view what) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) out.push_back(parse_double(item, what));
    return out;
}

std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

}  // namespace bestn
