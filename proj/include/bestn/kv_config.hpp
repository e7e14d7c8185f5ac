#pragma once

// `key = value` text files used for run configs and scorer headers. Lines
// starting with '#' are comments; keys are unique. Readers mark keys as
// consumed so callers can reject anything they did not recognise.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace bestn {

class KvConfig {
public:
    KvConfig() = default;
    static KvConfig parse(std::string_view text, const std::string& source = "<text>");
    static KvConfig read(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    std::optional<std::string> get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;

    // Throws UsageError naming every key nobody asked for.
    void reject_unknown() const;

    // Directory of the file the config was read from (for relative paths).
    const std::filesystem::path& base_dir() const { return base_dir_; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string to_string() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
    std::filesystem::path base_dir_;
    std::string source_;
};

std::vector<std::string> split_list(std::string_view text, char sep = ',');
double parse_double(std::string_view text, std::string_view what);
std::uint64_t parse_uint(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);
std::vector<std::size_t> parse_size_list(std::string_view text, std::string_view what);
std::vector<double> parse_double_list(std::string_view text, std::string_view what);

// Shortest "%.17g" rendering; parse_double of it reproduces the bits.
std::string format_double(double value);

}  // namespace bestn
