#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cardiosynth {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string trim(std::string_view s);

/// Whole-string parsers; throw std::invalid_argument naming the text on failure.
long long parse_int(std::string_view s);
std::uint64_t parse_uint64(std::string_view s);
double parse_double(std::string_view s);
/// true/false, yes/no, on/off, 1/0.
bool parse_bool(std::string_view s);
/// Comma-separated items, each trimmed.
std::vector<std::string> split_list(std::string_view s, char sep = ',');

}  // namespace cardiosynth
