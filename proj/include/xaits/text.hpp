#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xaits {

// Shortest representation that parses back to the identical double.
std::string format_double(double value);

std::optional<double> parse_double(std::string_view token);

std::string_view trim(std::string_view text);

std::vector<std::string_view> split(std::string_view text, char separator);

std::string read_file(const std::filesystem::path& path);

// Writes through a temporary sibling and renames, so readers never observe a
// half-written file.
void write_file(const std::filesystem::path& path, std::string_view contents);

std::string hex64(std::uint64_t value);

}  // namespace xaits
