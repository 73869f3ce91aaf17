#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "perm/numeric.hpp"

namespace perm::io {

/// printf-style %.{digits}g.
std::string format_g(double value, int digits = 6);

std::vector<std::string> split_csv_line(std::string_view line);
std::string trim(std::string_view s);
double parse_double(std::string_view s);

/// Numeric CSV without header; every row must have the same width.
Matrix read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m, int digits = 6);

/// Plain `key=value` lines; blank lines and `#` comments are skipped.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const std::map<std::string, std::string>& kv);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace perm::io
