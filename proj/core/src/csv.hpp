#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace canopy::csv {

using Row = std::vector<std::string>;

std::string trim(std::string_view s);

// Splits one record; double-quoted fields may contain commas and "" escapes.
Row split_line(std::string_view line);

// Parses text into records, skipping blank lines. Handles CRLF.
std::vector<Row> parse(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

struct Table {
  Row header;
  std::vector<Row> rows;

  // Index of a header column; throws a validation error naming `source`.
  std::size_t column(std::string_view name, std::string_view source) const;
};

Table read_table(const std::filesystem::path& path);

double to_double(const std::string& field, std::string_view context);
long long to_int(const std::string& field, std::string_view context);

// Shortest text that round-trips through to_double.
std::string format_double(double v);
std::string format_float(float v);
// Fixed-point with the given number of decimals.
std::string format_fixed(double v, int decimals);

}  // namespace canopy::csv
