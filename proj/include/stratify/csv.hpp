#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace stratify::csv {

// A parsed comma-separated file: one header row plus data rows. Fields may be
// double-quoted ("" escapes a quote); trailing '\r' is stripped.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or -1 when absent.
  long column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);
Table parse(std::istream& in, const std::string& source_name);

std::vector<std::string> split_line(std::string_view line);

// Quotes a field only when it contains a separator, quote or newline.
std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

}  // namespace stratify::csv
