#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

// Minimal RFC 4180 CSV support and lossless number formatting.
namespace stalt::csv {

// 17 significant digits, as printf("%.17g"), so doubles round-trip exactly.
std::string format_double(double value);
double parse_double(std::string_view text);

std::string escape(std::string_view field);
std::vector<std::string> split_line(std::string_view line);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Index of a header column; throws when absent.
    std::size_t column(std::string_view name) const;
    bool has_column(std::string_view name) const;
};

// Reads a header row followed by data rows; every row must match the header width.
Table read(std::istream& in);
Table read_file(const std::string& path);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace stalt::csv
