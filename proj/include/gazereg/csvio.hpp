#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gazereg::csv {

// Minimal strict CSV support: header row, fixed column count, no quoting
// (none of the formats we read or write needs it). Rows are exposed as
// string_views into an in-memory copy of the file.
class Reader {
public:
    Reader(const std::filesystem::path& path, char delimiter = ',');

    const std::vector<std::string>& header() const { return header_; }

    // Index of a header column, -1 if absent.
    int column(std::string_view name) const;

    // Advances to the next data row. Returns false at end of file.
    // `fields` is valid until the next call; `line_no` is 1-based.
    bool next(std::vector<std::string_view>& fields, std::size_t& line_no);

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    char delimiter_;
    std::string buffer_;
    std::size_t pos_ = 0;
    std::size_t line_no_ = 0;
    std::vector<std::string> header_;

    bool next_line(std::string_view& line);
};

// Empty fields and the spellings "NaN"/"nan"/"NAN" parse as quiet NaN.
// Anything else must be a full numeric literal.
double parse_double(std::string_view field, const std::filesystem::path& path, std::size_t line_no);
std::int64_t parse_int(std::string_view field, const std::filesystem::path& path, std::size_t line_no);

// Shortest representation that round-trips exactly.
std::string format_double(double v);
void append_double(std::string& out, double v);

} // namespace gazereg::csv
