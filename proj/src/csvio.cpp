#include "gazereg/csvio.hpp"

#include "gazereg/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

namespace gazereg::csv {

namespace {

std::string location(const std::filesystem::path& path, std::size_t line_no) {
    return path.string() + ":" + std::to_string(line_no);
}

void split_fields(std::string_view line, char delimiter, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        std::size_t end = line.find(delimiter, start);
        if (end == std::string_view::npos) {
            out.push_back(line.substr(start));
            return;
        }
        out.push_back(line.substr(start, end - start));
        start = end + 1;
    }
}

} // namespace

Reader::Reader(const std::filesystem::path& path, char delimiter)
    : path_(path), delimiter_(delimiter) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    buffer_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

    std::string_view line;
    if (!next_line(line)) {
        throw ParseError(location(path_, 1) + ": empty file, expected a header row");
    }
    std::vector<std::string_view> fields;
    split_fields(line, delimiter_, fields);
    for (auto f : fields) {
        header_.emplace_back(f);
    }
}

bool Reader::next_line(std::string_view& line) {
    while (pos_ < buffer_.size()) {
        std::size_t end = buffer_.find('\n', pos_);
        std::size_t len = (end == std::string::npos ? buffer_.size() : end) - pos_;
        line = std::string_view(buffer_).substr(pos_, len);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        pos_ = (end == std::string::npos) ? buffer_.size() : end + 1;
        ++line_no_;
        if (!line.empty()) {
            return true;
        }
    }
    return false;
}

int Reader::column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
        if (header_[i] == name) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

bool Reader::next(std::vector<std::string_view>& fields, std::size_t& line_no) {
    std::string_view line;
    if (!next_line(line)) {
        return false;
    }
    split_fields(line, delimiter_, fields);
    line_no = line_no_;
    if (fields.size() != header_.size()) {
        throw ParseError(location(path_, line_no_) + ": expected " + std::to_string(header_.size()) +
                         " fields, got " + std::to_string(fields.size()));
    }
    return true;
}

double parse_double(std::string_view field, const std::filesystem::path& path, std::size_t line_no) {
    if (field.empty() || field == "NaN" || field == "nan" || field == "NAN") {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw ParseError(location(path, line_no) + ": not a number: '" + std::string(field) + "'");
    }
    return value;
}

std::int64_t parse_int(std::string_view field, const std::filesystem::path& path, std::size_t line_no) {
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw ParseError(location(path, line_no) + ": not an integer: '" + std::string(field) + "'");
    }
    return value;
}

std::string format_double(double v) {
    std::string out;
    append_double(out, v);
    return out;
}

void append_double(std::string& out, double v) {
    if (std::isnan(v)) {
        out += "NaN";
        return;
    }
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    out.append(buf, ptr);
}

} // namespace gazereg::csv
