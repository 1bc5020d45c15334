#include "gazereg/csvio.hpp"
#include "gazereg/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace gazereg;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path;
}

} // namespace

TEST_CASE("csv reader parses header and rows") {
    const auto path = write_temp("csvio_basic.csv", "a,b,c\n1,2,3\n4,,NaN\n");
    csv::Reader reader(path);
    CHECK(reader.header() == std::vector<std::string>{"a", "b", "c"});
    CHECK(reader.column("b") == 1);
    CHECK(reader.column("missing") == -1);

    std::vector<std::string_view> fields;
    std::size_t line = 0;
    REQUIRE(reader.next(fields, line));
    CHECK(line == 2);
    CHECK(csv::parse_double(fields[0], path, line) == 1.0);
    REQUIRE(reader.next(fields, line));
    CHECK(std::isnan(csv::parse_double(fields[1], path, line)));
    CHECK(std::isnan(csv::parse_double(fields[2], path, line)));
    CHECK_FALSE(reader.next(fields, line));
}

TEST_CASE("csv reader rejects ragged rows with the line number") {
    const auto path = write_temp("csvio_ragged.csv", "a,b\n1,2\n1,2,3\n");
    csv::Reader reader(path);
    std::vector<std::string_view> fields;
    std::size_t line = 0;
    REQUIRE(reader.next(fields, line));
    CHECK_THROWS_WITH_AS(reader.next(fields, line), doctest::Contains(":3"), ParseError);
}

TEST_CASE("csv reader rejects an empty file") {
    const auto path = write_temp("csvio_empty.csv", "");
    CHECK_THROWS_AS(csv::Reader{path}, ParseError);
}

TEST_CASE("numeric parsing is strict") {
    const auto path = std::filesystem::path("test.csv");
    CHECK_THROWS_AS(csv::parse_double("12x", path, 1), ParseError);
    CHECK_THROWS_AS(csv::parse_int("1.5", path, 1), ParseError);
    CHECK(csv::parse_int("-42", path, 1) == -42);
}

TEST_CASE("format_double round-trips exactly") {
    for (double v : {0.1, -3.14159, 1e-12, 12345.6789, 0.0}) {
        const std::string s = csv::format_double(v);
        CHECK(csv::parse_double(s, "x", 1) == v);
    }
    CHECK(csv::format_double(std::nan("")) == "NaN");
}
