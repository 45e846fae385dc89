#pragma once

// Line-oriented, bit-exact text records. Each line is
//   <name> <kind> <shape...> <values...>
// with doubles written as hexadecimal floating point so they round-trip
// exactly (including inf and nan).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cea/numerics.hpp"

namespace cea::serial {

std::string format_double(double v);
double parse_double(std::string_view token);

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void text(std::string_view name, std::string_view value);
    void integer(std::string_view name, std::int64_t value);
    void real(std::string_view name, double value);
    void reals(std::string_view name, std::span<const double> values);
    void vector(std::string_view name, const Vector& v);
    void matrix(std::string_view name, const Matrix& m);
    void integers(std::string_view name, std::span<const std::int64_t> values);

private:
    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    std::string text(std::string_view name);
    std::int64_t integer(std::string_view name);
    double real(std::string_view name);
    std::vector<double> reals(std::string_view name);
    Vector vector(std::string_view name);
    Matrix matrix(std::string_view name);
    std::vector<std::int64_t> integers(std::string_view name);

    // Name of the next record without consuming it; empty at end of input.
    std::string peek_name();

private:
    std::vector<std::string> next_line(std::string_view name, std::string_view kind);
    std::istream& in_;
};

}  // namespace cea::serial
