#include "cea/serial.hpp"

#include <array>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "cea/errors.hpp"

namespace cea::serial {

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::hex);
    if (ec != std::errc()) throw IoError("cannot format double");
    return std::string(buf.data(), ptr);
}

double parse_double(std::string_view token) {
    double v = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(first, last, v, std::chars_format::hex);
    if (ec != std::errc() || ptr != last) {
        throw IoError("malformed number '" + std::string(token) + "'");
    }
    return v;
}

namespace {

// Text values may contain spaces; they are stored escaped.
std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '\\') out += "\\\\";
        else if (c == ' ') out += "\\s";
        else if (c == '\n') out += "\\n";
        else out.push_back(c);
    }
    return out.empty() ? "\\0" : out;
}

std::string unescape(std::string_view s) {
    if (s == "\\0") return {};
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            const char c = s[++i];
            out.push_back(c == 's' ? ' ' : (c == 'n' ? '\n' : c));
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

std::size_t to_size(const std::string& s) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("malformed count '" + s + "'");
    return v;
}

}  // namespace

void Writer::text(std::string_view name, std::string_view value) {
    out_ << name << " text " << escape(value) << '\n';
}

void Writer::integer(std::string_view name, std::int64_t value) {
    out_ << name << " int " << value << '\n';
}

void Writer::real(std::string_view name, double value) {
    out_ << name << " real " << format_double(value) << '\n';
}

void Writer::reals(std::string_view name, std::span<const double> values) {
    out_ << name << " reals " << values.size();
    for (double v : values) out_ << ' ' << format_double(v);
    out_ << '\n';
}

void Writer::vector(std::string_view name, const Vector& v) { reals(name, as_span(v)); }

void Writer::matrix(std::string_view name, const Matrix& m) {
    out_ << name << " matrix " << m.rows() << ' ' << m.cols();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out_ << ' ' << format_double(m(i, j));
    }
    out_ << '\n';
}

void Writer::integers(std::string_view name, std::span<const std::int64_t> values) {
    out_ << name << " ints " << values.size();
    for (auto v : values) out_ << ' ' << v;
    out_ << '\n';
}

std::vector<std::string> Reader::next_line(std::string_view name, std::string_view kind) {
    std::string line;
    if (!std::getline(in_, line)) {
        throw IoError("unexpected end of record, expected '" + std::string(name) + "'");
    }
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    for (std::string t; ss >> t;) tokens.push_back(std::move(t));
    if (tokens.size() < 2 || tokens[0] != name || tokens[1] != kind) {
        throw IoError("expected record '" + std::string(name) + " " + std::string(kind) + "', got '" +
                      line.substr(0, 60) + "'");
    }
    tokens.erase(tokens.begin(), tokens.begin() + 2);
    return tokens;
}

std::string Reader::text(std::string_view name) {
    auto t = next_line(name, "text");
    if (t.size() != 1) throw IoError("malformed text record");
    return unescape(t[0]);
}

std::int64_t Reader::integer(std::string_view name) {
    auto t = next_line(name, "int");
    if (t.size() != 1) throw IoError("malformed int record");
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(t[0].data(), t[0].data() + t[0].size(), v);
    if (ec != std::errc() || ptr != t[0].data() + t[0].size()) throw IoError("malformed int");
    return v;
}

double Reader::real(std::string_view name) {
    auto t = next_line(name, "real");
    if (t.size() != 1) throw IoError("malformed real record");
    return parse_double(t[0]);
}

std::vector<double> Reader::reals(std::string_view name) {
    auto t = next_line(name, "reals");
    if (t.empty() || to_size(t[0]) != t.size() - 1) throw IoError("malformed reals record");
    std::vector<double> out;
    out.reserve(t.size() - 1);
    for (std::size_t i = 1; i < t.size(); ++i) out.push_back(parse_double(t[i]));
    return out;
}

Vector Reader::vector(std::string_view name) {
    const auto v = reals(name);
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix Reader::matrix(std::string_view name) {
    auto t = next_line(name, "matrix");
    if (t.size() < 2) throw IoError("malformed matrix record");
    const auto r = to_size(t[0]);
    const auto c = to_size(t[1]);
    if (t.size() != 2 + r * c) throw IoError("matrix record has wrong entry count");
    Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    std::size_t k = 2;
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_double(t[k++]);
        }
    }
    return m;
}

std::vector<std::int64_t> Reader::integers(std::string_view name) {
    auto t = next_line(name, "ints");
    if (t.empty() || to_size(t[0]) != t.size() - 1) throw IoError("malformed ints record");
    std::vector<std::int64_t> out;
    for (std::size_t i = 1; i < t.size(); ++i) {
        std::int64_t v = 0;
        auto [ptr, ec] = std::from_chars(t[i].data(), t[i].data() + t[i].size(), v);
        if (ec != std::errc()) throw IoError("malformed int");
        out.push_back(v);
    }
    return out;
}

std::string Reader::peek_name() {
    const auto pos = in_.tellg();
    std::string line;
    if (!std::getline(in_, line)) {
        in_.clear();
        in_.seekg(pos);
        return {};
    }
    in_.seekg(pos);
    std::istringstream ss(line);
    std::string name;
    ss >> name;
    return name;
}

}  // namespace cea::serial
