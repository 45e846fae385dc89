#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cea/cli.hpp"
#include "cea/errors.hpp"

// Fixture manifest format, one directive per line:
//
//   fixture <name>
//   run <cli arguments>            (repeatable, executed in order)
//   compare <actual> <expected> exact | abs=<tolerance>
//   end
//
// `{dir}` expands to the manifest's directory and `{out}` to the fixture's
// scratch directory. With abs=<t>, tokens that parse as numbers must agree
// within t and all other tokens must match exactly.

namespace cea::cli {

namespace fs = std::filesystem;

namespace {

struct Comparison {
    std::string actual;
    std::string expected;
    bool exact = true;
    double tolerance = 0.0;
};

struct Fixture {
    std::string name;
    std::vector<std::vector<std::string>> runs;
    std::vector<Comparison> comparisons;
};

std::vector<std::string> words(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::vector<Fixture> parse_manifest(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open fixture manifest " + manifest.string());
    std::vector<Fixture> fixtures;
    Fixture* open = nullptr;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) {
        throw IoError(manifest.string() + ":" + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto w = words(line);
        if (w.empty()) continue;
        if (w[0] == "fixture") {
            if (open) fail("nested fixture");
            if (w.size() != 2) fail("expected 'fixture <name>'");
            fixtures.push_back({w[1], {}, {}});
            open = &fixtures.back();
        } else if (w[0] == "run") {
            if (!open) fail("'run' outside a fixture");
            open->runs.emplace_back(w.begin() + 1, w.end());
        } else if (w[0] == "compare") {
            if (!open) fail("'compare' outside a fixture");
            if (w.size() != 4) fail("expected 'compare <actual> <expected> <mode>'");
            Comparison c{w[1], w[2], true, 0.0};
            if (w[3].rfind("abs=", 0) == 0) {
                c.exact = false;
                const std::string t = w[3].substr(4);
                const auto res = std::from_chars(t.data(), t.data() + t.size(), c.tolerance);
                if (res.ec != std::errc{} || res.ptr != t.data() + t.size() || !(c.tolerance >= 0.0))
                    fail("bad tolerance '" + w[3] + "'");
            } else if (w[3] != "exact") {
                fail("unknown comparison mode '" + w[3] + "'");
            }
            open->comparisons.push_back(c);
        } else if (w[0] == "end") {
            if (!open) fail("'end' outside a fixture");
            open = nullptr;
        } else {
            fail("unknown directive '" + w[0] + "'");
        }
    }
    if (open) throw IoError(manifest.string() + ": fixture '" + open->name + "' is not closed");
    return fixtures;
}

std::string expand(std::string s, const fs::path& dir, const fs::path& out) {
    for (const auto& [key, value] : {std::pair<std::string, std::string>{"{dir}", dir.string()},
                                     std::pair<std::string, std::string>{"{out}", out.string()}}) {
        for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
            s.replace(pos, key.size(), value);
    }
    return s;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> tokens(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',' || ch == ' ' || ch == '\t' || ch == '|' || ch == '\r') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

bool as_number(const std::string& tok, double& v) {
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    return res.ec == std::errc{} && res.ptr == tok.data() + tok.size();
}

// Empty when equal; otherwise a description of the first difference.
std::string difference(const std::string& actual, const std::string& expected, const Comparison& c) {
    if (c.exact) {
        if (actual == expected) return {};
        std::istringstream a(actual), e(expected);
        std::string la, le;
        for (std::size_t line = 1;; ++line) {
            const bool more_a = static_cast<bool>(std::getline(a, la));
            const bool more_e = static_cast<bool>(std::getline(e, le));
            if (!more_a && !more_e) return "files differ in trailing bytes";
            if (more_a != more_e || la != le) return "first difference at line " + std::to_string(line);
        }
    }
    std::istringstream a(actual), e(expected);
    std::string la, le;
    for (std::size_t line = 1;; ++line) {
        const bool more_a = static_cast<bool>(std::getline(a, la));
        const bool more_e = static_cast<bool>(std::getline(e, le));
        if (!more_a && !more_e) return {};
        if (more_a != more_e) return "line count differs at line " + std::to_string(line);
        const auto ta = tokens(la), te = tokens(le);
        if (ta.size() != te.size()) return "token count differs at line " + std::to_string(line);
        for (std::size_t i = 0; i < ta.size(); ++i) {
            double va = 0.0, ve = 0.0;
            if (as_number(ta[i], va) && as_number(te[i], ve)) {
                if (!(std::abs(va - ve) <= c.tolerance))
                    return "line " + std::to_string(line) + ": " + ta[i] + " vs " + te[i] + " exceeds " +
                           std::to_string(c.tolerance);
            } else if (ta[i] != te[i]) {
                return "line " + std::to_string(line) + ": '" + ta[i] + "' vs '" + te[i] + "'";
            }
        }
    }
}

}  // namespace

std::vector<FixtureOutcome> replay_fixtures(const fs::path& manifest, const fs::path& scratch) {
    const auto fixtures = parse_manifest(manifest);
    const fs::path dir = manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path();
    std::vector<FixtureOutcome> outcomes;
    for (const auto& fx : fixtures) {
        FixtureOutcome outcome{fx.name, true, {}};
        const fs::path out = scratch / fx.name;
        fs::remove_all(out);
        fs::create_directories(out);
        for (const auto& run : fx.runs) {
            std::vector<std::string> args;
            for (const auto& a : run) args.push_back(expand(a, dir, out));
            std::ostringstream sink, err;
            const int code = run_cli(args, sink, err);
            if (code != 0) {
                outcome.passed = false;
                outcome.message = "command '" + (args.empty() ? std::string() : args.front()) + "' exited " +
                                  std::to_string(code) + ": " + err.str();
                break;
            }
        }
        if (outcome.passed) {
            for (const auto& c : fx.comparisons) {
                const fs::path actual = expand(c.actual, dir, out);
                const fs::path expected = expand(c.expected, dir, out);
                if (!fs::exists(actual)) {
                    outcome = {fx.name, false, "missing output " + actual.string()};
                    break;
                }
                if (!fs::exists(expected)) {
                    outcome = {fx.name, false, "missing expected file " + expected.string()};
                    break;
                }
                const std::string diff = difference(slurp(actual), slurp(expected), c);
                if (!diff.empty()) {
                    outcome = {fx.name, false, expected.string() + " vs " + actual.string() + ": " + diff};
                    break;
                }
            }
        }
        outcomes.push_back(std::move(outcome));
    }
    return outcomes;
}

}  // namespace cea::cli
