#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "cea/cli.hpp"
#include "cea/errors.hpp"

namespace cea::cli {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = s.find(',', start);
        out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view expected) {
    throw ConfigError(std::string(key),
                      "invalid value '" + std::string(value) + "' for '" + std::string(key) + "': expected " +
                          std::string(expected));
}

double to_real(std::string_view key, std::string_view v) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out))
        bad(key, v, "a finite number");
    return out;
}

std::int64_t to_int(std::string_view key, std::string_view v) {
    std::int64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size()) bad(key, v, "an integer");
    return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size()) bad(key, v, "a non-negative integer");
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad(key, v, "true or false");
}

std::vector<double> to_reals(std::string_view key, std::string_view v) {
    std::vector<double> out;
    for (auto item : split_list(v)) out.push_back(to_real(key, item));
    return out;
}

std::string real_text(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string reals_text(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + real_text(values[i]);
    return out;
}

template <typename T>
std::string ints_text(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
    return out;
}

template <typename Fn>
auto wrap(std::string_view key, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string(key), std::string(key) + ": " + e.what());
    }
}

struct Field {
    std::string_view key;
    std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define REAL_FIELD(KEY, MEMBER)                                                                              \
    Field {                                                                                                  \
        KEY, [](RunConfig& c, std::string_view k, std::string_view v) { c.MEMBER = to_real(k, v); },        \
            [](const RunConfig& c) { return real_text(c.MEMBER); }                                           \
    }
#define INT_FIELD(KEY, MEMBER)                                                                               \
    Field {                                                                                                  \
        KEY,                                                                                                 \
            [](RunConfig& c, std::string_view k, std::string_view v) {                                      \
                c.MEMBER = static_cast<decltype(c.MEMBER)>(to_int(k, v));                                    \
            },                                                                                               \
            [](const RunConfig& c) { return std::to_string(c.MEMBER); }                                      \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"data.source",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             if (v == "synthetic") c.experiment.data.kind = DatasetSource::Kind::Synthetic;
             else if (v == "csv") c.experiment.data.kind = DatasetSource::Kind::Csv;
             else bad(k, v, "synthetic or csv");
         },
         [](const RunConfig& c) {
             return std::string(c.experiment.data.kind == DatasetSource::Kind::Csv ? "csv" : "synthetic");
         }},
        {"data.name", [](RunConfig& c, std::string_view, std::string_view v) { c.experiment.data.name = v; },
         [](const RunConfig& c) { return c.experiment.data.name; }},
        {"data.path", [](RunConfig& c, std::string_view, std::string_view v) { c.experiment.data.path = v; },
         [](const RunConfig& c) { return c.experiment.data.path.string(); }},
        {"data.label_column",
         [](RunConfig& c, std::string_view, std::string_view v) { c.experiment.data.label_column = v; },
         [](const RunConfig& c) { return c.experiment.data.label_column; }},
        {"data.delimiter",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             if (v == "tab") c.experiment.data.delimiter = '\t';
             else if (v.size() == 1 && v != "#") c.experiment.data.delimiter = v[0];
             else bad(k, v, "a single character or 'tab'");
         },
         [](const RunConfig& c) {
             return c.experiment.data.delimiter == '\t' ? std::string("tab") : std::string(1, c.experiment.data.delimiter);
         }},
        INT_FIELD("data.classes", experiment.data.synthetic.classes),
        INT_FIELD("data.dim", experiment.data.synthetic.dim),
        INT_FIELD("data.per_class", experiment.data.synthetic.per_class),
        REAL_FIELD("data.separation", experiment.data.synthetic.separation),
        {"data.seed",
         [](RunConfig& c, std::string_view k, std::string_view v) { c.experiment.data.synthetic.seed = to_uint(k, v); },
         [](const RunConfig& c) { return std::to_string(c.experiment.data.synthetic.seed); }},
        REAL_FIELD("split.train", experiment.split.train),
        REAL_FIELD("split.val", experiment.split.val),
        REAL_FIELD("split.test", experiment.split.test),
        {"train.hidden",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             std::vector<int> widths;
             for (auto item : split_list(v)) widths.push_back(static_cast<int>(to_int(k, item)));
             c.experiment.train.hidden = widths;
         },
         [](const RunConfig& c) { return ints_text(c.experiment.train.hidden); }},
        {"train.loss",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             c.experiment.train.loss = wrap(k, [&] { return parse_loss(v); });
         },
         [](const RunConfig& c) { return std::string(to_string(c.experiment.train.loss)); }},
        REAL_FIELD("train.logitnorm_temperature", experiment.train.logitnorm_temperature),
        INT_FIELD("train.epochs", experiment.train.epochs),
        INT_FIELD("train.batch_size", experiment.train.batch_size),
        REAL_FIELD("train.learning_rate", experiment.train.learning_rate),
        REAL_FIELD("train.momentum", experiment.train.momentum),
        {"detectors",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             if (v == "all") {
                 c.experiment.detectors = all_detectors();
                 return;
             }
             std::vector<DetectorKind> kinds;
             for (auto item : split_list(v)) kinds.push_back(wrap(k, [&] { return parse_detector(item); }));
             c.experiment.detectors = kinds;
         },
         [](const RunConfig& c) {
             std::string out;
             for (std::size_t i = 0; i < c.experiment.detectors.size(); ++i)
                 out += (i ? "," : "") + std::string(to_string(c.experiment.detectors[i]));
             return out;
         }},
        INT_FIELD("detector.knn_k", experiment.detector_params.knn_k),
        REAL_FIELD("detector.react_percentile", experiment.detector_params.react_percentile),
        REAL_FIELD("detector.dice_sparsity", experiment.detector_params.dice_sparsity),
        REAL_FIELD("detector.ash_percentile", experiment.detector_params.ash_percentile),
        INT_FIELD("detector.vim_dim", experiment.detector_params.vim_dim),
        REAL_FIELD("detector.ebo_temperature", experiment.detector_params.ebo_temperature),
        REAL_FIELD("detector.ridge", experiment.detector_params.ridge),
        {"cea.enabled",
         [](RunConfig& c, std::string_view k, std::string_view v) { c.experiment.cea_enabled = to_bool(k, v); },
         [](const RunConfig& c) { return std::string(c.experiment.cea_enabled ? "true" : "false"); }},
        REAL_FIELD("cea.percentile", experiment.cea.percentile),
        REAL_FIELD("cea.rho", experiment.cea.rho),
        REAL_FIELD("cea.gamma", experiment.cea.gamma),
        {"cea.norm",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             c.experiment.cea.norm = wrap(k, [&] { return parse_norm(v); });
         },
         [](const RunConfig& c) { return std::string(to_string(c.experiment.cea.norm)); }},
        {"cea.scope",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             c.experiment.cea.scope = wrap(k, [&] { return parse_scope(v); });
         },
         [](const RunConfig& c) { return std::string(to_string(c.experiment.cea.scope)); }},
        {"eval.alphas",
         [](RunConfig& c, std::string_view k, std::string_view v) { c.experiment.alphas = to_reals(k, v); },
         [](const RunConfig& c) { return reals_text(c.experiment.alphas); }},
        {"eval.max_variables",
         [](RunConfig& c, std::string_view k, std::string_view v) { c.experiment.max_variables = to_uint(k, v); },
         [](const RunConfig& c) { return std::to_string(c.experiment.max_variables); }},
        {"eval.scaling",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             if (v == "standardized") c.experiment.space = ScalingSpace::Standardized;
             else if (v == "raw") c.experiment.space = ScalingSpace::Raw;
             else bad(k, v, "standardized or raw");
         },
         [](const RunConfig& c) {
             return std::string(c.experiment.space == ScalingSpace::Raw ? "raw" : "standardized");
         }},
        {"seeds",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             std::vector<std::uint64_t> seeds;
             for (auto item : split_list(v)) seeds.push_back(to_uint(k, item));
             c.experiment.seeds = seeds;
         },
         [](const RunConfig& c) { return ints_text(c.experiment.seeds); }},
        {"threads",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             c.experiment.threads = static_cast<unsigned>(to_uint(k, v));
         },
         [](const RunConfig& c) { return std::to_string(c.experiment.threads); }},
        {"out", [](RunConfig& c, std::string_view, std::string_view v) { c.out_dir = v; },
         [](const RunConfig& c) { return c.out_dir.string(); }},
        {"snapshots", [](RunConfig& c, std::string_view, std::string_view v) { c.snapshot_dir = v; },
         [](const RunConfig& c) { return c.snapshot_dir.string(); }},
        {"ablate.axis",
         [](RunConfig& c, std::string_view k, std::string_view v) {
             c.ablate_axis = wrap(k, [&] { return parse_axis(v); });
         },
         [](const RunConfig& c) { return std::string(to_string(c.ablate_axis)); }},
        {"ablate.values",
         [](RunConfig& c, std::string_view k, std::string_view v) { c.ablate_values = to_reals(k, v); },
         [](const RunConfig& c) { return reals_text(c.ablate_values); }},
        {"diagnose.alphas",
         [](RunConfig& c, std::string_view k, std::string_view v) { c.diagnose_alphas = to_reals(k, v); },
         [](const RunConfig& c) { return reals_text(c.diagnose_alphas); }},
        {"diagnose.points",
         [](RunConfig& c, std::string_view k, std::string_view v) { c.diagnose_points = to_uint(k, v); },
         [](const RunConfig& c) { return std::to_string(c.diagnose_points); }},
    };
    return table;
}

#undef REAL_FIELD
#undef INT_FIELD

}  // namespace

RunConfig default_config() {
    RunConfig c;
    c.experiment.threads = 0;
    return c;
}

void RunConfig::validate() const {
    experiment.validate();
    if (out_dir.empty()) throw ConfigError("out", "an output directory is required");
    if (diagnose_alphas.empty()) throw ConfigError("diagnose.alphas", "at least one alpha is required");
    for (std::size_t i = 0; i < diagnose_alphas.size(); ++i) {
        if (!(diagnose_alphas[i] > 0.0)) throw ConfigError("diagnose.alphas", "alphas must be positive");
        if (i > 0 && !(diagnose_alphas[i] > diagnose_alphas[i - 1]))
            throw ConfigError("diagnose.alphas", "alphas must be strictly ascending");
    }
    if (diagnose_points == 0) throw ConfigError("diagnose.points", "must be positive");
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
    key = trim(key);
    value = trim(value);
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(config, key, value);
            return;
        }
    }
    throw ConfigError(std::string(key), "unknown config key '" + std::string(key) + "'");
}

void apply_config_text(RunConfig& config, std::string_view text) {
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("", "line " + std::to_string(line_no) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        if (!seen.insert(std::string(key)).second)
            throw ConfigError(std::string(key), "duplicate config key '" + std::string(key) + "'");
        apply_setting(config, key, line.substr(eq + 1));
    }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    apply_config_text(config, buf.str());
}

std::string dump_config(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key;
        out += " = ";
        out += f.get(config);
        out += '\n';
    }
    return out;
}

}  // namespace cea::cli
