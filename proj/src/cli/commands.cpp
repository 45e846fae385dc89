#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "cea/cli.hpp"
#include "cea/errors.hpp"
#include "cea/rng.hpp"
#include "cea/serial.hpp"

namespace cea::cli {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xF];
    }
    return out;
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

std::string real_text(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

void write_manifest(const fs::path& out) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(out)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), out).generic_string();
        if (rel != "manifest.txt") files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    std::string text;
    for (const auto& rel : files) text += sha256_file(out / rel) + "  " + rel + "\n";
    write_file(out / "manifest.txt", text);
}

fs::path snapshot_path(const RunConfig& config, std::uint64_t seed) {
    const fs::path dir = config.snapshot_dir.empty() ? config.out_dir / "model" : config.snapshot_dir;
    return dir / ("model-seed" + std::to_string(seed) + ".txt");
}

std::string dataset_fingerprint(const Dataset& dataset) {
    std::string bytes;
    bytes += dataset.name;
    bytes += '\n';
    const auto* f = reinterpret_cast<const char*>(dataset.features.data());
    bytes.append(f, static_cast<std::size_t>(dataset.features.size()) * sizeof(double));
    for (int label : dataset.labels) bytes += std::to_string(label) + ",";
    for (Split s : dataset.splits) bytes += static_cast<char>('0' + static_cast<int>(s));
    return sha256_hex(bytes);
}

void save_snapshot(const Snapshot& snapshot, std::ostream& out) {
    serial::Writer w(out);
    w.text("format", "cea-snapshot-v1");
    w.text("fingerprint", snapshot.fingerprint);
    w.vector("standardization_mean", snapshot.standardization.mean);
    w.vector("standardization_scale", snapshot.standardization.scale);
    std::vector<std::int64_t> constant;
    for (bool c : snapshot.standardization.constant) constant.push_back(c ? 1 : 0);
    w.integers("standardization_constant", constant);
    save_model(snapshot.model, out);
}

Snapshot load_snapshot(std::istream& in) {
    serial::Reader r(in);
    if (r.text("format") != "cea-snapshot-v1") throw IoError("not a cea-snapshot-v1 record");
    Snapshot s;
    s.fingerprint = r.text("fingerprint");
    s.standardization.mean = r.vector("standardization_mean");
    s.standardization.scale = r.vector("standardization_scale");
    for (auto c : r.integers("standardization_constant")) s.standardization.constant.push_back(c != 0);
    s.model = load_model(in);
    return s;
}

namespace {

// ---------------------------------------------------------------------------
// Commands. Each computes everything in memory first and writes files last,
// so a failure never leaves partial output behind.

using Files = std::map<fs::path, std::string>;

void commit(const RunConfig& config, const Files& files) {
    for (const auto& [path, content] : files) write_file(path, content);
    write_file(config.out_dir / "config.txt", dump_config(config));
    write_manifest(config.out_dir);
}

Snapshot read_snapshot(const RunConfig& config, std::uint64_t seed) {
    const fs::path path = snapshot_path(config, seed);
    if (!fs::exists(path))
        throw IoError("missing snapshot " + path.string() + " for seed " + std::to_string(seed) +
                      " (run the train command first)");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open snapshot " + path.string());
    return load_snapshot(in);
}

void require_snapshots(const RunConfig& config) {
    for (auto seed : config.experiment.seeds) {
        const fs::path path = snapshot_path(config, seed);
        if (!fs::exists(path))
            throw IoError("missing snapshot " + path.string() + " for seed " + std::to_string(seed) +
                          " (run the train command first)");
    }
}

// Loads the seed's snapshot and checks it was trained on this exact split.
ModelProvider snapshot_provider(const RunConfig& config) {
    return [&config](std::uint64_t seed, const Dataset& dataset) -> std::optional<MlpModel> {
        Snapshot s = read_snapshot(config, seed);
        if (s.fingerprint != dataset_fingerprint(dataset))
            throw DatasetError("snapshot " + snapshot_path(config, seed).string() +
                               " was trained on different data or a different split");
        return std::move(s.model);
    };
}

int cmd_train(const RunConfig& config, std::ostream& out) {
    const auto& ex = config.experiment;
    const RawTable raw = load_raw_table(ex.data);
    Files files;
    for (auto seed : ex.seeds) {
        const Dataset dataset = build_dataset(ex, raw, seed);
        TrainOptions opts = ex.train;
        opts.seed = seed;
        const TrainResult result = train_with_history(dataset, opts);
        const SplitView test = dataset.view(Split::Test);
        const double acc = accuracy(result.model, test.features, test.labels);

        std::ostringstream snap;
        save_snapshot({dataset_fingerprint(dataset), dataset.standardization, result.model}, snap);
        files[snapshot_path(config, seed)] = snap.str();

        std::ostringstream history;
        history << "epoch,train_loss,val_loss\n";
        history << "0," << real_text(result.initial_train_loss) << ",\n";
        for (const auto& e : result.history)
            history << e.epoch << "," << real_text(e.train_loss) << "," << real_text(e.val_loss) << "\n";
        files[config.out_dir / "model" / ("history-seed" + std::to_string(seed) + ".csv")] = history.str();

        char line[160];
        std::snprintf(line, sizeof line, "seed %llu: test accuracy %.4f (best epoch %d of %d)\n",
                      static_cast<unsigned long long>(seed), acc, result.best_epoch, opts.epochs);
        out << line;
    }
    commit(config, files);
    return 0;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
    require_snapshots(config);
    const auto& ex = config.experiment;
    Files files;
    auto observer = [&](const SeedContext& ctx, const SeedEvaluation& ev) {
        std::vector<ScorerEntry> entries;
        for (std::size_t d = 0; d < ctx.states.size(); ++d) {
            ScorerEntry e;
            e.detector = ctx.states[d];
            e.cea_enabled = ex.cea_enabled;
            if (ex.cea_enabled) e.calibration = ev.calibrations.front()[d];
            entries.push_back(std::move(e));
        }
        std::ostringstream bundle;
        save_bundle(entries, bundle);
        files[config.out_dir / "scores" / ("bundle-seed" + std::to_string(ctx.seed) + ".txt")] = bundle.str();
    };
    const auto results = run_experiment(ex, snapshot_provider(config), observer);

    std::ostringstream jsonl, csv;
    write_results_jsonl(results, jsonl);
    write_results_csv(results, csv);
    files[config.out_dir / "results" / "results.jsonl"] = jsonl.str();
    files[config.out_dir / "results" / "results.csv"] = csv.str();
    const std::string table = render_table(results);
    files[config.out_dir / "report" / "table.md"] = table;
    commit(config, files);
    out << table;
    return 0;
}

int cmd_ablate(const RunConfig& config, std::ostream& out) {
    require_snapshots(config);
    const std::vector<double> values =
        config.ablate_values.empty() ? default_axis_values(config.ablate_axis) : config.ablate_values;
    const auto rows = ablation_sweep(config.experiment, config.ablate_axis, values, snapshot_provider(config));
    std::ostringstream csv;
    write_ablation_csv(rows, csv);
    Files files;
    files[config.out_dir / "results" / ("ablation-" + std::string(to_string(config.ablate_axis)) + ".csv")] =
        csv.str();
    commit(config, files);
    out << csv.str();
    return 0;
}

int cmd_diagnose(const RunConfig& config, std::ostream& out) {
    require_snapshots(config);
    const auto& ex = config.experiment;
    const auto& alphas = config.diagnose_alphas;
    const RawTable raw = load_raw_table(ex.data);

    std::ostringstream detail;
    detail << "seed,row,variable";
    for (double a : alphas) detail << ",max_softmax@" << real_text(a);
    for (double a : alphas) detail << ",max_penultimate@" << real_text(a);
    detail << "\n";

    std::vector<CompensatedSum> softmax_sum(alphas.size()), act_sum(alphas.size());
    std::size_t records = 0;
    for (auto seed : ex.seeds) {
        const Dataset dataset = build_dataset(ex, raw, seed);
        const Snapshot snap = read_snapshot(config, seed);
        if (snap.fingerprint != dataset_fingerprint(dataset))
            throw DatasetError("snapshot for seed " + std::to_string(seed) + " was trained on different data");

        std::vector<std::size_t> rows = dataset.indices(Split::Test);
        if (rows.size() > config.diagnose_points) {
            Rng rng(derive_seed(seed, "diagnose"));
            std::shuffle(rows.begin(), rows.end(), rng);
            rows.resize(config.diagnose_points);
            std::sort(rows.begin(), rows.end());
        }
        const auto variables = select_variables(dataset, ex.max_variables, seed);
        for (std::size_t row : rows) {
            const Vector x = dataset.features.row(static_cast<Eigen::Index>(row)).transpose();
            for (std::size_t var : variables) {
                const auto recs = scaling_diagnostic(snap.model, x, var, alphas);
                detail << seed << "," << row << "," << var;
                for (const auto& r : recs) detail << "," << real_text(r.max_softmax);
                for (const auto& r : recs) detail << "," << real_text(r.max_penultimate);
                detail << "\n";
                for (std::size_t a = 0; a < recs.size(); ++a) {
                    softmax_sum[a].add(recs[a].max_softmax);
                    act_sum[a].add(recs[a].max_penultimate);
                }
                ++records;
            }
        }
    }
    if (records == 0) throw DatasetError("diagnose found no test points or eligible variables");

    std::ostringstream summary;
    summary << "alpha,mean_max_softmax,mean_max_penultimate,records\n";
    for (std::size_t a = 0; a < alphas.size(); ++a) {
        const double n = static_cast<double>(records);
        summary << real_text(alphas[a]) << "," << real_text(softmax_sum[a].value() / n) << ","
                << real_text(act_sum[a].value() / n) << "," << records << "\n";
    }
    Files files;
    files[config.out_dir / "results" / "diagnose.csv"] = detail.str();
    files[config.out_dir / "report" / "diagnose-summary.csv"] = summary.str();
    commit(config, files);
    out << summary.str();
    return 0;
}

int cmd_render(const std::string& input, const std::string& output, std::ostream& out) {
    std::ifstream in(input, std::ios::binary);
    if (!in) throw IoError("cannot open results file " + input);
    const auto results = read_results_jsonl(in);
    const std::string table = render_table(results);
    if (output.empty()) out << table;
    else write_file(output, table);
    return 0;
}

// Each non-comment input line is "<tau> <a_1> ... <a_n>"; the output line is
// the l0, l1 and l2 exceedance norms.
int cmd_cea_norm(const std::string& input, const std::string& output, std::ostream& out) {
    const std::string text = read_file(input);
    std::istringstream lines(text);
    std::string line, result;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream tokens(line);
        std::vector<double> values;
        std::string tok;
        while (tokens >> tok) {
            double v = 0.0;
            const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
                throw IoError(input + ":" + std::to_string(line_no) + ": not a number: " + tok);
            values.push_back(v);
        }
        if (values.empty()) continue;
        const double tau = values.front();
        const std::span<const double> acts(values.data() + 1, values.size() - 1);
        result += real_text(cea_norm(acts, tau, NormOrder::L0)) + " " + real_text(cea_norm(acts, tau, NormOrder::L1)) +
                  " " + real_text(cea_norm(acts, tau, NormOrder::L2)) + "\n";
    }
    if (output.empty()) out << result;
    else write_file(output, result);
    return 0;
}

struct CommonOptions {
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    std::vector<std::string> sets;
    bool print_config = false;
};

void add_common(CLI::App* sub, CommonOptions& o) {
    sub->add_option("--config", o.config_path, "Config file (key = value)");
    sub->add_option("--seed", o.seeds, "Seed (repeatable; replaces the config's seed list)")->take_all();
    sub->add_option("--out", o.out_dir, "Output directory");
    sub->add_option("--set", o.sets, "Override a config key: KEY=VALUE (repeatable)");
    sub->add_flag("--print-config", o.print_config, "Print the resolved config and exit");
}

RunConfig resolve(const CommonOptions& o) {
    RunConfig config = default_config();
    if (!o.config_path.empty()) apply_config_file(config, o.config_path);
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(s, "--set expects KEY=VALUE, got '" + s + "'");
        apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
    }
    if (!o.seeds.empty()) config.experiment.seeds = o.seeds;
    if (!o.out_dir.empty()) config.out_dir = o.out_dir;
    if (const char* env = std::getenv("CEA_BENCH_THREADS"); env != nullptr && *env != '\0')
        apply_setting(config, "threads", env);
    config.validate();
    return config;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Extreme-activation novelty scoring benchmark", "cea_bench"};
    app.require_subcommand(1);

    CommonOptions train_o, eval_o, ablate_o, diagnose_o;
    auto* train_cmd = app.add_subcommand("train", "Train one model per seed and write snapshots");
    add_common(train_cmd, train_o);
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate every detector with and without CEA");
    add_common(eval_cmd, eval_o);
    std::string snapshots;
    eval_cmd->add_option("--snapshots", snapshots, "Snapshot directory (default <out>/model)");
    auto* ablate_cmd = app.add_subcommand("ablate", "Sweep one CEA setting, reusing trained models");
    add_common(ablate_cmd, ablate_o);
    std::string axis, values;
    ablate_cmd->add_option("--axis", axis, "percentile, gamma, norm or scope");
    ablate_cmd->add_option("--values", values, "Comma-separated axis values");
    auto* diagnose_cmd = app.add_subcommand("diagnose", "Max softmax and max penultimate activation under scaling");
    add_common(diagnose_cmd, diagnose_o);
    std::string diag_alphas;
    diagnose_cmd->add_option("--alphas", diag_alphas, "Comma-separated ascending scaling factors");

    std::string render_in, render_out;
    auto* render_cmd = app.add_subcommand("render", "Render a results JSONL file as a Markdown table");
    render_cmd->add_option("--input", render_in, "results.jsonl")->required();
    render_cmd->add_option("--output", render_out, "Output file (default stdout)");

    std::string norm_in, norm_out;
    auto* norm_cmd = app.add_subcommand("cea-norm", "Exceedance norms of activation vectors");
    norm_cmd->add_option("--input", norm_in, "Lines of '<tau> <activations...>'")->required();
    norm_cmd->add_option("--output", norm_out, "Output file (default stdout)");

    std::string manifest, scratch;
    auto* replay_cmd = app.add_subcommand("replay", "Replay the fixture corpus");
    replay_cmd->add_option("--manifest", manifest, "Fixture manifest")->required();
    replay_cmd->add_option("--scratch", scratch, "Scratch directory")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        auto run = [&](CommonOptions& o, auto&& command) -> int {
            RunConfig config = resolve(o);
            if (o.print_config) {
                out << dump_config(config);
                return 0;
            }
            return command(config);
        };
        if (train_cmd->parsed()) return run(train_o, [&](const RunConfig& c) { return cmd_train(c, out); });
        if (eval_cmd->parsed()) {
            if (!snapshots.empty()) eval_o.sets.push_back("snapshots=" + snapshots);
            return run(eval_o, [&](const RunConfig& c) { return cmd_eval(c, out); });
        }
        if (ablate_cmd->parsed()) {
            if (!axis.empty()) ablate_o.sets.push_back("ablate.axis=" + axis);
            if (!values.empty()) ablate_o.sets.push_back("ablate.values=" + values);
            return run(ablate_o, [&](const RunConfig& c) { return cmd_ablate(c, out); });
        }
        if (diagnose_cmd->parsed()) {
            if (!diag_alphas.empty()) diagnose_o.sets.push_back("diagnose.alphas=" + diag_alphas);
            return run(diagnose_o, [&](const RunConfig& c) { return cmd_diagnose(c, out); });
        }
        if (render_cmd->parsed()) return cmd_render(render_in, render_out, out);
        if (norm_cmd->parsed()) return cmd_cea_norm(norm_in, norm_out, out);
        if (replay_cmd->parsed()) {
            const auto outcomes = replay_fixtures(manifest, scratch);
            bool ok = true;
            for (const auto& o : outcomes) {
                out << (o.passed ? "PASS " : "FAIL ") << o.name;
                if (!o.passed) out << ": " << o.message;
                out << "\n";
                ok = ok && o.passed;
            }
            return ok ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        err << "config error";
        if (!e.key().empty()) err << " [" << e.key() << "]";
        err << ": " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace cea::cli
