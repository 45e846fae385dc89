#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cea/evaluation.hpp"

namespace cea::cli {

/// Everything a command needs, resolved from defaults, the config file and
/// --set / flag overrides (in that order).
struct RunConfig {
    ExperimentConfig experiment;
    std::filesystem::path out_dir = "out";
    std::filesystem::path snapshot_dir;  // empty: <out>/model
    AblationAxis ablate_axis = AblationAxis::Gamma;
    std::vector<double> ablate_values;  // empty: default grid for the axis
    std::vector<double> diagnose_alphas{1.0, 10.0, 100.0, 1000.0};
    std::size_t diagnose_points = 200;

    // Throws ConfigError naming the offending key.
    void validate() const;
};

RunConfig default_config();

/// Sets one dotted key. Throws ConfigError(key) for unknown keys or values
/// that do not parse.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Applies a `key = value` document; '#' starts a comment. Duplicate keys
/// are rejected.
void apply_config_text(RunConfig& config, std::string_view text);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// Resolved config in the same format apply_config_text reads; round-trips.
std::string dump_config(const RunConfig& config);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Rewrites <out>/manifest.txt: "<sha256>  <relative path>" for every other
/// file under `out`, sorted by path.
void write_manifest(const std::filesystem::path& out);

std::filesystem::path snapshot_path(const RunConfig& config, std::uint64_t seed);

/// Fingerprint of the data a snapshot was trained on: the standardized
/// features, labels and split assignment.
std::string dataset_fingerprint(const Dataset& dataset);

struct Snapshot {
    std::string fingerprint;
    Standardization standardization;
    MlpModel model;
};

void save_snapshot(const Snapshot& snapshot, std::ostream& out);
Snapshot load_snapshot(std::istream& in);

struct FixtureOutcome {
    std::string name;
    bool passed = false;
    std::string message;  // names the differing file on failure
};

/// Runs every fixture in the manifest through run_cli and compares outputs.
/// `{dir}` in commands expands to the manifest's directory and `{out}` to a
/// per-fixture scratch directory under `scratch`.
std::vector<FixtureOutcome> replay_fixtures(const std::filesystem::path& manifest,
                                            const std::filesystem::path& scratch);

/// In-process entry point: args exclude the program name. Returns the exit
/// code (0 success, 1 runtime failure, 2 usage or config error).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cea::cli
