#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cea/cea.hpp"
#include "cea/dataset.hpp"
#include "cea/detectors.hpp"
#include "cea/network.hpp"
#include "cea/oodsynth.hpp"

namespace cea {

enum class Truth : std::uint8_t { Id, Ood };

struct ScoreSample {
    double score = 0.0;
    Truth truth = Truth::Id;
};

/// Mann-Whitney AUROC with ties counted 1/2: the probability that a random OOD
/// sample outscores a random ID sample. Needs at least one sample of each kind.
double auroc(std::span<const ScoreSample> samples);
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Expected calibration error over equal-width confidence bins on [0, 1].
/// Bin b holds confidences in (b/M, (b+1)/M]; a confidence of exactly 0 goes
/// to the first bin. Empty bins contribute nothing.
double ece(std::span<const double> confidences, const std::vector<bool>& correct, int bins = 15);

/// ECE of softmax(logits / T) max-probabilities against labels.
double ece_of_traces(std::span<const ForwardTrace> traces, std::span<const int> labels, double temperature = 1.0,
                     int bins = 15);

// ---------------------------------------------------------------------------
// Experiment grid

struct DatasetSource {
    enum class Kind { Synthetic, Csv } kind = Kind::Synthetic;
    std::string name = "blobs";
    SyntheticSpec synthetic;
    std::filesystem::path path;
    std::string label_column;
    char delimiter = ',';
};

struct ExperimentConfig {
    DatasetSource data;
    SplitFractions split;
    TrainOptions train;  // train.seed is replaced by the run seed
    std::vector<DetectorKind> detectors = all_detectors();
    DetectorParams detector_params;
    bool cea_enabled = true;
    CeaSettings cea;
    std::vector<double> alphas{10.0, 100.0, 1000.0};
    std::size_t max_variables = 50;
    ScalingSpace space = ScalingSpace::Standardized;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    unsigned threads = 1;  // 0: all cores

    void validate() const;
};

RawTable load_raw_table(const DatasetSource& source);
Dataset build_dataset(const ExperimentConfig& config, const RawTable& raw, std::uint64_t seed);

/// Supplies a pre-trained model for a seed, or nullopt to train one.
using ModelProvider = std::function<std::optional<MlpModel>(std::uint64_t seed, const Dataset& dataset)>;

/// Everything derived from one seed that the CEA stage reuses: the split,
/// the trained model, ID traces and fitted detector states.
struct SeedContext {
    std::uint64_t seed = 0;
    Dataset dataset;
    MlpModel model;
    std::vector<ForwardTrace> train, val, test;
    std::vector<int> train_labels, val_labels, test_labels;
    std::vector<std::size_t> variables;
    std::vector<DetectorState> states;  // parallel to config.detectors
};

SeedContext prepare_seed(const ExperimentConfig& config, const RawTable& raw, std::uint64_t seed,
                         const ModelProvider& provider = {});

/// Per-variable AUROCs of one seed. Indexing: [detector][alpha][variable] for
/// the baseline and [variant][detector][alpha][variable] with CEA.
struct SeedEvaluation {
    std::uint64_t seed = 0;
    std::vector<std::size_t> variables;
    std::vector<std::vector<std::vector<double>>> baseline;
    std::vector<std::vector<std::vector<std::vector<double>>>> adjusted;
    std::vector<std::vector<CeaCalibration>> calibrations;  // [variant][detector]
};

/// Scores the ID test split against every scaled OOD set (alpha x variable)
/// for every detector, with and without each CEA variant. Work items run
/// concurrently and are reduced by index, so the output is schedule-free.
SeedEvaluation evaluate_seed(const ExperimentConfig& config, const SeedContext& context,
                             std::span<const CeaSettings> variants);

struct SeedAuroc {
    std::uint64_t seed = 0;
    std::vector<double> per_variable;
    double mean = 0.0;  // over variables
    double std = 0.0;   // over variables
};

struct ExperimentResult {
    std::string dataset;
    DetectorKind detector = DetectorKind::Msp;
    bool cea = false;
    CeaSettings settings;      // meaningful when cea
    double tau_mean = 0.0;     // penultimate / first-layer threshold, averaged over seeds
    double lambda_mean = 0.0;  // averaged over seeds
    double alpha = 1.0;
    std::vector<SeedAuroc> seeds;
    double auroc_mean = 0.0;  // over seeds of the per-seed variable means
    double auroc_std = 0.0;   // sample std over seeds
    std::size_t n_variables = 0;
};

/// Full grid: for each seed train (or load), fit detectors, calibrate CEA on
/// validation, score every (alpha, variable) OOD set. Averages variables
/// first, then reports mean and std across seeds.
/// Called once per seed, in seed order, after that seed is evaluated.
using SeedObserver = std::function<void(const SeedContext& context, const SeedEvaluation& evaluation)>;

std::vector<ExperimentResult> run_experiment(const ExperimentConfig& config, const ModelProvider& provider = {},
                                             const SeedObserver& observer = {});

enum class AblationAxis { Percentile, Gamma, Norm, Scope };

std::string_view to_string(AblationAxis axis);
AblationAxis parse_axis(std::string_view text);
std::vector<double> default_axis_values(AblationAxis axis);

struct AblationRow {
    DetectorKind detector = DetectorKind::Msp;
    AblationAxis axis = AblationAxis::Gamma;
    bool baseline = false;  // detector without CEA
    double value = 0.0;     // axis value (norm order; 0/1 for penultimate/all-layers)
    double alpha = 1.0;
    double tau_mean = 0.0;
    double lambda_mean = 0.0;
    double auroc_mean = 0.0;
    double auroc_std = 0.0;
};

/// Re-runs only the CEA calibration and scoring over the axis grid, reusing
/// each seed's trained model and detector states.
std::vector<AblationRow> ablation_sweep(const ExperimentConfig& config, AblationAxis axis,
                                        std::span<const double> values, const ModelProvider& provider = {});

// ---------------------------------------------------------------------------
// Result files

void write_results_jsonl(std::span<const ExperimentResult> results, std::ostream& out);
std::vector<ExperimentResult> read_results_jsonl(std::istream& in);
void write_results_csv(std::span<const ExperimentResult> results, std::ostream& out);
void write_ablation_csv(std::span<const AblationRow> rows, std::ostream& out);

std::string display_name(DetectorKind kind);

/// Markdown comparison table: one row per detector, one column per alpha,
/// cells "baseline / baseline&CEA" as AUROC percentages with two decimals.
std::string render_table(std::span<const ExperimentResult> results);

}  // namespace cea
