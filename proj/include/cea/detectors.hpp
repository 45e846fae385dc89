#pragma once

// Post-hoc novelty detectors. Every score is oriented so that larger means
// more likely out-of-distribution.

#include <iosfwd>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "cea/network.hpp"
#include "cea/numerics.hpp"

namespace cea {

enum class DetectorKind {
    Msp,
    Mls,
    TempScale,
    Ebo,
    Mds,
    Rmds,
    Knn,
    React,
    She,
    Klm,
    GradNorm,
    Dice,
    Ash,
    Vim,
    Gram,
};

std::string_view to_string(DetectorKind kind);
DetectorKind parse_detector(std::string_view name);
const std::vector<DetectorKind>& all_detectors();

struct NoveltyScore {
    double value = 0.0;
    DetectorKind method = DetectorKind::Msp;
};

struct DetectorParams {
    int knn_k = 0;                 // 0: min(50, floor(N_train / 2))
    double react_percentile = 90.0;
    double dice_sparsity = 70.0;
    double ash_percentile = 65.0;
    int vim_dim = 0;               // 0: floor(D' / 2)
    double ebo_temperature = 1.0;
    double ridge = -1.0;           // < 0: 1e-6 * trace / dim
};

// Fitted parameter sets, one per detector family.
namespace fitted {

struct None {};

struct Temperature {
    double value = 1.0;
};

struct ClassGaussians {
    std::vector<Vector> means;  // one per class
    Matrix precision;           // shared
};

struct RelativeGaussians {
    ClassGaussians classes;
    Vector background_mean;
    Matrix background_precision;
};

struct Neighbors {
    Matrix embeddings;  // l2-normalized, one per row
    int k = 1;
};

// Last layer plus the activation clamp used before recomputing logits.
struct Clamp {
    double limit = 0.0;
    Matrix weight;
    Vector bias;
};

struct Patterns {
    Matrix patterns;  // classes x D'
};

struct ClassProbabilities {
    Matrix probabilities;  // one row per class predicted on validation
};

struct MaskedLayer {
    Matrix weight;  // last-layer weight with pruned entries zeroed
    Vector bias;
};

struct Prune {
    double percentile = 65.0;
    Matrix weight;
    Vector bias;
};

struct Residual {
    Vector center;
    Matrix complement;  // D' x (D' - d) basis of the non-principal subspace
    double scale = 1.0;
};

struct GramRanges {
    static constexpr int kOrders = 2;
    // [layer][class][order - 1]
    std::vector<std::vector<std::vector<Vector>>> min;
    std::vector<std::vector<std::vector<Vector>>> max;
    std::vector<double> normalizer;  // E_val[deviation] per layer
};

}  // namespace fitted

using FittedParams =
    std::variant<std::monostate, fitted::None, fitted::Temperature, fitted::ClassGaussians,
                 fitted::RelativeGaussians, fitted::Neighbors, fitted::Clamp, fitted::Patterns,
                 fitted::ClassProbabilities, fitted::MaskedLayer, fitted::Prune, fitted::Residual,
                 fitted::GramRanges>;

struct DetectorState {
    DetectorKind kind = DetectorKind::Msp;
    FittedParams params;  // monostate until fitted
};

// ---------------------------------------------------------------------------
// Logit-based scores.

NoveltyScore score_msp(const ForwardTrace& trace);
NoveltyScore score_mls(const ForwardTrace& trace);
NoveltyScore score_temp_scaled(const ForwardTrace& trace, double temperature);
NoveltyScore score_ebo(const ForwardTrace& trace, double temperature = 1.0);
NoveltyScore score_gradnorm(const ForwardTrace& trace);

/// Temperature minimizing validation NLL of softmax(logits / T), searched over
/// ln T in [-5, 5].
DetectorState fit_temp_scale(std::span<const ForwardTrace> val, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Feature-based scores. Embeddings are the penultimate activations.

DetectorState fit_mds(std::span<const ForwardTrace> train, std::span<const int> labels, int classes,
                      double ridge = -1.0);
DetectorState fit_rmds(std::span<const ForwardTrace> train, std::span<const int> labels, int classes,
                       double ridge = -1.0);
double mahalanobis(const Vector& h, const Vector& mean, const Matrix& precision);

DetectorState fit_knn(std::span<const ForwardTrace> train, int k = 0);
DetectorState fit_react(std::span<const ForwardTrace> val, const MlpModel& model, double percentile = 90.0);
DetectorState make_react(const MlpModel& model, double limit);
DetectorState fit_she(std::span<const ForwardTrace> train, std::span<const int> labels, int classes);
DetectorState fit_klm(std::span<const ForwardTrace> val, int classes);
DetectorState fit_dice(std::span<const ForwardTrace> val, const MlpModel& model, double sparsity = 70.0);
DetectorState make_ash(const MlpModel& model, double percentile = 65.0);
DetectorState fit_vim(std::span<const ForwardTrace> train, std::span<const ForwardTrace> val, int dim = 0);
DetectorState fit_gram(std::span<const ForwardTrace> train, std::span<const ForwardTrace> val, int classes);

/// Order-q Gram features of one layer activation: entry i is
/// sign(a_i^q S_q) |a_i^q S_q|^(1/q) with S_q = sum_j a_j^q.
Vector gram_features(const Vector& activation, int order);
/// Per-layer range deviation of a trace (before normalization) for its
/// predicted class.
std::vector<double> gram_deviations(const fitted::GramRanges& ranges, const ForwardTrace& trace);

// ---------------------------------------------------------------------------
// Uniform fit/score entry points.

struct FitData {
    const MlpModel* model = nullptr;
    std::span<const ForwardTrace> train;
    std::span<const int> train_labels;
    std::span<const ForwardTrace> val;
    std::span<const int> val_labels;
};

DetectorState fit_detector(DetectorKind kind, const FitData& data, const DetectorParams& params = {});

/// Deterministic score of a trace. Throws UnfittedState if the state holds no
/// parameters for its detector and DimensionMismatch on shape errors.
NoveltyScore score(const DetectorState& state, const ForwardTrace& trace);

void save_state(const DetectorState& state, std::ostream& out);
DetectorState load_state(std::istream& in);

}  // namespace cea
