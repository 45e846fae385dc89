#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "cea/dataset.hpp"
#include "cea/numerics.hpp"

namespace cea {

enum class LossKind { CrossEntropy, LogitNorm };

std::string_view to_string(LossKind loss);
LossKind parse_loss(std::string_view text);

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

/// Fully connected classifier: ReLU on every hidden layer, linear last layer.
struct MlpModel {
    std::vector<DenseLayer> layers;
    LossKind loss = LossKind::CrossEntropy;
    double logitnorm_temperature = 0.04;
    std::uint64_t seed = 0;

    std::size_t input_dim() const;
    int num_classes() const;
    std::vector<int> hidden_widths() const;
    const DenseLayer& last_layer() const { return layers.back(); }
    // Throws ContractViolation when layer shapes do not compose.
    void validate() const;
};

struct ForwardTrace {
    std::vector<Vector> hidden;  // post-ReLU activations, one per hidden layer
    Vector logits;

    const Vector& penultimate() const { return hidden.back(); }
    int predicted_class() const;
};

/// Exact feed-forward pass keeping every hidden activation.
ForwardTrace forward_trace(const MlpModel& model, const Vector& x);

/// forward_trace over each row; `threads` == 0 means all cores.
std::vector<ForwardTrace> forward_traces(const MlpModel& model, const Matrix& rows, unsigned threads = 1);

struct TrainOptions {
    std::vector<int> hidden{128, 128, 128};
    LossKind loss = LossKind::CrossEntropy;
    double logitnorm_temperature = 0.04;
    int epochs = 30;
    int batch_size = 64;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;  // full train split, after the epoch
    double val_loss = 0.0;
};

struct TrainResult {
    MlpModel model;  // parameters of the best validation-loss epoch
    double initial_train_loss = 0.0;
    std::vector<EpochRecord> history;
    int best_epoch = 0;
};

/// Mini-batch SGD with momentum, seeded shuffling, He-normal init and
/// best-validation-loss model selection (earliest epoch on ties). Throws
/// TrainingDiverged when the loss becomes non-finite.
TrainResult train_with_history(const Dataset& dataset, const TrainOptions& options);
MlpModel train(const Dataset& dataset, const TrainOptions& options);

/// z / (T * ||z||): the logit vector the LogitNorm loss feeds to cross-entropy.
Vector logitnorm_logits(const Vector& logits, double temperature);

/// Mean training loss of `model` on the rows (cross-entropy or LogitNorm per
/// model.loss).
double mean_loss(const MlpModel& model, const Matrix& rows, std::span<const int> labels);

double accuracy(const MlpModel& model, const Matrix& rows, std::span<const int> labels);

namespace detail {

struct Gradients {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;
};

// Mean batch loss and its gradient with respect to every parameter.
double loss_and_gradient(const MlpModel& model, const Matrix& rows, std::span<const int> labels,
                         Gradients& grad);

}  // namespace detail

struct ScalingRecord {
    double alpha = 1.0;
    double max_softmax = 0.0;
    double max_penultimate = 0.0;
};

/// Scales coordinate `dim` of x by each alpha (positive, ascending) and records
/// the max softmax probability and the max penultimate activation.
std::vector<ScalingRecord> scaling_diagnostic(const MlpModel& model, const Vector& x, std::size_t dim,
                                              std::span<const double> alphas);

void save_model(const MlpModel& model, std::ostream& out);
MlpModel load_model(std::istream& in);

}  // namespace cea
