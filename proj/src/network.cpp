#include "cea/network.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "cea/errors.hpp"
#include "cea/parallel.hpp"
#include "cea/rng.hpp"
#include "cea/serial.hpp"

namespace cea {

std::string_view to_string(LossKind loss) {
    return loss == LossKind::LogitNorm ? "logitnorm" : "ce";
}

LossKind parse_loss(std::string_view text) {
    if (text == "ce" || text == "cross-entropy" || text == "crossentropy") return LossKind::CrossEntropy;
    if (text == "logitnorm") return LossKind::LogitNorm;
    throw ContractViolation("unknown loss '" + std::string(text) + "'");
}

std::size_t MlpModel::input_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols());
}

int MlpModel::num_classes() const {
    return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
}

std::vector<int> MlpModel::hidden_widths() const {
    std::vector<int> out;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) out.push_back(static_cast<int>(layers[l].weight.rows()));
    return out;
}

void MlpModel::validate() const {
    if (layers.size() < 2) throw ContractViolation("model needs at least one hidden layer");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].bias.size() != layers[l].weight.rows()) {
            throw ContractViolation("layer " + std::to_string(l) + " bias length differs from its width");
        }
        if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows()) {
            throw ContractViolation("layer " + std::to_string(l) + " input width does not match previous layer");
        }
    }
}

int ForwardTrace::predicted_class() const {
    Eigen::Index arg = 0;
    logits.maxCoeff(&arg);
    return static_cast<int>(arg);
}

ForwardTrace forward_trace(const MlpModel& model, const Vector& x) {
    if (static_cast<std::size_t>(x.size()) != model.input_dim()) {
        throw DimensionMismatch("input has " + std::to_string(x.size()) + " features, model expects " +
                                std::to_string(model.input_dim()));
    }
    ForwardTrace trace;
    trace.hidden.reserve(model.layers.size() - 1);
    Vector cur = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        Vector z = layer.weight * cur + layer.bias;
        if (l + 1 < model.layers.size()) {
            cur = z.cwiseMax(0.0);
            trace.hidden.push_back(cur);
        } else {
            trace.logits = std::move(z);
        }
    }
    return trace;
}

std::vector<ForwardTrace> forward_traces(const MlpModel& model, const Matrix& rows, unsigned threads) {
    std::vector<ForwardTrace> out(static_cast<std::size_t>(rows.rows()));
    parallel_for(out.size(), threads, [&](std::size_t i) {
        out[i] = forward_trace(model, rows.row(static_cast<Eigen::Index>(i)).transpose());
    });
    return out;
}

Vector logitnorm_logits(const Vector& logits, double temperature) {
    const double norm = std::max(logits.norm(), 1e-12);
    return logits / (temperature * norm);
}

namespace {

// Loss of one logit row; writes dLoss/dlogits into `grad` when non-null.
double row_loss(const MlpModel& model, const Vector& logits, int label, Vector* grad) {
    if (model.loss == LossKind::CrossEntropy) {
        const double loss = logsumexp(logits) - logits[label];
        if (grad) {
            Vector p = softmax(logits);
            p[label] -= 1.0;
            *grad = std::move(p);
        }
        return loss;
    }
    const double t = model.logitnorm_temperature;
    const double norm = std::max(logits.norm(), 1e-12);
    const Vector s = logits / (t * norm);
    const double loss = logsumexp(s) - s[label];
    if (grad) {
        Vector ds = softmax(s);
        ds[label] -= 1.0;
        const double zd = logits.dot(ds);
        *grad = (ds / norm - logits * (zd / (norm * norm * norm))) / t;
    }
    return loss;
}

Matrix batch_logits(const MlpModel& model, const Matrix& rows) {
    Matrix cur = rows;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        Matrix z = cur * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        cur = l + 1 < model.layers.size() ? Matrix(z.cwiseMax(0.0)) : z;
    }
    return cur;
}

void check_labels(const MlpModel& model, const Matrix& rows, std::span<const int> labels) {
    if (static_cast<std::size_t>(rows.rows()) != labels.size()) {
        throw DimensionMismatch("row count differs from label count");
    }
    if (static_cast<std::size_t>(rows.cols()) != model.input_dim()) {
        throw DimensionMismatch("feature width differs from model input");
    }
    for (int y : labels) {
        if (y < 0 || y >= model.num_classes()) throw ContractViolation("label outside model classes");
    }
}

MlpModel init_model(std::size_t input_dim, int classes, const TrainOptions& opt) {
    MlpModel model;
    model.loss = opt.loss;
    model.logitnorm_temperature = opt.logitnorm_temperature;
    model.seed = opt.seed;
    Rng rng(derive_seed(opt.seed, "init"));
    auto fan_in = static_cast<Eigen::Index>(input_dim);
    std::vector<int> widths = opt.hidden;
    widths.push_back(classes);
    for (std::size_t l = 0; l < widths.size(); ++l) {
        const bool last = l + 1 == widths.size();
        std::normal_distribution<double> normal(0.0, std::sqrt((last ? 1.0 : 2.0) / static_cast<double>(fan_in)));
        DenseLayer layer;
        layer.weight.resize(widths[l], fan_in);
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = normal(rng);
        }
        layer.bias = Vector::Zero(widths[l]);
        model.layers.push_back(std::move(layer));
        fan_in = widths[l];
    }
    return model;
}

}  // namespace

namespace detail {

double loss_and_gradient(const MlpModel& model, const Matrix& rows, std::span<const int> labels,
                         Gradients& grad) {
    check_labels(model, rows, labels);
    const std::size_t depth = model.layers.size();
    std::vector<Matrix> inputs;
    inputs.reserve(depth);
    Matrix cur = rows;
    for (std::size_t l = 0; l < depth; ++l) {
        const auto& layer = model.layers[l];
        Matrix z = cur * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        inputs.push_back(std::move(cur));
        cur = l + 1 < depth ? Matrix(z.cwiseMax(0.0)) : std::move(z);
    }

    const auto batch = static_cast<double>(rows.rows());
    Matrix delta(cur.rows(), cur.cols());
    CompensatedSum loss;
    for (Eigen::Index i = 0; i < cur.rows(); ++i) {
        Vector g;
        loss.add(row_loss(model, cur.row(i).transpose(), labels[static_cast<std::size_t>(i)], &g));
        delta.row(i) = g.transpose() / batch;
    }

    grad.weight.resize(depth);
    grad.bias.resize(depth);
    for (std::size_t l = depth; l-- > 0;) {
        grad.weight[l] = delta.transpose() * inputs[l];
        grad.bias[l] = delta.colwise().sum().transpose();
        if (l > 0) {
            Matrix back = delta * model.layers[l].weight;
            delta = back.cwiseProduct((inputs[l].array() > 0.0).cast<double>().matrix());
        }
    }
    return loss.value() / batch;
}

}  // namespace detail

double mean_loss(const MlpModel& model, const Matrix& rows, std::span<const int> labels) {
    check_labels(model, rows, labels);
    if (rows.rows() == 0) throw ContractViolation("mean loss of zero rows");
    const Matrix logits = batch_logits(model, rows);
    CompensatedSum acc;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        acc.add(row_loss(model, logits.row(i).transpose(), labels[static_cast<std::size_t>(i)], nullptr));
    }
    return acc.value() / static_cast<double>(rows.rows());
}

double accuracy(const MlpModel& model, const Matrix& rows, std::span<const int> labels) {
    check_labels(model, rows, labels);
    if (rows.rows() == 0) throw ContractViolation("accuracy of zero rows");
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const auto trace = forward_trace(model, rows.row(i).transpose());
        if (trace.predicted_class() == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(rows.rows());
}

TrainResult train_with_history(const Dataset& dataset, const TrainOptions& opt) {
    if (opt.hidden.empty()) throw ContractViolation("hidden layer list is empty");
    for (int w : opt.hidden) {
        if (w <= 0) throw ContractViolation("hidden widths must be positive");
    }
    if (opt.epochs < 1 || opt.batch_size < 1 || !(opt.learning_rate > 0.0) ||
        !(opt.momentum >= 0.0 && opt.momentum < 1.0) || !(opt.logitnorm_temperature > 0.0)) {
        throw ContractViolation("invalid training hyperparameters");
    }
    const SplitView train = dataset.view(Split::Train);
    if (train.rows.empty()) throw ContractViolation("train split is empty");
    SplitView val = dataset.view(Split::Val);
    if (val.rows.empty()) val = train;

    TrainResult result;
    MlpModel model = init_model(dataset.dim(), dataset.num_classes, opt);
    result.initial_train_loss = mean_loss(model, train.features, train.labels);

    std::vector<Matrix> vel_w;
    std::vector<Vector> vel_b;
    for (const auto& layer : model.layers) {
        vel_w.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
        vel_b.push_back(Vector::Zero(layer.bias.size()));
    }

    Rng shuffle_rng(derive_seed(opt.seed, "shuffle"));
    std::vector<std::size_t> order(train.rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    double best_val = std::numeric_limits<double>::infinity();
    const auto n = order.size();
    const auto bs = static_cast<std::size_t>(opt.batch_size);
    detail::Gradients grad;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t count = std::min(bs, n - start);
            Matrix xb(static_cast<Eigen::Index>(count), train.features.cols());
            std::vector<int> yb(count);
            for (std::size_t i = 0; i < count; ++i) {
                xb.row(static_cast<Eigen::Index>(i)) = train.features.row(static_cast<Eigen::Index>(order[start + i]));
                yb[i] = train.labels[order[start + i]];
            }
            const double loss = detail::loss_and_gradient(model, xb, yb, grad);
            if (!std::isfinite(loss)) {
                throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch));
            }
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                vel_w[l] = opt.momentum * vel_w[l] - opt.learning_rate * grad.weight[l];
                vel_b[l] = opt.momentum * vel_b[l] - opt.learning_rate * grad.bias[l];
                model.layers[l].weight += vel_w[l];
                model.layers[l].bias += vel_b[l];
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = mean_loss(model, train.features, train.labels);
        rec.val_loss = mean_loss(model, val.features, val.labels);
        if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
            throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch));
        }
        result.history.push_back(rec);
        if (rec.val_loss < best_val) {
            best_val = rec.val_loss;
            result.best_epoch = epoch;
            result.model = model;
        }
    }
    return result;
}

MlpModel train(const Dataset& dataset, const TrainOptions& options) {
    return train_with_history(dataset, options).model;
}

std::vector<ScalingRecord> scaling_diagnostic(const MlpModel& model, const Vector& x, std::size_t dim,
                                              std::span<const double> alphas) {
    if (dim >= static_cast<std::size_t>(x.size())) throw ContractViolation("scaling dimension out of range");
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        if (!(alphas[i] > 0.0) || (i > 0 && !(alphas[i] > alphas[i - 1]))) {
            throw ContractViolation("alphas must be positive and ascending");
        }
    }
    std::vector<ScalingRecord> out;
    out.reserve(alphas.size());
    for (double alpha : alphas) {
        Vector scaled = x;
        scaled[static_cast<Eigen::Index>(dim)] *= alpha;
        const auto trace = forward_trace(model, scaled);
        out.push_back({alpha, softmax(trace.logits).maxCoeff(), trace.penultimate().maxCoeff()});
    }
    return out;
}

void save_model(const MlpModel& model, std::ostream& out) {
    model.validate();
    serial::Writer w(out);
    w.text("format", "cea-mlp-v1");
    w.text("loss", to_string(model.loss));
    w.real("logitnorm_temperature", model.logitnorm_temperature);
    w.text("seed", std::to_string(model.seed));
    w.integer("layers", static_cast<std::int64_t>(model.layers.size()));
    for (const auto& layer : model.layers) {
        w.matrix("weight", layer.weight);
        w.vector("bias", layer.bias);
    }
}

MlpModel load_model(std::istream& in) {
    serial::Reader r(in);
    if (r.text("format") != "cea-mlp-v1") throw IoError("not a cea-mlp-v1 model record");
    MlpModel model;
    model.loss = parse_loss(r.text("loss"));
    model.logitnorm_temperature = r.real("logitnorm_temperature");
    model.seed = std::stoull(r.text("seed"));
    const auto depth = r.integer("layers");
    if (depth < 2) throw IoError("model record has fewer than two layers");
    for (std::int64_t l = 0; l < depth; ++l) {
        DenseLayer layer;
        layer.weight = r.matrix("weight");
        layer.bias = r.vector("bias");
        model.layers.push_back(std::move(layer));
    }
    model.validate();
    return model;
}

}  // namespace cea
