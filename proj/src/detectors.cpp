#include "cea/detectors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "cea/errors.hpp"
#include "cea/serial.hpp"

namespace cea {

namespace {

constexpr std::array<std::pair<DetectorKind, std::string_view>, 15> kNames{{
    {DetectorKind::Msp, "msp"},
    {DetectorKind::Mls, "mls"},
    {DetectorKind::TempScale, "tempscale"},
    {DetectorKind::Ebo, "ebo"},
    {DetectorKind::Mds, "mds"},
    {DetectorKind::Rmds, "rmds"},
    {DetectorKind::Knn, "knn"},
    {DetectorKind::React, "react"},
    {DetectorKind::She, "she"},
    {DetectorKind::Klm, "klm"},
    {DetectorKind::GradNorm, "gradnorm"},
    {DetectorKind::Dice, "dice"},
    {DetectorKind::Ash, "ash"},
    {DetectorKind::Vim, "vim"},
    {DetectorKind::Gram, "gram"},
}};

Matrix penultimate_rows(std::span<const ForwardTrace> traces) {
    if (traces.empty()) throw ContractViolation("no traces to fit on");
    Matrix out(static_cast<Eigen::Index>(traces.size()), traces.front().penultimate().size());
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto& h = traces[i].penultimate();
        if (h.size() != out.cols()) throw DimensionMismatch("penultimate widths differ across traces");
        out.row(static_cast<Eigen::Index>(i)) = h.transpose();
    }
    return out;
}

void check_labels(std::span<const ForwardTrace> traces, std::span<const int> labels, int classes) {
    if (traces.size() != labels.size()) throw DimensionMismatch("trace count differs from label count");
    for (int y : labels) {
        if (y < 0 || y >= classes) throw ContractViolation("label outside [0, classes)");
    }
}

void check_width(const ForwardTrace& trace, Eigen::Index expected) {
    if (trace.penultimate().size() != expected) {
        throw DimensionMismatch("penultimate width " + std::to_string(trace.penultimate().size()) +
                                " does not match fitted width " + std::to_string(expected));
    }
}

double energy(const Vector& logits, double temperature) {
    return -temperature * logsumexp(logits / temperature);
}

Vector recompute_logits(const Matrix& weight, const Vector& bias, const Vector& h) {
    if (h.size() != weight.cols()) throw DimensionMismatch("activation width does not match last layer");
    Vector z = weight * h + bias;
    return z;
}

double nll(std::span<const ForwardTrace> traces, std::span<const int> labels, double temperature) {
    CompensatedSum acc;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const Vector z = traces[i].logits / temperature;
        acc.add(logsumexp(z) - z[labels[i]]);
    }
    return acc.value() / static_cast<double>(traces.size());
}

}  // namespace

std::string_view to_string(DetectorKind kind) {
    for (const auto& [k, name] : kNames) {
        if (k == kind) return name;
    }
    return "unknown";
}

DetectorKind parse_detector(std::string_view name) {
    for (const auto& [k, n] : kNames) {
        if (n == name) return k;
    }
    throw ContractViolation("unknown detector '" + std::string(name) + "'");
}

const std::vector<DetectorKind>& all_detectors() {
    static const std::vector<DetectorKind> kinds = [] {
        std::vector<DetectorKind> out;
        for (const auto& entry : kNames) out.push_back(entry.first);
        return out;
    }();
    return kinds;
}

NoveltyScore score_msp(const ForwardTrace& trace) {
    return {-softmax(trace.logits).maxCoeff(), DetectorKind::Msp};
}

NoveltyScore score_mls(const ForwardTrace& trace) {
    if (trace.logits.size() == 0) throw ContractViolation("empty logits");
    return {-trace.logits.maxCoeff(), DetectorKind::Mls};
}

NoveltyScore score_temp_scaled(const ForwardTrace& trace, double temperature) {
    if (!(temperature > 0.0)) throw ContractViolation("temperature must be positive");
    return {-softmax(trace.logits / temperature).maxCoeff(), DetectorKind::TempScale};
}

NoveltyScore score_ebo(const ForwardTrace& trace, double temperature) {
    if (!(temperature > 0.0)) throw ContractViolation("temperature must be positive");
    return {energy(trace.logits, temperature), DetectorKind::Ebo};
}

NoveltyScore score_gradnorm(const ForwardTrace& trace) {
    // d KL(u || softmax(W h + b)) / dW = (p - u) h^T; its entrywise l1 norm
    // factorizes into ||p - u||_1 * ||h||_1.
    const Vector p = softmax(trace.logits);
    const double u = 1.0 / static_cast<double>(p.size());
    const double dp = (p.array() - u).abs().sum();
    return {-dp * lp_norm(trace.penultimate(), NormOrder::L1), DetectorKind::GradNorm};
}

DetectorState fit_temp_scale(std::span<const ForwardTrace> val, std::span<const int> labels) {
    if (val.empty()) throw ContractViolation("temperature scaling needs validation traces");
    if (val.size() != labels.size()) throw DimensionMismatch("trace count differs from label count");
    const int classes = static_cast<int>(val.front().logits.size());
    for (int y : labels) {
        if (y < 0 || y >= classes) throw ContractViolation("label outside logit range");
    }
    auto objective = [&](double log_t) { return nll(val, labels, std::exp(log_t)); };

    // Coarse grid to bracket the minimum, then golden-section refinement.
    constexpr double kLo = -5.0;
    constexpr double kHi = 5.0;
    constexpr int kGrid = 200;
    const double step = (kHi - kLo) / kGrid;
    int best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kGrid; ++i) {
        const double v = objective(kLo + step * i);
        if (v < best_value) {
            best_value = v;
            best = i;
        }
    }
    double a = kLo + step * std::max(best - 1, 0);
    double b = kLo + step * std::min(best + 1, kGrid);
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - ratio * (b - a);
    double d = a + ratio * (b - a);
    double fc = objective(c);
    double fd = objective(d);
    for (int it = 0; it < 80 && b - a > 1e-10; ++it) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = objective(d);
        }
    }
    double log_t = 0.5 * (a + b);
    if (objective(log_t) > best_value) log_t = kLo + step * best;
    return {DetectorKind::TempScale, fitted::Temperature{std::exp(log_t)}};
}

double mahalanobis(const Vector& h, const Vector& mean, const Matrix& precision) {
    const Vector d = h - mean;
    return d.dot(precision * d);
}

namespace {

fitted::ClassGaussians fit_class_gaussians(std::span<const ForwardTrace> train, std::span<const int> labels,
                                           int classes, double ridge) {
    check_labels(train, labels, classes);
    const Matrix rows = penultimate_rows(train);
    fitted::ClassGaussians g;
    Matrix centered(rows.rows(), rows.cols());
    for (int k = 0; k < classes; ++k) {
        std::vector<Eigen::Index> idx;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == k) idx.push_back(static_cast<Eigen::Index>(i));
        }
        if (idx.empty()) throw ContractViolation("class " + std::to_string(k) + " has no training traces");
        Matrix sub(static_cast<Eigen::Index>(idx.size()), rows.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = rows.row(idx[i]);
        g.means.push_back(column_mean(sub));
        for (auto i : idx) centered.row(i) = rows.row(i) - g.means.back().transpose();
    }
    const Matrix cov = covariance(centered, Vector::Zero(rows.cols()));
    g.precision = regularized_precision(cov, ridge < 0.0 ? default_ridge(cov) : ridge);
    return g;
}

double min_class_mahalanobis(const fitted::ClassGaussians& g, const Vector& h) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& mu : g.means) best = std::min(best, mahalanobis(h, mu, g.precision));
    return best;
}

}  // namespace

DetectorState fit_mds(std::span<const ForwardTrace> train, std::span<const int> labels, int classes,
                      double ridge) {
    return {DetectorKind::Mds, fit_class_gaussians(train, labels, classes, ridge)};
}

DetectorState fit_rmds(std::span<const ForwardTrace> train, std::span<const int> labels, int classes,
                       double ridge) {
    fitted::RelativeGaussians r;
    r.classes = fit_class_gaussians(train, labels, classes, ridge);
    const Matrix rows = penultimate_rows(train);
    r.background_mean = column_mean(rows);
    const Matrix cov = covariance(rows, r.background_mean);
    r.background_precision = regularized_precision(cov, ridge < 0.0 ? default_ridge(cov) : ridge);
    return {DetectorKind::Rmds, std::move(r)};
}

DetectorState fit_knn(std::span<const ForwardTrace> train, int k) {
    Matrix rows = penultimate_rows(train);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const double n = rows.row(i).norm();
        if (n > 0.0) rows.row(i) /= n;
    }
    const auto n = static_cast<int>(rows.rows());
    if (k <= 0) k = std::min(50, n / 2);
    k = std::clamp(k, 1, n);
    return {DetectorKind::Knn, fitted::Neighbors{std::move(rows), k}};
}

DetectorState make_react(const MlpModel& model, double limit) {
    return {DetectorKind::React, fitted::Clamp{limit, model.last_layer().weight, model.last_layer().bias}};
}

DetectorState fit_react(std::span<const ForwardTrace> val, const MlpModel& model, double percentile_value) {
    const Matrix rows = penultimate_rows(val);
    const double c = percentile(std::span<const double>(rows.data(), static_cast<std::size_t>(rows.size())),
                                percentile_value);
    return make_react(model, c);
}

DetectorState fit_she(std::span<const ForwardTrace> train, std::span<const int> labels, int classes) {
    check_labels(train, labels, classes);
    const Matrix rows = penultimate_rows(train);
    fitted::Patterns p;
    p.patterns = Matrix::Zero(classes, rows.cols());
    for (int k = 0; k < classes; ++k) {
        std::vector<Eigen::Index> correct;
        std::vector<Eigen::Index> all;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != k) continue;
            all.push_back(static_cast<Eigen::Index>(i));
            if (train[i].predicted_class() == k) correct.push_back(static_cast<Eigen::Index>(i));
        }
        const auto& use = correct.empty() ? all : correct;
        if (use.empty()) continue;
        Matrix sub(static_cast<Eigen::Index>(use.size()), rows.cols());
        for (std::size_t i = 0; i < use.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = rows.row(use[i]);
        p.patterns.row(k) = column_mean(sub).transpose();
    }
    return {DetectorKind::She, std::move(p)};
}

DetectorState fit_klm(std::span<const ForwardTrace> val, int classes) {
    if (val.empty()) throw ContractViolation("KLM needs validation traces");
    std::vector<std::vector<Vector>> by_class(static_cast<std::size_t>(classes));
    for (const auto& t : val) {
        if (t.logits.size() != classes) throw DimensionMismatch("logit width differs from class count");
        by_class[static_cast<std::size_t>(t.predicted_class())].push_back(softmax(t.logits));
    }
    std::vector<Vector> rows;
    for (const auto& group : by_class) {
        if (group.empty()) continue;
        Vector m(classes);
        for (int c = 0; c < classes; ++c) {
            CompensatedSum acc;
            for (const auto& p : group) acc.add(p[c]);
            m[c] = std::max(acc.value() / static_cast<double>(group.size()), 1e-12);
        }
        rows.push_back(m / m.sum());
    }
    return {DetectorKind::Klm, fitted::ClassProbabilities{stack_rows(rows)}};
}

DetectorState fit_dice(std::span<const ForwardTrace> val, const MlpModel& model, double sparsity) {
    const Matrix rows = penultimate_rows(val);
    const Vector mean_h = column_mean(rows);
    const auto& w = model.last_layer().weight;
    if (w.cols() != mean_h.size()) throw DimensionMismatch("last layer width differs from penultimate width");
    const Matrix contrib = w.array().rowwise() * mean_h.transpose().array();
    const double threshold =
        percentile(std::span<const double>(contrib.data(), static_cast<std::size_t>(contrib.size())), sparsity);
    fitted::MaskedLayer m;
    m.weight = w;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            if (contrib(i, j) < threshold) m.weight(i, j) = 0.0;
        }
    }
    m.bias = model.last_layer().bias;
    return {DetectorKind::Dice, std::move(m)};
}

DetectorState make_ash(const MlpModel& model, double percentile_value) {
    if (!(percentile_value >= 0.0 && percentile_value <= 100.0)) {
        throw ContractViolation("ASH percentile outside [0, 100]");
    }
    return {DetectorKind::Ash, fitted::Prune{percentile_value, model.last_layer().weight, model.last_layer().bias}};
}

DetectorState fit_vim(std::span<const ForwardTrace> train, std::span<const ForwardTrace> val, int dim) {
    const Matrix rows = penultimate_rows(train);
    const auto width = static_cast<int>(rows.cols());
    if (width < 2) throw ContractViolation("ViM needs a penultimate width of at least 2");
    if (dim <= 0) dim = width / 2;
    if (dim >= width) throw ContractViolation("ViM subspace dimension must be below the feature width");
    fitted::Residual r;
    r.center = column_mean(rows);
    const auto eig = symmetric_eigen(covariance(rows, r.center));
    // Eigenvalues ascend: the first width - dim vectors span the complement.
    r.complement = eig.vectors.leftCols(width - dim);

    const auto& calib = val.empty() ? train : val;
    CompensatedSum logit_acc;
    CompensatedSum resid_acc;
    for (const auto& t : calib) {
        logit_acc.add(t.logits.maxCoeff());
        resid_acc.add((r.complement.transpose() * (t.penultimate() - r.center)).norm());
    }
    const double mean_resid = std::max(resid_acc.value() / static_cast<double>(calib.size()), 1e-12);
    r.scale = (logit_acc.value() / static_cast<double>(calib.size())) / mean_resid;
    return {DetectorKind::Vim, std::move(r)};
}

Vector gram_features(const Vector& activation, int order) {
    const Vector powered = activation.array().pow(order).matrix();
    const double total = powered.sum();
    Vector out(activation.size());
    for (Eigen::Index i = 0; i < activation.size(); ++i) {
        const double v = powered[i] * total;
        out[i] = std::copysign(std::pow(std::abs(v), 1.0 / order), v);
    }
    return out;
}

std::vector<double> gram_deviations(const fitted::GramRanges& ranges, const ForwardTrace& trace) {
    if (trace.hidden.size() != ranges.min.size()) throw DimensionMismatch("trace depth differs from Gram state");
    const auto c = static_cast<std::size_t>(trace.predicted_class());
    std::vector<double> out(trace.hidden.size(), 0.0);
    for (std::size_t l = 0; l < trace.hidden.size(); ++l) {
        if (c >= ranges.min[l].size()) throw DimensionMismatch("predicted class outside Gram state");
        CompensatedSum acc;
        for (int q = 1; q <= fitted::GramRanges::kOrders; ++q) {
            const Vector v = gram_features(trace.hidden[l], q);
            const Vector& lo = ranges.min[l][c][static_cast<std::size_t>(q - 1)];
            const Vector& hi = ranges.max[l][c][static_cast<std::size_t>(q - 1)];
            if (v.size() != lo.size()) throw DimensionMismatch("layer width differs from Gram state");
            for (Eigen::Index i = 0; i < v.size(); ++i) {
                acc.add(std::max(lo[i] - v[i], 0.0) / std::max(std::abs(lo[i]), 1e-12));
                acc.add(std::max(v[i] - hi[i], 0.0) / std::max(std::abs(hi[i]), 1e-12));
            }
        }
        out[l] = acc.value();
    }
    return out;
}

DetectorState fit_gram(std::span<const ForwardTrace> train, std::span<const ForwardTrace> val, int classes) {
    if (train.empty()) throw ContractViolation("Gram needs training traces");
    const std::size_t depth = train.front().hidden.size();
    fitted::GramRanges g;
    g.min.assign(depth, std::vector<std::vector<Vector>>(static_cast<std::size_t>(classes)));
    g.max = g.min;
    std::vector<std::vector<Vector>> all_min(depth);
    std::vector<std::vector<Vector>> all_max(depth);
    auto widen = [](std::vector<Vector>& lo, std::vector<Vector>& hi, const std::vector<Vector>& feats) {
        if (lo.empty()) {
            lo = feats;
            hi = feats;
            return;
        }
        for (std::size_t q = 0; q < feats.size(); ++q) {
            lo[q] = lo[q].cwiseMin(feats[q]);
            hi[q] = hi[q].cwiseMax(feats[q]);
        }
    };
    for (const auto& t : train) {
        if (t.hidden.size() != depth) throw DimensionMismatch("trace depths differ");
        const auto c = static_cast<std::size_t>(t.predicted_class());
        if (c >= static_cast<std::size_t>(classes)) throw DimensionMismatch("predicted class outside class count");
        for (std::size_t l = 0; l < depth; ++l) {
            std::vector<Vector> feats;
            for (int q = 1; q <= fitted::GramRanges::kOrders; ++q) feats.push_back(gram_features(t.hidden[l], q));
            widen(g.min[l][c], g.max[l][c], feats);
            widen(all_min[l], all_max[l], feats);
        }
    }
    // Classes never predicted on train fall back to the pooled ranges.
    for (std::size_t l = 0; l < depth; ++l) {
        for (std::size_t c = 0; c < static_cast<std::size_t>(classes); ++c) {
            if (g.min[l][c].empty()) {
                g.min[l][c] = all_min[l];
                g.max[l][c] = all_max[l];
            }
        }
    }
    g.normalizer.assign(depth, 1.0);
    const auto& calib = val.empty() ? train : val;
    std::vector<CompensatedSum> acc(depth);
    for (const auto& t : calib) {
        const auto dev = gram_deviations(g, t);
        for (std::size_t l = 0; l < depth; ++l) acc[l].add(dev[l]);
    }
    for (std::size_t l = 0; l < depth; ++l) {
        g.normalizer[l] = std::max(acc[l].value() / static_cast<double>(calib.size()), 1e-12);
    }
    return {DetectorKind::Gram, std::move(g)};
}

DetectorState fit_detector(DetectorKind kind, const FitData& data, const DetectorParams& params) {
    auto need_model = [&]() -> const MlpModel& {
        if (data.model == nullptr) throw ContractViolation("detector needs the trained model");
        return *data.model;
    };
    auto classes = [&] { return need_model().num_classes(); };
    switch (kind) {
        case DetectorKind::Msp:
        case DetectorKind::Mls:
        case DetectorKind::GradNorm:
            return {kind, fitted::None{}};
        case DetectorKind::Ebo:
            if (!(params.ebo_temperature > 0.0)) throw ContractViolation("EBO temperature must be positive");
            return {kind, fitted::Temperature{params.ebo_temperature}};
        case DetectorKind::TempScale:
            return fit_temp_scale(data.val, data.val_labels);
        case DetectorKind::Mds:
            return fit_mds(data.train, data.train_labels, classes(), params.ridge);
        case DetectorKind::Rmds:
            return fit_rmds(data.train, data.train_labels, classes(), params.ridge);
        case DetectorKind::Knn:
            return fit_knn(data.train, params.knn_k);
        case DetectorKind::React:
            return fit_react(data.val, need_model(), params.react_percentile);
        case DetectorKind::She:
            return fit_she(data.train, data.train_labels, classes());
        case DetectorKind::Klm:
            return fit_klm(data.val, classes());
        case DetectorKind::Dice:
            return fit_dice(data.val, need_model(), params.dice_sparsity);
        case DetectorKind::Ash:
            return make_ash(need_model(), params.ash_percentile);
        case DetectorKind::Vim:
            return fit_vim(data.train, data.val, params.vim_dim);
        case DetectorKind::Gram:
            return fit_gram(data.train, data.val, classes());
    }
    throw ContractViolation("unknown detector kind");
}

namespace {

template <typename T>
const T& fitted_as(const DetectorState& state) {
    const T* p = std::get_if<T>(&state.params);
    if (p == nullptr) {
        throw UnfittedState("detector state for '" + std::string(to_string(state.kind)) +
                            "' holds no fitted parameters");
    }
    return *p;
}

}  // namespace

NoveltyScore score(const DetectorState& state, const ForwardTrace& trace) {
    const DetectorKind kind = state.kind;
    auto tagged = [kind](double v) { return NoveltyScore{v, kind}; };
    switch (kind) {
        case DetectorKind::Msp:
            fitted_as<fitted::None>(state);
            return score_msp(trace);
        case DetectorKind::Mls:
            fitted_as<fitted::None>(state);
            return score_mls(trace);
        case DetectorKind::GradNorm:
            fitted_as<fitted::None>(state);
            return score_gradnorm(trace);
        case DetectorKind::TempScale:
            return score_temp_scaled(trace, fitted_as<fitted::Temperature>(state).value);
        case DetectorKind::Ebo:
            return score_ebo(trace, fitted_as<fitted::Temperature>(state).value);
        case DetectorKind::Mds: {
            const auto& g = fitted_as<fitted::ClassGaussians>(state);
            check_width(trace, g.precision.rows());
            return tagged(min_class_mahalanobis(g, trace.penultimate()));
        }
        case DetectorKind::Rmds: {
            const auto& r = fitted_as<fitted::RelativeGaussians>(state);
            check_width(trace, r.background_precision.rows());
            const auto& h = trace.penultimate();
            return tagged(min_class_mahalanobis(r.classes, h) -
                          mahalanobis(h, r.background_mean, r.background_precision));
        }
        case DetectorKind::Knn: {
            const auto& nb = fitted_as<fitted::Neighbors>(state);
            check_width(trace, nb.embeddings.cols());
            Vector q = trace.penultimate();
            const double n = q.norm();
            if (n > 0.0) q /= n;
            std::vector<double> dist(static_cast<std::size_t>(nb.embeddings.rows()));
            for (Eigen::Index i = 0; i < nb.embeddings.rows(); ++i) {
                dist[static_cast<std::size_t>(i)] = (nb.embeddings.row(i).transpose() - q).squaredNorm();
            }
            auto kth = dist.begin() + (nb.k - 1);
            std::nth_element(dist.begin(), kth, dist.end());
            return tagged(std::sqrt(*kth));
        }
        case DetectorKind::React: {
            const auto& c = fitted_as<fitted::Clamp>(state);
            const Vector h = trace.penultimate().cwiseMin(c.limit);
            return tagged(energy(recompute_logits(c.weight, c.bias, h), 1.0));
        }
        case DetectorKind::She: {
            const auto& p = fitted_as<fitted::Patterns>(state);
            check_width(trace, p.patterns.cols());
            const int y = trace.predicted_class();
            if (y >= p.patterns.rows()) throw DimensionMismatch("predicted class outside stored patterns");
            return tagged(-trace.penultimate().dot(p.patterns.row(y).transpose()));
        }
        case DetectorKind::Klm: {
            const auto& k = fitted_as<fitted::ClassProbabilities>(state);
            if (trace.logits.size() != k.probabilities.cols()) throw DimensionMismatch("logit width differs from KLM state");
            const Vector p = softmax(trace.logits);
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index r = 0; r < k.probabilities.rows(); ++r) {
                CompensatedSum kl;
                for (Eigen::Index i = 0; i < p.size(); ++i) {
                    if (p[i] > 0.0) kl.add(p[i] * std::log(p[i] / k.probabilities(r, i)));
                }
                best = std::min(best, kl.value());
            }
            return tagged(best);
        }
        case DetectorKind::Dice: {
            const auto& m = fitted_as<fitted::MaskedLayer>(state);
            return tagged(energy(recompute_logits(m.weight, m.bias, trace.penultimate()), 1.0));
        }
        case DetectorKind::Ash: {
            const auto& a = fitted_as<fitted::Prune>(state);
            const auto& h = trace.penultimate();
            const double cut = percentile(as_span(h), a.percentile);
            const Vector pruned = (h.array() < cut).select(0.0, h);
            return tagged(energy(recompute_logits(a.weight, a.bias, pruned), 1.0));
        }
        case DetectorKind::Vim: {
            const auto& r = fitted_as<fitted::Residual>(state);
            check_width(trace, r.center.size());
            const double resid = (r.complement.transpose() * (trace.penultimate() - r.center)).norm();
            return tagged(r.scale * resid - logsumexp(trace.logits));
        }
        case DetectorKind::Gram: {
            const auto& g = fitted_as<fitted::GramRanges>(state);
            const auto dev = gram_deviations(g, trace);
            CompensatedSum acc;
            for (std::size_t l = 0; l < dev.size(); ++l) acc.add(dev[l] / g.normalizer[l]);
            return tagged(acc.value());
        }
    }
    throw ContractViolation("unknown detector kind");
}

// ---------------------------------------------------------------------------
// Serialization

void save_state(const DetectorState& state, std::ostream& out) {
    serial::Writer w(out);
    w.text("detector", to_string(state.kind));
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
                throw UnfittedState("cannot save an unfitted detector state");
            } else if constexpr (std::is_same_v<T, fitted::None>) {
                w.text("params", "none");
            } else if constexpr (std::is_same_v<T, fitted::Temperature>) {
                w.text("params", "temperature");
                w.real("value", p.value);
            } else if constexpr (std::is_same_v<T, fitted::ClassGaussians>) {
                w.text("params", "class-gaussians");
                w.integer("classes", static_cast<std::int64_t>(p.means.size()));
                for (const auto& m : p.means) w.vector("mean", m);
                w.matrix("precision", p.precision);
            } else if constexpr (std::is_same_v<T, fitted::RelativeGaussians>) {
                w.text("params", "relative-gaussians");
                w.integer("classes", static_cast<std::int64_t>(p.classes.means.size()));
                for (const auto& m : p.classes.means) w.vector("mean", m);
                w.matrix("precision", p.classes.precision);
                w.vector("background_mean", p.background_mean);
                w.matrix("background_precision", p.background_precision);
            } else if constexpr (std::is_same_v<T, fitted::Neighbors>) {
                w.text("params", "neighbors");
                w.integer("k", p.k);
                w.matrix("embeddings", p.embeddings);
            } else if constexpr (std::is_same_v<T, fitted::Clamp>) {
                w.text("params", "clamp");
                w.real("limit", p.limit);
                w.matrix("weight", p.weight);
                w.vector("bias", p.bias);
            } else if constexpr (std::is_same_v<T, fitted::Patterns>) {
                w.text("params", "patterns");
                w.matrix("patterns", p.patterns);
            } else if constexpr (std::is_same_v<T, fitted::ClassProbabilities>) {
                w.text("params", "class-probabilities");
                w.matrix("probabilities", p.probabilities);
            } else if constexpr (std::is_same_v<T, fitted::MaskedLayer>) {
                w.text("params", "masked-layer");
                w.matrix("weight", p.weight);
                w.vector("bias", p.bias);
            } else if constexpr (std::is_same_v<T, fitted::Prune>) {
                w.text("params", "prune");
                w.real("percentile", p.percentile);
                w.matrix("weight", p.weight);
                w.vector("bias", p.bias);
            } else if constexpr (std::is_same_v<T, fitted::Residual>) {
                w.text("params", "residual");
                w.vector("center", p.center);
                w.matrix("complement", p.complement);
                w.real("scale", p.scale);
            } else if constexpr (std::is_same_v<T, fitted::GramRanges>) {
                w.text("params", "gram-ranges");
                w.integer("layers", static_cast<std::int64_t>(p.min.size()));
                w.integer("classes", static_cast<std::int64_t>(p.min.empty() ? 0 : p.min.front().size()));
                for (std::size_t l = 0; l < p.min.size(); ++l) {
                    for (std::size_t c = 0; c < p.min[l].size(); ++c) {
                        for (std::size_t q = 0; q < p.min[l][c].size(); ++q) {
                            w.vector("min", p.min[l][c][q]);
                            w.vector("max", p.max[l][c][q]);
                        }
                    }
                }
                w.reals("normalizer", p.normalizer);
            }
        },
        state.params);
}

DetectorState load_state(std::istream& in) {
    serial::Reader r(in);
    DetectorState state;
    state.kind = parse_detector(r.text("detector"));
    const std::string tag = r.text("params");
    if (tag == "none") {
        state.params = fitted::None{};
    } else if (tag == "temperature") {
        state.params = fitted::Temperature{r.real("value")};
    } else if (tag == "class-gaussians" || tag == "relative-gaussians") {
        fitted::ClassGaussians g;
        const auto classes = r.integer("classes");
        for (std::int64_t k = 0; k < classes; ++k) g.means.push_back(r.vector("mean"));
        g.precision = r.matrix("precision");
        if (tag == "class-gaussians") {
            state.params = std::move(g);
        } else {
            fitted::RelativeGaussians rel;
            rel.classes = std::move(g);
            rel.background_mean = r.vector("background_mean");
            rel.background_precision = r.matrix("background_precision");
            state.params = std::move(rel);
        }
    } else if (tag == "neighbors") {
        fitted::Neighbors nb;
        nb.k = static_cast<int>(r.integer("k"));
        nb.embeddings = r.matrix("embeddings");
        state.params = std::move(nb);
    } else if (tag == "clamp") {
        fitted::Clamp c;
        c.limit = r.real("limit");
        c.weight = r.matrix("weight");
        c.bias = r.vector("bias");
        state.params = std::move(c);
    } else if (tag == "patterns") {
        state.params = fitted::Patterns{r.matrix("patterns")};
    } else if (tag == "class-probabilities") {
        state.params = fitted::ClassProbabilities{r.matrix("probabilities")};
    } else if (tag == "masked-layer") {
        fitted::MaskedLayer m;
        m.weight = r.matrix("weight");
        m.bias = r.vector("bias");
        state.params = std::move(m);
    } else if (tag == "prune") {
        fitted::Prune p;
        p.percentile = r.real("percentile");
        p.weight = r.matrix("weight");
        p.bias = r.vector("bias");
        state.params = std::move(p);
    } else if (tag == "residual") {
        fitted::Residual res;
        res.center = r.vector("center");
        res.complement = r.matrix("complement");
        res.scale = r.real("scale");
        state.params = std::move(res);
    } else if (tag == "gram-ranges") {
        fitted::GramRanges g;
        const auto layers = static_cast<std::size_t>(r.integer("layers"));
        const auto classes = static_cast<std::size_t>(r.integer("classes"));
        g.min.assign(layers, std::vector<std::vector<Vector>>(classes));
        g.max = g.min;
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t c = 0; c < classes; ++c) {
                for (int q = 0; q < fitted::GramRanges::kOrders; ++q) {
                    g.min[l][c].push_back(r.vector("min"));
                    g.max[l][c].push_back(r.vector("max"));
                }
            }
        }
        g.normalizer = r.reals("normalizer");
        state.params = std::move(g);
    } else {
        throw IoError("unknown detector parameter tag '" + tag + "'");
    }
    return state;
}

}  // namespace cea
