#include "cea/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <exception>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "cea/errors.hpp"
#include "cea/parallel.hpp"
#include "cea/rng.hpp"

namespace cea {

double auroc(std::span<const ScoreSample> samples) {
    std::size_t n_ood = 0;
    for (const auto& s : samples) {
        if (!std::isfinite(s.score)) throw ContractViolation("auroc: non-finite score");
        if (s.truth == Truth::Ood) ++n_ood;
    }
    const std::size_t n_id = samples.size() - n_ood;
    if (n_ood == 0 || n_id == 0) throw ContractViolation("auroc needs both ID and OOD samples");

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return samples[a].score < samples[b].score; });

    // Sum of 1-based midranks of the OOD samples. Ranks are integers or
    // halves, so the sum is exact in double for any realistic size.
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && samples[order[j + 1]].score == samples[order[i]].score) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k)
            if (samples[order[k]].truth == Truth::Ood) rank_sum += midrank;
        i = j + 1;
    }
    const double no = static_cast<double>(n_ood);
    const double ni = static_cast<double>(n_id);
    return (rank_sum - no * (no + 1.0) / 2.0) / (no * ni);
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    std::vector<ScoreSample> samples;
    samples.reserve(id_scores.size() + ood_scores.size());
    for (double s : id_scores) samples.push_back({s, Truth::Id});
    for (double s : ood_scores) samples.push_back({s, Truth::Ood});
    return auroc(samples);
}

double ece(std::span<const double> confidences, const std::vector<bool>& correct, int bins) {
    if (bins < 1) throw ContractViolation("ece needs at least one bin");
    if (confidences.size() != correct.size()) throw DimensionMismatch("ece: confidences and correctness differ in length");
    if (confidences.empty()) throw ContractViolation("ece of an empty sample");

    std::vector<CompensatedSum> conf_sum(static_cast<std::size_t>(bins));
    std::vector<std::size_t> hits(static_cast<std::size_t>(bins), 0);
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double c = confidences[i];
        if (!(c >= 0.0 && c <= 1.0)) throw ContractViolation("ece: confidence outside [0, 1]");
        auto b = static_cast<long>(std::ceil(c * bins)) - 1;
        b = std::clamp<long>(b, 0, bins - 1);
        conf_sum[static_cast<std::size_t>(b)].add(c);
        count[static_cast<std::size_t>(b)] += 1;
        if (correct[i]) hits[static_cast<std::size_t>(b)] += 1;
    }
    const double n = static_cast<double>(confidences.size());
    CompensatedSum total;
    for (std::size_t b = 0; b < count.size(); ++b) {
        if (count[b] == 0) continue;
        const double m = static_cast<double>(count[b]);
        const double acc = static_cast<double>(hits[b]) / m;
        const double conf = conf_sum[b].value() / m;
        total.add(m / n * std::abs(acc - conf));
    }
    return total.value();
}

double ece_of_traces(std::span<const ForwardTrace> traces, std::span<const int> labels, double temperature,
                     int bins) {
    if (traces.size() != labels.size()) throw DimensionMismatch("ece_of_traces: traces and labels differ in length");
    if (!(temperature > 0.0)) throw ContractViolation("ece_of_traces: temperature must be positive");
    std::vector<double> conf(traces.size());
    std::vector<bool> correct(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const Vector p = softmax(traces[i].logits / temperature);
        Eigen::Index arg = 0;
        conf[i] = p.maxCoeff(&arg);
        correct[i] = static_cast<int>(arg) == labels[i];
    }
    return ece(conf, correct, bins);
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (detectors.empty()) throw ConfigError("detectors", "at least one detector is required");
    if (alphas.empty()) throw ConfigError("alphas", "at least one alpha is required");
    for (double a : alphas)
        if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("alphas", "alphas must be positive and finite");
    if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
    if (max_variables == 0) throw ConfigError("max_variables", "must be positive");
    if (train.hidden.empty()) throw ConfigError("train.hidden", "at least one hidden layer is required");
    for (int w : train.hidden)
        if (w <= 0) throw ConfigError("train.hidden", "widths must be positive");
    if (train.epochs <= 0) throw ConfigError("train.epochs", "must be positive");
    if (train.batch_size <= 0) throw ConfigError("train.batch_size", "must be positive");
    if (!(train.learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be positive");
    if (!(train.momentum >= 0.0 && train.momentum < 1.0)) throw ConfigError("train.momentum", "must lie in [0, 1)");
    if (!(train.logitnorm_temperature > 0.0))
        throw ConfigError("train.logitnorm_temperature", "must be positive");
    const double sum = split.train + split.val + split.test;
    if (!(split.train > 0.0 && split.val > 0.0 && split.test > 0.0) || std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split", "fractions must be positive and sum to 1");
    try {
        cea.validate();
    } catch (const ContractViolation& e) {
        throw ConfigError("cea", e.what());
    }
    if (data.kind == DatasetSource::Kind::Csv) {
        if (data.path.empty()) throw ConfigError("data.path", "a CSV path is required");
        if (data.label_column.empty()) throw ConfigError("data.label_column", "a label column is required");
    } else {
        const auto& s = data.synthetic;
        if (s.classes < 2) throw ConfigError("data.classes", "at least two classes are required");
        if (s.dim < 2) throw ConfigError("data.dim", "at least two dimensions are required");
        if (s.per_class < 10) throw ConfigError("data.per_class", "at least ten rows per class are required");
    }
    const auto& p = detector_params;
    if (p.knn_k < 0) throw ConfigError("detector.knn_k", "must be >= 0");
    if (p.vim_dim < 0) throw ConfigError("detector.vim_dim", "must be >= 0");
    auto pct = [](double v, const char* key) {
        if (!(v >= 0.0 && v <= 100.0)) throw ConfigError(key, "must lie in [0, 100]");
    };
    pct(p.react_percentile, "detector.react_percentile");
    pct(p.dice_sparsity, "detector.dice_sparsity");
    pct(p.ash_percentile, "detector.ash_percentile");
    if (!(p.ebo_temperature > 0.0)) throw ConfigError("detector.ebo_temperature", "must be positive");
}

RawTable load_raw_table(const DatasetSource& source) {
    if (source.kind == DatasetSource::Kind::Synthetic) return make_synthetic(source.synthetic);
    return load_csv(source.path, source.label_column, source.delimiter);
}

Dataset build_dataset(const ExperimentConfig& config, const RawTable& raw, std::uint64_t seed) {
    return split_standardize(raw, config.split, seed, config.data.name);
}

namespace {

std::vector<ForwardTrace> traces_of(const MlpModel& model, const Matrix& rows, unsigned threads) {
    return forward_traces(model, rows, threads);
}

std::string grid_context(std::uint64_t seed, const DetectorKind* detector = nullptr,
                         std::optional<double> alpha = {}, std::optional<std::size_t> variable = {}) {
    std::ostringstream out;
    out << "seed=" << seed;
    if (detector) out << " detector=" << to_string(*detector);
    if (alpha) out << " alpha=" << *alpha;
    if (variable) out << " variable=" << *variable;
    return out.str();
}

std::vector<double> scores_of(const DetectorState& state, std::span<const ForwardTrace> traces) {
    std::vector<double> out(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) out[i] = score(state, traces[i]).value;
    return out;
}

}  // namespace

SeedContext prepare_seed(const ExperimentConfig& config, const RawTable& raw, std::uint64_t seed,
                         const ModelProvider& provider) {
    SeedContext ctx;
    ctx.seed = seed;
    ctx.dataset = build_dataset(config, raw, seed);

    std::optional<MlpModel> supplied;
    if (provider) supplied = provider(seed, ctx.dataset);
    if (supplied) {
        supplied->validate();
        if (supplied->input_dim() != ctx.dataset.dim())
            throw DimensionMismatch("supplied model input width does not match the dataset");
        if (supplied->num_classes() != ctx.dataset.num_classes)
            throw DimensionMismatch("supplied model class count does not match the dataset");
        ctx.model = std::move(*supplied);
    } else {
        TrainOptions opts = config.train;
        opts.seed = seed;
        ctx.model = train(ctx.dataset, opts);
    }

    const SplitView train_view = ctx.dataset.view(Split::Train);
    const SplitView val_view = ctx.dataset.view(Split::Val);
    const SplitView test_view = ctx.dataset.view(Split::Test);
    ctx.train = traces_of(ctx.model, train_view.features, config.threads);
    ctx.val = traces_of(ctx.model, val_view.features, config.threads);
    ctx.test = traces_of(ctx.model, test_view.features, config.threads);
    ctx.train_labels = train_view.labels;
    ctx.val_labels = val_view.labels;
    ctx.test_labels = test_view.labels;
    ctx.variables = select_variables(ctx.dataset, config.max_variables, seed);

    FitData data;
    data.model = &ctx.model;
    data.train = ctx.train;
    data.train_labels = ctx.train_labels;
    data.val = ctx.val;
    data.val_labels = ctx.val_labels;
    ctx.states.resize(config.detectors.size());
    parallel_for(config.detectors.size(), config.threads, [&](std::size_t d) {
        try {
            ctx.states[d] = fit_detector(config.detectors[d], data, config.detector_params);
        } catch (const Error& e) {
            std::throw_with_nested(GridError(grid_context(seed, &config.detectors[d]), e.what()));
        }
    });
    return ctx;
}

SeedEvaluation evaluate_seed(const ExperimentConfig& config, const SeedContext& ctx,
                             std::span<const CeaSettings> variants) {
    const std::size_t n_det = ctx.states.size();
    const std::size_t n_alpha = config.alphas.size();
    const std::size_t n_var = ctx.variables.size();
    const std::size_t n_variant = variants.size();
    if (n_var == 0) throw DatasetError("no eligible variables to scale");

    SeedEvaluation out;
    out.seed = ctx.seed;
    out.variables = ctx.variables;

    std::vector<std::vector<double>> f_test(n_det);
    std::vector<std::vector<double>> f_val(n_det);
    parallel_for(n_det, config.threads, [&](std::size_t d) {
        f_val[d] = scores_of(ctx.states[d], ctx.val);
        f_test[d] = scores_of(ctx.states[d], ctx.test);
    });

    out.calibrations.assign(n_variant, std::vector<CeaCalibration>(n_det));
    std::vector<std::vector<double>> g_test(n_variant);
    for (std::size_t v = 0; v < n_variant; ++v) {
        for (std::size_t d = 0; d < n_det; ++d) out.calibrations[v][d] = calibrate(ctx.val, f_val[d], variants[v]);
        const CeaCalibration& c = out.calibrations[v].front();
        g_test[v].resize(ctx.test.size());
        for (std::size_t i = 0; i < ctx.test.size(); ++i) g_test[v][i] = cea_score(ctx.test[i], c);
    }

    out.baseline.assign(n_det, std::vector<std::vector<double>>(n_alpha, std::vector<double>(n_var)));
    out.adjusted.assign(n_variant, out.baseline);

    // One work item per (alpha, variable); each owns distinct output slots.
    parallel_for(n_alpha * n_var, config.threads, [&](std::size_t item) {
        const std::size_t a = item / n_var;
        const std::size_t j = item % n_var;
        std::size_t d = 0;
        try {
            const OodSet ood = synthesize_scaled(ctx.dataset, config.alphas[a], ctx.variables[j], config.space);
            const std::vector<ForwardTrace> traces = traces_of(ctx.model, ood.features, 1);

            std::vector<std::vector<double>> g_ood(n_variant, std::vector<double>(traces.size()));
            for (std::size_t v = 0; v < n_variant; ++v)
                for (std::size_t i = 0; i < traces.size(); ++i)
                    g_ood[v][i] = cea_score(traces[i], out.calibrations[v].front());

            std::vector<double> id_adj(ctx.test.size());
            std::vector<double> ood_adj(traces.size());
            for (d = 0; d < n_det; ++d) {
                const std::vector<double> f_ood = scores_of(ctx.states[d], traces);
                out.baseline[d][a][j] = auroc(f_test[d], f_ood);
                for (std::size_t v = 0; v < n_variant; ++v) {
                    const double lambda = out.calibrations[v][d].lambda;
                    for (std::size_t i = 0; i < id_adj.size(); ++i)
                        id_adj[i] = adjusted_score(f_test[d][i], g_test[v][i], lambda);
                    for (std::size_t i = 0; i < ood_adj.size(); ++i)
                        ood_adj[i] = adjusted_score(f_ood[i], g_ood[v][i], lambda);
                    out.adjusted[v][d][a][j] = auroc(id_adj, ood_adj);
                }
            }
            } catch (const Error& e) {
            const DetectorKind* det = d < n_det ? &config.detectors[d] : nullptr;
            std::throw_with_nested(GridError(grid_context(ctx.seed, det, config.alphas[a], ctx.variables[j]), e.what()));
        }
    });
    return out;
}

namespace {

SeedAuroc summarize_seed(std::uint64_t seed, const std::vector<double>& per_variable) {
    SeedAuroc s;
    s.seed = seed;
    s.per_variable = per_variable;
    s.mean = mean(per_variable);
    s.std = sample_std(per_variable);
    return s;
}

void finish(ExperimentResult& r) {
    std::vector<double> means;
    for (const auto& s : r.seeds) means.push_back(s.mean);
    r.auroc_mean = mean(means);
    r.auroc_std = sample_std(means);
    r.n_variables = r.seeds.empty() ? 0 : r.seeds.front().per_variable.size();
}

// Shared driver: prepares each seed once and evaluates all variants on it.
std::vector<SeedEvaluation> evaluate_all(const ExperimentConfig& config, std::span<const CeaSettings> variants,
                                         const ModelProvider& provider, const SeedObserver& observer = {}) {
    config.validate();
    for (const auto& v : variants) v.validate();
    const RawTable raw = load_raw_table(config.data);
    std::vector<SeedEvaluation> evals;
    evals.reserve(config.seeds.size());
    for (std::uint64_t seed : config.seeds) {
        const SeedContext ctx = prepare_seed(config, raw, seed, provider);
        evals.push_back(evaluate_seed(config, ctx, variants));
        if (observer) observer(ctx, evals.back());
    }
    return evals;
}

double mean_first_tau(const std::vector<SeedEvaluation>& evals, std::size_t v, std::size_t d) {
    std::vector<double> taus;
    for (const auto& e : evals) taus.push_back(e.calibrations[v][d].tau.front());
    return mean(taus);
}

double mean_lambda(const std::vector<SeedEvaluation>& evals, std::size_t v, std::size_t d) {
    std::vector<double> lambdas;
    for (const auto& e : evals) lambdas.push_back(e.calibrations[v][d].lambda);
    return mean(lambdas);
}

}  // namespace

std::vector<ExperimentResult> run_experiment(const ExperimentConfig& config, const ModelProvider& provider,
                                             const SeedObserver& observer) {
    std::vector<CeaSettings> variants;
    if (config.cea_enabled) variants.push_back(config.cea);
    const auto evals = evaluate_all(config, variants, provider, observer);

    std::vector<ExperimentResult> results;
    for (std::size_t d = 0; d < config.detectors.size(); ++d) {
        for (std::size_t v = 0; v <= variants.size(); ++v) {
            const bool with_cea = v > 0;
            for (std::size_t a = 0; a < config.alphas.size(); ++a) {
                ExperimentResult r;
                r.dataset = config.data.name;
                r.detector = config.detectors[d];
                r.cea = with_cea;
                r.alpha = config.alphas[a];
                if (with_cea) {
                    r.settings = variants[v - 1];
                    r.tau_mean = mean_first_tau(evals, v - 1, d);
                    r.lambda_mean = mean_lambda(evals, v - 1, d);
                }
                for (const auto& e : evals)
                    r.seeds.push_back(summarize_seed(e.seed, with_cea ? e.adjusted[v - 1][d][a] : e.baseline[d][a]));
                finish(r);
                results.push_back(std::move(r));
            }
        }
    }
    return results;
}

std::string_view to_string(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::Percentile: return "percentile";
        case AblationAxis::Gamma: return "gamma";
        case AblationAxis::Norm: return "norm";
        case AblationAxis::Scope: return "scope";
    }
    return "?";
}

AblationAxis parse_axis(std::string_view text) {
    for (auto axis : {AblationAxis::Percentile, AblationAxis::Gamma, AblationAxis::Norm, AblationAxis::Scope})
        if (text == to_string(axis)) return axis;
    throw ConfigError("ablate.axis", "unknown ablation axis '" + std::string(text) + "'");
}

std::vector<double> default_axis_values(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::Percentile: return {90.0, 95.0, 99.0, 99.9, 100.0};
        case AblationAxis::Gamma: return {0.0, 0.1, 0.5, 1.0, 2.0, 10.0};
        case AblationAxis::Norm: return {0.0, 1.0, 2.0};
        case AblationAxis::Scope: return {0.0, 1.0};
    }
    return {};
}

namespace {

CeaSettings with_axis(CeaSettings s, AblationAxis axis, double value) {
    switch (axis) {
        case AblationAxis::Percentile: s.percentile = value; break;
        case AblationAxis::Gamma: s.gamma = value; break;
        case AblationAxis::Norm:
            if (value == 0.0) s.norm = NormOrder::L0;
            else if (value == 1.0) s.norm = NormOrder::L1;
            else if (value == 2.0) s.norm = NormOrder::L2;
            else throw ConfigError("ablate.values", "norm order must be 0, 1 or 2");
            break;
        case AblationAxis::Scope:
            if (value == 0.0) s.scope = LayerScope::Penultimate;
            else if (value == 1.0) s.scope = LayerScope::AllLayers;
            else throw ConfigError("ablate.values", "scope must be 0 (penultimate) or 1 (all layers)");
            break;
    }
    return s;
}

}  // namespace

std::vector<AblationRow> ablation_sweep(const ExperimentConfig& config, AblationAxis axis,
                                        std::span<const double> values, const ModelProvider& provider) {
    if (values.empty()) throw ConfigError("ablate.values", "at least one value is required");
    std::vector<CeaSettings> variants;
    for (double value : values) {
        CeaSettings s = with_axis(config.cea, axis, value);
        try {
            s.validate();
        } catch (const ContractViolation& e) {
            throw ConfigError("ablate.values", e.what());
        }
        variants.push_back(s);
    }
    const auto evals = evaluate_all(config, variants, provider);

    std::vector<AblationRow> rows;
    for (std::size_t d = 0; d < config.detectors.size(); ++d) {
        for (std::size_t a = 0; a < config.alphas.size(); ++a) {
            for (std::size_t v = 0; v <= variants.size(); ++v) {
                ExperimentResult r;
                for (const auto& e : evals)
                    r.seeds.push_back(summarize_seed(e.seed, v == 0 ? e.baseline[d][a] : e.adjusted[v - 1][d][a]));
                finish(r);
                AblationRow row;
                row.detector = config.detectors[d];
                row.axis = axis;
                row.baseline = v == 0;
                row.value = v == 0 ? 0.0 : values[v - 1];
                row.alpha = config.alphas[a];
                if (v > 0) {
                    row.tau_mean = mean_first_tau(evals, v - 1, d);
                    row.lambda_mean = mean_lambda(evals, v - 1, d);
                }
                row.auroc_mean = r.auroc_mean;
                row.auroc_std = r.auroc_std;
                rows.push_back(row);
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------

namespace {

using ojson = nlohmann::ordered_json;

ojson settings_json(const CeaSettings& s) {
    ojson j;
    j["percentile"] = s.percentile;
    j["rho"] = s.rho;
    j["gamma"] = s.gamma;
    j["norm"] = std::string(to_string(s.norm));
    j["scope"] = std::string(to_string(s.scope));
    return j;
}

CeaSettings settings_from(const ojson& j) {
    CeaSettings s;
    s.percentile = j.at("percentile").get<double>();
    s.rho = j.at("rho").get<double>();
    s.gamma = j.at("gamma").get<double>();
    s.norm = parse_norm(j.at("norm").get<std::string>());
    s.scope = parse_scope(j.at("scope").get<std::string>());
    return s;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string general(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

void write_results_jsonl(std::span<const ExperimentResult> results, std::ostream& out) {
    for (const auto& r : results) {
        ojson j;
        j["dataset"] = r.dataset;
        j["detector"] = std::string(to_string(r.detector));
        j["cea"] = r.cea;
        j["alpha"] = r.alpha;
        j["auroc_mean"] = r.auroc_mean;
        j["auroc_std"] = r.auroc_std;
        j["n_variables"] = r.n_variables;
        if (r.cea) {
            j["settings"] = settings_json(r.settings);
            j["tau_mean"] = r.tau_mean;
            j["lambda_mean"] = r.lambda_mean;
        }
        ojson seeds = ojson::array();
        for (const auto& s : r.seeds) {
            ojson e;
            e["seed"] = s.seed;
            e["mean"] = s.mean;
            e["std"] = s.std;
            e["per_variable"] = s.per_variable;
            seeds.push_back(std::move(e));
        }
        j["seeds"] = std::move(seeds);
        out << j.dump() << '\n';
    }
}

std::vector<ExperimentResult> read_results_jsonl(std::istream& in) {
    std::vector<ExperimentResult> results;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const ojson j = ojson::parse(line);
            ExperimentResult r;
            r.dataset = j.at("dataset").get<std::string>();
            r.detector = parse_detector(j.at("detector").get<std::string>());
            r.cea = j.at("cea").get<bool>();
            r.alpha = j.at("alpha").get<double>();
            r.auroc_mean = j.at("auroc_mean").get<double>();
            r.auroc_std = j.at("auroc_std").get<double>();
            r.n_variables = j.at("n_variables").get<std::size_t>();
            if (r.cea) {
                r.settings = settings_from(j.at("settings"));
                r.tau_mean = j.at("tau_mean").get<double>();
                r.lambda_mean = j.at("lambda_mean").get<double>();
            }
            for (const auto& e : j.at("seeds")) {
                SeedAuroc s;
                s.seed = e.at("seed").get<std::uint64_t>();
                s.mean = e.at("mean").get<double>();
                s.std = e.at("std").get<double>();
                s.per_variable = e.at("per_variable").get<std::vector<double>>();
                r.seeds.push_back(std::move(s));
            }
            results.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("results line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return results;
}

void write_results_csv(std::span<const ExperimentResult> results, std::ostream& out) {
    out << "dataset,detector,cea,alpha,seed,auroc_mean,auroc_std,n_variables\n";
    for (const auto& r : results) {
        const std::string prefix =
            r.dataset + "," + std::string(to_string(r.detector)) + "," + (r.cea ? "1" : "0") + "," + general(r.alpha) + ",";
        for (const auto& s : r.seeds)
            out << prefix << s.seed << "," << general(s.mean) << "," << general(s.std) << ","
                << s.per_variable.size() << "\n";
        out << prefix << "all," << general(r.auroc_mean) << "," << general(r.auroc_std) << "," << r.n_variables
            << "\n";
    }
}

void write_ablation_csv(std::span<const AblationRow> rows, std::ostream& out) {
    out << "detector,axis,value,alpha,tau_mean,lambda_mean,auroc_mean,auroc_std\n";
    for (const auto& r : rows) {
        out << to_string(r.detector) << "," << to_string(r.axis) << ","
            << (r.baseline ? std::string("baseline") : general(r.value)) << "," << general(r.alpha) << ","
            << general(r.tau_mean) << "," << general(r.lambda_mean) << "," << general(r.auroc_mean) << ","
            << general(r.auroc_std) << "\n";
    }
}

std::string display_name(DetectorKind kind) {
    switch (kind) {
        case DetectorKind::Msp: return "MSP";
        case DetectorKind::Mls: return "MLS";
        case DetectorKind::TempScale: return "TempScale";
        case DetectorKind::Ebo: return "EBO";
        case DetectorKind::Mds: return "MDS";
        case DetectorKind::Rmds: return "RMDS";
        case DetectorKind::Knn: return "KNN";
        case DetectorKind::React: return "ReAct";
        case DetectorKind::She: return "SHE";
        case DetectorKind::Klm: return "KLM";
        case DetectorKind::GradNorm: return "GradNorm";
        case DetectorKind::Dice: return "DICE";
        case DetectorKind::Ash: return "ASH";
        case DetectorKind::Vim: return "ViM";
        case DetectorKind::Gram: return "Gram";
    }
    return "?";
}

std::string render_table(std::span<const ExperimentResult> results) {
    // Group by dataset (first appearance), then detector (first appearance).
    std::vector<std::string> datasets;
    for (const auto& r : results)
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);

    std::ostringstream out;
    for (std::size_t k = 0; k < datasets.size(); ++k) {
        const std::string& name = datasets[k];
        std::vector<double> alphas;
        std::vector<DetectorKind> detectors;
        std::map<std::tuple<int, double, bool>, double> cell;
        for (const auto& r : results) {
            if (r.dataset != name) continue;
            if (std::find(alphas.begin(), alphas.end(), r.alpha) == alphas.end()) alphas.push_back(r.alpha);
            if (std::find(detectors.begin(), detectors.end(), r.detector) == detectors.end())
                detectors.push_back(r.detector);
            cell[{static_cast<int>(r.detector), r.alpha, r.cea}] = r.auroc_mean;
        }
        std::sort(alphas.begin(), alphas.end());

        if (k > 0) out << "\n";
        out << "### " << name << "\n\n";
        out << "AUROC (%), Baseline / Baseline & CEA\n\n";
        out << "| Detector |";
        for (double a : alphas) out << " alpha=" << general(a) << " |";
        out << "\n|:---|";
        for (std::size_t i = 0; i < alphas.size(); ++i) out << "---:|";
        out << "\n";
        for (DetectorKind d : detectors) {
            out << "| " << display_name(d) << " |";
            for (double a : alphas) {
                auto base = cell.find({static_cast<int>(d), a, false});
                auto adj = cell.find({static_cast<int>(d), a, true});
                out << " " << (base == cell.end() ? "-" : fixed(100.0 * base->second, 2)) << " / "
                    << (adj == cell.end() ? "-" : fixed(100.0 * adj->second, 2)) << " |";
            }
            out << "\n";
        }
    }
    return out.str();
}

}  // namespace cea
