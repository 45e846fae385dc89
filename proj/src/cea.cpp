#include "cea/cea.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "cea/errors.hpp"
#include "cea/serial.hpp"

namespace cea {

std::string_view to_string(LayerScope scope) {
    return scope == LayerScope::AllLayers ? "all-layers" : "penultimate";
}

LayerScope parse_scope(std::string_view text) {
    if (text == "penultimate") return LayerScope::Penultimate;
    if (text == "all-layers" || text == "all") return LayerScope::AllLayers;
    throw ContractViolation("unknown layer scope '" + std::string(text) + "'");
}

std::string_view to_string(NormOrder order) {
    switch (order) {
        case NormOrder::L0: return "l0";
        case NormOrder::L1: return "l1";
        case NormOrder::L2: return "l2";
    }
    return "l2";
}

NormOrder parse_norm(std::string_view text) {
    if (text == "0" || text == "l0") return NormOrder::L0;
    if (text == "1" || text == "l1") return NormOrder::L1;
    if (text == "2" || text == "l2") return NormOrder::L2;
    throw ContractViolation("norm order must be one of 0, 1, 2 (got '" + std::string(text) + "')");
}

std::string_view to_string(LambdaRule rule) {
    switch (rule) {
        case LambdaRule::Ratio: return "ratio";
        case LambdaRule::RatioUnscaledTau: return "ratio-unscaled-tau";
        case LambdaRule::MeanAbsFallback: return "mean-abs-fallback";
    }
    return "ratio";
}

void CeaSettings::validate() const {
    if (!(percentile > 0.0 && percentile <= 100.0)) throw ContractViolation("CEA percentile must lie in (0, 100]");
    if (!(rho >= 1.0) || !std::isfinite(rho)) throw ContractViolation("CEA rho must be >= 1");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ContractViolation("CEA gamma must be >= 0");
}

std::vector<double> calibrate_tau(std::span<const ForwardTrace> val, double p, double rho, LayerScope scope) {
    if (!(p > 0.0 && p <= 100.0)) throw ContractViolation("CEA percentile must lie in (0, 100]");
    if (!(rho > 0.0)) throw ContractViolation("CEA rho must be positive");
    if (val.empty()) throw CalibrationError("empty activation pool: no validation traces");
    const std::size_t depth = val.front().hidden.size();
    if (depth == 0) throw CalibrationError("empty activation pool: traces have no hidden layers");

    auto pooled = [&](std::size_t layer) {
        std::vector<double> pool;
        for (const auto& t : val) {
            if (t.hidden.size() != depth) throw DimensionMismatch("trace depths differ");
            const auto& a = t.hidden[layer];
            pool.insert(pool.end(), a.data(), a.data() + a.size());
        }
        if (pool.empty()) throw CalibrationError("empty activation pool in layer " + std::to_string(layer));
        return rho * percentile(pool, p);
    };

    if (scope == LayerScope::Penultimate) return {pooled(depth - 1)};
    std::vector<double> out;
    for (std::size_t l = 0; l < depth; ++l) out.push_back(pooled(l));
    return out;
}

double cea_norm(std::span<const double> activations, double tau, NormOrder order) {
    std::vector<double> excess(activations.size());
    std::transform(activations.begin(), activations.end(), excess.begin(),
                   [tau](double a) { return std::max(a - tau, 0.0); });
    return lp_norm(excess, order);
}

double cea_score(const ForwardTrace& trace, std::span<const double> tau, NormOrder order, LayerScope scope) {
    if (trace.hidden.empty()) throw DimensionMismatch("trace has no hidden layers");
    if (scope == LayerScope::Penultimate) {
        if (tau.size() != 1) throw ContractViolation("penultimate scope needs exactly one threshold");
        return cea_norm(as_span(trace.penultimate()), tau[0], order);
    }
    if (tau.size() != trace.hidden.size()) throw DimensionMismatch("one threshold per hidden layer required");
    CompensatedSum acc;
    for (std::size_t l = 0; l < trace.hidden.size(); ++l) {
        const auto& a = trace.hidden[l];
        acc.add(cea_norm(as_span(a), tau[l], order) / static_cast<double>(a.size()));
    }
    return acc.value();
}

double cea_score(const ForwardTrace& trace, const CeaCalibration& calibration) {
    return cea_score(trace, calibration.tau, calibration.settings.norm, calibration.settings.scope);
}

LambdaCalibration calibrate_lambda(std::span<const double> f, std::span<const double> g, double gamma,
                                   std::span<const double> g_unscaled) {
    if (f.empty() || g.empty()) throw ContractViolation("lambda calibration needs validation scores");
    if (f.size() != g.size()) throw ContractViolation("f and g validation sets differ in length");
    if (!g_unscaled.empty() && g_unscaled.size() != f.size()) {
        throw ContractViolation("unscaled g validation set differs in length");
    }
    if (!(gamma >= 0.0)) throw ContractViolation("gamma must be >= 0");
    const double eps = 1e-9 * static_cast<double>(f.size());
    const double sum_f = compensated_sum(f);

    const double sum_g = compensated_sum(g);
    if (std::abs(sum_g) >= eps) return {gamma * std::abs(sum_f / sum_g), LambdaRule::Ratio};
    if (!g_unscaled.empty()) {
        const double sum_g1 = compensated_sum(g_unscaled);
        if (std::abs(sum_g1) >= eps) return {gamma * std::abs(sum_f / sum_g1), LambdaRule::RatioUnscaledTau};
    }
    CompensatedSum abs_f;
    for (double v : f) abs_f.add(std::abs(v));
    return {gamma * abs_f.value() / static_cast<double>(f.size()), LambdaRule::MeanAbsFallback};
}

CeaCalibration calibrate(std::span<const ForwardTrace> val, std::span<const double> f_val,
                         const CeaSettings& settings) {
    settings.validate();
    if (val.size() != f_val.size()) throw ContractViolation("validation traces and scores differ in length");
    CeaCalibration c;
    c.settings = settings;
    c.tau = calibrate_tau(val, settings.percentile, settings.rho, settings.scope);

    std::vector<double> g(val.size());
    for (std::size_t i = 0; i < val.size(); ++i) g[i] = cea_score(val[i], c.tau, settings.norm, settings.scope);

    std::vector<double> g1;
    const double eps = 1e-9 * static_cast<double>(val.size());
    if (std::abs(compensated_sum(g)) < eps) {
        std::vector<double> tau1(c.tau);
        for (double& t : tau1) t /= settings.rho;
        g1.resize(val.size());
        for (std::size_t i = 0; i < val.size(); ++i) g1[i] = cea_score(val[i], tau1, settings.norm, settings.scope);
    }
    const auto lam = calibrate_lambda(f_val, g, settings.gamma, g1);
    c.lambda = lam.lambda;
    c.rule = lam.rule;
    return c;
}

void save_calibration(const CeaCalibration& c, std::ostream& out) {
    serial::Writer w(out);
    w.real("percentile", c.settings.percentile);
    w.real("rho", c.settings.rho);
    w.real("gamma", c.settings.gamma);
    w.text("norm", to_string(c.settings.norm));
    w.text("scope", to_string(c.settings.scope));
    w.reals("tau", c.tau);
    w.real("lambda", c.lambda);
    w.text("rule", to_string(c.rule));
}

CeaCalibration load_calibration(std::istream& in) {
    serial::Reader r(in);
    CeaCalibration c;
    c.settings.percentile = r.real("percentile");
    c.settings.rho = r.real("rho");
    c.settings.gamma = r.real("gamma");
    c.settings.norm = parse_norm(r.text("norm"));
    c.settings.scope = parse_scope(r.text("scope"));
    c.tau = r.reals("tau");
    c.lambda = r.real("lambda");
    const auto rule = r.text("rule");
    if (rule == "ratio") c.rule = LambdaRule::Ratio;
    else if (rule == "ratio-unscaled-tau") c.rule = LambdaRule::RatioUnscaledTau;
    else if (rule == "mean-abs-fallback") c.rule = LambdaRule::MeanAbsFallback;
    else throw IoError("unknown lambda rule '" + rule + "'");
    return c;
}

double ScorerEntry::score(const ForwardTrace& trace) const {
    const double f = cea::score(detector, trace).value;
    if (!cea_enabled) return f;
    return adjusted_score(f, cea_score(trace, calibration), calibration.lambda);
}

void save_bundle(std::span<const ScorerEntry> entries, std::ostream& out) {
    serial::Writer w(out);
    w.text("format", "cea-bundle-v1");
    w.integer("entries", static_cast<std::int64_t>(entries.size()));
    for (const auto& e : entries) {
        w.integer("cea_enabled", e.cea_enabled ? 1 : 0);
        save_state(e.detector, out);
        save_calibration(e.calibration, out);
    }
}

std::vector<ScorerEntry> load_bundle(std::istream& in) {
    serial::Reader r(in);
    if (r.text("format") != "cea-bundle-v1") throw IoError("not a cea-bundle-v1 record");
    const auto n = r.integer("entries");
    std::vector<ScorerEntry> out;
    for (std::int64_t i = 0; i < n; ++i) {
        ScorerEntry e;
        e.cea_enabled = r.integer("cea_enabled") != 0;
        e.detector = load_state(in);
        e.calibration = load_calibration(in);
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace cea
