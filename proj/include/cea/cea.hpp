#pragma once

// Capturing extreme activations: an l_p norm of the activations exceeding a
// validation-derived threshold, added to a baseline novelty score.

#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "cea/detectors.hpp"
#include "cea/network.hpp"
#include "cea/numerics.hpp"

namespace cea {

enum class LayerScope { Penultimate, AllLayers };

std::string_view to_string(LayerScope scope);
LayerScope parse_scope(std::string_view text);
std::string_view to_string(NormOrder order);
NormOrder parse_norm(std::string_view text);

struct CeaSettings {
    double percentile = 99.9;  // p, in (0, 100]
    double rho = 1.1;          // threshold scale, >= 1
    double gamma = 1.0;        // tradeoff multiplier, >= 0
    NormOrder norm = NormOrder::L2;
    LayerScope scope = LayerScope::Penultimate;

    // Throws ContractViolation when a field is out of range.
    void validate() const;
};

enum class LambdaRule {
    Ratio,              // gamma * |sum f / sum g|
    RatioUnscaledTau,   // same ratio with g recomputed at rho = 1
    MeanAbsFallback,    // gamma * mean |f|
};

std::string_view to_string(LambdaRule rule);

struct CeaCalibration {
    CeaSettings settings;
    std::vector<double> tau;  // one entry, or one per hidden layer for AllLayers
    double lambda = 0.0;
    LambdaRule rule = LambdaRule::Ratio;
};

/// tau = rho * percentile(pooled activations, p) over the scoped layer(s).
/// AllLayers yields one threshold per hidden layer. Throws CalibrationError
/// on an empty pool.
std::vector<double> calibrate_tau(std::span<const ForwardTrace> val, double percentile, double rho,
                                  LayerScope scope);

/// || max(a - tau, 0) ||_p for one activation vector.
double cea_norm(std::span<const double> activations, double tau, NormOrder order);

/// Scoped score: the penultimate norm, or the sum over hidden layers of each
/// layer's norm divided by its width.
double cea_score(const ForwardTrace& trace, std::span<const double> tau, NormOrder order, LayerScope scope);
double cea_score(const ForwardTrace& trace, const CeaCalibration& calibration);

struct LambdaCalibration {
    double lambda = 0.0;
    LambdaRule rule = LambdaRule::Ratio;
};

/// lambda = gamma * |sum f / sum g|. When |sum g| < 1e-9 * N the ratio is
/// retried with `g_unscaled` (g at rho = 1); if that is also degenerate or
/// absent, lambda = gamma * mean |f|.
LambdaCalibration calibrate_lambda(std::span<const double> f, std::span<const double> g, double gamma,
                                   std::span<const double> g_unscaled = {});

/// Thresholds and lambda for one baseline, from its validation scores.
CeaCalibration calibrate(std::span<const ForwardTrace> val, std::span<const double> f_val,
                         const CeaSettings& settings);

inline double adjusted_score(double f, double g, double lambda) { return f + lambda * g; }

enum class Verdict { Id, Ood };

/// OOD iff score >= beta.
inline Verdict decide(double score, double beta) { return score >= beta ? Verdict::Ood : Verdict::Id; }

void save_calibration(const CeaCalibration& calibration, std::ostream& out);
CeaCalibration load_calibration(std::istream& in);

/// A fitted detector and its CEA calibration; fully determines scoring.
struct ScorerEntry {
    DetectorState detector;
    CeaCalibration calibration;
    bool cea_enabled = true;

    double score(const ForwardTrace& trace) const;
};

void save_bundle(std::span<const ScorerEntry> entries, std::ostream& out);
std::vector<ScorerEntry> load_bundle(std::istream& in);

}  // namespace cea
