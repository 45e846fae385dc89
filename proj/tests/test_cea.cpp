#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "cea/cea.hpp"
#include "cea/errors.hpp"
#include "oracles.hpp"

using namespace cea;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

ForwardTrace single(Vector h) {
    ForwardTrace t;
    t.hidden.push_back(std::move(h));
    t.logits = vec({0, 0});
    return t;
}

std::vector<double> as_vector(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::vector<ForwardTrace> relu_traces(std::uint64_t seed, int n, std::vector<int> widths) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<ForwardTrace> out;
    for (int i = 0; i < n; ++i) {
        ForwardTrace t;
        for (int w : widths) {
            Vector h(w);
            for (int j = 0; j < w; ++j) h[j] = std::max(d(rng), 0.0);
            t.hidden.push_back(h);
        }
        t.logits = vec({0, 0});
        out.push_back(std::move(t));
    }
    return out;
}

constexpr NormOrder kOrders[] = {NormOrder::L0, NormOrder::L1, NormOrder::L2};

int order_index(NormOrder o) { return o == NormOrder::L0 ? 0 : o == NormOrder::L1 ? 1 : 2; }

}  // namespace

TEST_CASE("cea_norm on the worked vector") {
    const std::vector<double> a{5, 1, 7};
    CHECK(cea_norm(a, 4.0, NormOrder::L2) == doctest::Approx(std::sqrt(10.0)).epsilon(1e-15));
    CHECK(cea_norm(a, 4.0, NormOrder::L0) == 2.0);
    CHECK(cea_norm(a, 4.0, NormOrder::L1) == 4.0);
    CHECK(cea_norm(a, 7.0, NormOrder::L2) == 0.0);
    CHECK(cea_norm(a, 8.0, NormOrder::L0) == 0.0);
}

TEST_CASE("cea_norm matches a term-by-term oracle") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        const Vector a = oracle::random_vector(rng, 1 + trial % 20, 2.0).cwiseAbs();
        const double tau = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        for (NormOrder o : kOrders) {
            const double expected = oracle::exceedance_norm(as_vector(a), tau, order_index(o));
            CHECK(std::abs(cea_norm(as_span(a), tau, o) - expected) <= 1e-12 * (1 + expected));
        }
    }
}

TEST_CASE("all-layers score sums width-normalized layer norms") {
    ForwardTrace t;
    t.hidden = {vec({5, 1, 7}), vec({2, 9}), vec({0, 0, 0, 6})};
    t.logits = vec({0, 0});
    const std::vector<double> tau{4.0, 1.0, 2.0};
    const double expected = std::sqrt(10.0) / 3 + std::sqrt(1.0 + 64.0) / 2 + 4.0 / 4;
    CHECK(std::abs(cea_score(t, tau, NormOrder::L2, LayerScope::AllLayers) - expected) < 1e-15);
    CHECK(cea_score(t, std::vector<double>{1.0}, NormOrder::L1, LayerScope::Penultimate) == 5.0);
    CHECK_THROWS_AS(cea_score(t, std::vector<double>{1.0, 2.0}, NormOrder::L2, LayerScope::AllLayers),
                    DimensionMismatch);
    CHECK_THROWS_AS(cea_score(t, tau, NormOrder::L2, LayerScope::Penultimate), ContractViolation);
}

TEST_CASE("property: cea_score is non-negative and zero exactly without exceedance") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const Vector a = oracle::random_vector(rng, 8, 2.0).cwiseMax(0.0);
        const double tau = std::uniform_real_distribution<double>(0.0, 4.0)(rng);
        const bool any_above = (a.array() > tau).any();
        for (NormOrder o : kOrders) {
            const double g = cea_norm(as_span(a), tau, o);
            CHECK(g >= 0.0);
            CHECK((g == 0.0) == !any_above);
        }
        CHECK(cea_norm(as_span(a), tau, NormOrder::L0) == static_cast<double>((a.array() > tau).count()));
    }
}

TEST_CASE("property: cea_score is monotone in activations and non-increasing in tau") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int trial = 0; trial < 500; ++trial) {
        const Vector a = oracle::random_vector(rng, 6, 2.0).cwiseMax(0.0);
        Vector b = a;
        for (Eigen::Index i = 0; i < b.size(); ++i) b[i] += u(rng) * (trial % 2);
        const double tau = u(rng), tau2 = tau + u(rng);
        for (NormOrder o : kOrders) {
            CHECK(cea_norm(as_span(a), tau, o) <= cea_norm(as_span(b), tau, o));
            CHECK(cea_norm(as_span(a), tau2, o) <= cea_norm(as_span(a), tau, o));
        }
    }
}

TEST_CASE("calibrate_tau values") {
    std::vector<ForwardTrace> val;
    for (int i = 1; i <= 1000; ++i) val.push_back(single(vec({static_cast<double>(i)})));
    CHECK(calibrate_tau(val, 100.0, 1.1, LayerScope::Penultimate)[0] == doctest::Approx(1100.0).epsilon(1e-15));

    const auto traces = relu_traces(4, 500, {7, 5});
    std::vector<double> pool;
    for (const auto& t : traces) pool.insert(pool.end(), t.penultimate().data(), t.penultimate().data() + 5);
    const double q = percentile(pool, 99.9);
    const double tau = calibrate_tau(traces, 99.9, 1.1, LayerScope::Penultimate)[0];
    CHECK(tau == 1.1 * q);

    // recount: share of pooled values strictly above tau / rho
    const double cut = tau / 1.1;
    const auto above = std::count_if(pool.begin(), pool.end(), [&](double v) { return v > cut; });
    CHECK(static_cast<double>(above) / pool.size() <= 0.001 + 1.0 / pool.size());

    const auto per_layer = calibrate_tau(traces, 99.9, 1.1, LayerScope::AllLayers);
    REQUIRE(per_layer.size() == 2);
    CHECK(per_layer[1] == tau);
    CHECK_THROWS_AS(calibrate_tau(std::vector<ForwardTrace>{}, 99.9, 1.1, LayerScope::Penultimate), CalibrationError);
    CHECK_THROWS_AS(calibrate_tau(traces, 0.0, 1.1, LayerScope::Penultimate), ContractViolation);
}

TEST_CASE("property: tau scales linearly with rho") {
    const auto traces = relu_traces(5, 200, {6, 6});
    const double base = calibrate_tau(traces, 99.0, 1.0, LayerScope::Penultimate)[0];
    CHECK(base > 0.0);
    for (double rho : {1.0, 1.1, 1.5, 2.0, 7.25}) {
        CHECK(std::abs(calibrate_tau(traces, 99.0, rho, LayerScope::Penultimate)[0] - rho * base) <= 1e-12 * rho * base);
    }
}

TEST_CASE("calibrate_lambda values") {
    const std::vector<double> f{4, 6}, g{0.5, 1.5};
    CHECK(calibrate_lambda(f, g, 1.0).lambda == 5.0);
    CHECK(calibrate_lambda(f, g, 1.0).rule == LambdaRule::Ratio);
    CHECK(calibrate_lambda(f, g, 0.0).lambda == 0.0);
    const std::vector<double> neg{-4, -6};
    CHECK(calibrate_lambda(neg, g, 1.0).lambda == 5.0);
    CHECK(calibrate_lambda(f, g, 2.5).lambda == 12.5);
    CHECK_THROWS_AS(calibrate_lambda(std::vector<double>{}, std::vector<double>{}, 1.0), ContractViolation);
    CHECK_THROWS_AS(calibrate_lambda(f, std::vector<double>{1.0}, 1.0), ContractViolation);
    CHECK_THROWS_AS(calibrate_lambda(f, g, -1.0), ContractViolation);
}

TEST_CASE("calibrate_lambda falls back when g vanishes") {
    const std::vector<double> f{-3, 1}, zero{0, 0};
    const auto retry = calibrate_lambda(f, zero, 1.0, std::vector<double>{0.5, 0.5});
    CHECK(retry.rule == LambdaRule::RatioUnscaledTau);
    CHECK(retry.lambda == 2.0);
    const auto fallback = calibrate_lambda(f, zero, 2.0, zero);
    CHECK(fallback.rule == LambdaRule::MeanAbsFallback);
    CHECK(fallback.lambda == 4.0);
    CHECK(calibrate_lambda(f, zero, 1.0).rule == LambdaRule::MeanAbsFallback);
}

TEST_CASE("calibrate walks the degenerate chain on real traces") {
    // values 1..100: p = 99 with rho = 1.1 leaves nothing above tau, but 100 exceeds tau / rho
    std::vector<ForwardTrace> val;
    std::vector<double> f;
    for (int i = 1; i <= 100; ++i) {
        val.push_back(single(vec({static_cast<double>(i)})));
        f.push_back(0.01 * i);
    }
    CeaSettings s;
    s.percentile = 99.0;
    const auto c = calibrate(val, f, s);
    CHECK(c.rule == LambdaRule::RatioUnscaledTau);
    const double p99 = 99.0 + 0.01;
    CHECK(std::abs(c.lambda - 50.5 / (100.0 - p99)) < 1e-9);

    s.percentile = 100.0;
    const auto m = calibrate(val, f, s);
    CHECK(m.rule == LambdaRule::MeanAbsFallback);
    CHECK(std::abs(m.lambda - 0.505) < 1e-12);

    s.percentile = 90.0;
    const auto r = calibrate(val, f, s);
    CHECK(r.rule == LambdaRule::Ratio);
    CHECK(r.lambda >= 0.0);
}

TEST_CASE("adjusted_score and decide") {
    CHECK(adjusted_score(1.5, 0.0, 5.0) == 1.5);
    CHECK(adjusted_score(1.0, std::sqrt(10.0), 5.0) == 1.0 + 5.0 * std::sqrt(10.0));
    CHECK(adjusted_score(-2.0, 3.0, 0.0) == -2.0);
    CHECK(decide(0.7, 0.7) == Verdict::Ood);
    CHECK(decide(std::nextafter(0.7, 0.0), 0.7) == Verdict::Id);

    // beta at the 95th percentile of validation scores flags at most 5% + 1/N
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> scores(777);
    for (auto& s : scores) s = adjusted_score(n(rng), std::max(n(rng), 0.0), 0.8);
    const double beta = percentile(scores, 95.0);
    const auto flagged = std::count_if(scores.begin(), scores.end(), [&](double s) { return decide(s, beta) == Verdict::Ood; });
    CHECK(static_cast<double>(flagged) / scores.size() <= 0.05 + 1.0 / scores.size());
}

TEST_CASE("property: decide is monotone in beta and adjusted_score in g") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double s = n(rng), b1 = n(rng), b2 = b1 + std::abs(n(rng));
        if (decide(s, b1) == Verdict::Id) CHECK(decide(s, b2) == Verdict::Id);
        const double f = n(rng), lam = std::abs(n(rng)), g1 = std::abs(n(rng)), g2 = g1 + std::abs(n(rng));
        CHECK(adjusted_score(f, g1, lam) <= adjusted_score(f, g2, lam));
    }
}

TEST_CASE("property: a correctly ranked pair with g(ID) = 0 keeps its order") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double f_id = n(rng), f_ood = f_id + std::abs(n(rng)) + 1e-9;
        const double g_ood = std::abs(n(rng)), lam = std::abs(n(rng));
        CHECK(adjusted_score(f_ood, g_ood, lam) > adjusted_score(f_id, 0.0, lam));
    }
}

TEST_CASE("settings validation") {
    CeaSettings s;
    CHECK_NOTHROW(s.validate());
    s.rho = 0.9;
    CHECK_THROWS_AS(s.validate(), ContractViolation);
    s = {};
    s.percentile = 0.0;
    CHECK_THROWS_AS(s.validate(), ContractViolation);
    s = {};
    s.gamma = -0.1;
    CHECK_THROWS_AS(s.validate(), ContractViolation);
    CHECK(parse_norm("l1") == NormOrder::L1);
    CHECK(parse_norm("0") == NormOrder::L0);
    CHECK_THROWS_AS(parse_norm("3"), ContractViolation);
    CHECK(parse_scope(to_string(LayerScope::AllLayers)) == LayerScope::AllLayers);
}

TEST_CASE("calibration and scorer bundles round-trip bit-exactly") {
    const auto traces = relu_traces(9, 100, {5, 4});
    std::vector<double> f;
    for (std::size_t i = 0; i < traces.size(); ++i) f.push_back(0.1 * static_cast<double>(i % 7) - 0.3);
    CeaSettings s;
    s.scope = LayerScope::AllLayers;
    s.norm = NormOrder::L1;
    s.percentile = 95.0;
    const auto c = calibrate(traces, f, s);
    std::stringstream buf;
    save_calibration(c, buf);
    const auto r = load_calibration(buf);
    CHECK(r.tau == c.tau);
    CHECK(r.lambda == c.lambda);
    CHECK(r.rule == c.rule);
    CHECK(r.settings.norm == c.settings.norm);
    CHECK(r.settings.scope == c.settings.scope);
    CHECK(r.settings.percentile == c.settings.percentile);

    std::vector<ScorerEntry> entries;
    entries.push_back({DetectorState{DetectorKind::Msp, fitted::None{}}, c, true});
    entries.push_back({DetectorState{DetectorKind::Ebo, fitted::Temperature{1.0}}, c, false});
    std::stringstream bundle;
    save_bundle(entries, bundle);
    const auto loaded = load_bundle(bundle);
    REQUIRE(loaded.size() == 2);
    for (const auto& t : traces) {
        CHECK(loaded[0].score(t) == entries[0].score(t));
        CHECK(loaded[1].score(t) == entries[1].score(t));
    }
    CHECK(entries[1].score(traces[0]) == score(entries[1].detector, traces[0]).value);
    std::stringstream bad("garbage\n");
    CHECK_THROWS_AS(load_calibration(bad), Error);
}
