#include <doctest.h>

#include <cmath>
#include <set>

#include "cea/errors.hpp"
#include "cea/oodsynth.hpp"

using namespace cea;

namespace {

Dataset blobs(int dim = 16, std::uint64_t seed = 1) {
    SyntheticSpec s;
    s.dim = dim;
    s.per_class = 60;
    return split_standardize(make_synthetic(s), {}, seed, "blobs");
}

// Dataset whose test rows are replaced by an OOD set, so scaling can be chained.
Dataset with_test_rows(Dataset d, const OodSet& ood) {
    const auto rows = d.indices(Split::Test);
    for (std::size_t i = 0; i < rows.size(); ++i)
        d.features.row(static_cast<Eigen::Index>(rows[i])) = ood.features.row(static_cast<Eigen::Index>(i));
    return d;
}

}  // namespace

TEST_CASE("synthesize_scaled values") {
    const Dataset d = blobs();
    const auto test = d.view(Split::Test);
    const OodSet same = synthesize_scaled(d, 1.0, 3);
    CHECK(same.features == test.features);
    CHECK(same.provenance.kind == OodProvenance::Kind::Scaled);

    Dataset small = d;
    const auto rows = small.indices(Split::Test);
    small.features(static_cast<Eigen::Index>(rows[0]), 2) = 0.5;
    small.features(static_cast<Eigen::Index>(rows[1]), 2) = -1.0;
    const OodSet ten = synthesize_scaled(small, 10.0, 2);
    CHECK(ten.features(0, 2) == 5.0);
    CHECK(ten.features(1, 2) == -10.0);
    CHECK(ten.provenance.alpha == 10.0);
    CHECK(ten.provenance.dim == 2);

    Dataset zero = d;
    for (auto r : zero.indices(Split::Test)) zero.features(static_cast<Eigen::Index>(r), 5) = 0.0;
    CHECK(synthesize_scaled(zero, 1000.0, 5).features == zero.view(Split::Test).features);

    CHECK_THROWS_AS(synthesize_scaled(d, 10.0, 16), ContractViolation);
    CHECK_THROWS_AS(synthesize_scaled(d, 0.0, 1), ContractViolation);
    CHECK_THROWS_AS(synthesize_scaled(d, -2.0, 1), ContractViolation);
}

TEST_CASE("property: scaling changes exactly one column") {
    const Dataset d = blobs();
    const Matrix base = d.view(Split::Test).features;
    for (double alpha : {2.0, 3.0, 10.0, 1000.0})
        for (std::size_t dim = 0; dim < d.dim(); ++dim) {
            const OodSet o = synthesize_scaled(d, alpha, dim);
            double other = 0.0;
            for (Eigen::Index j = 0; j < base.cols(); ++j)
                if (j != static_cast<Eigen::Index>(dim)) other += (o.features.col(j) - base.col(j)).cwiseAbs().sum();
            CHECK(other == 0.0);
            CHECK(o.features.col(static_cast<Eigen::Index>(dim)) == alpha * base.col(static_cast<Eigen::Index>(dim)));
        }
}

TEST_CASE("property: scaling composes multiplicatively") {
    const Dataset d = blobs();
    // powers of two multiply without rounding
    for (auto [a, b] : {std::pair{2.0, 4.0}, {0.5, 8.0}, {16.0, 64.0}}) {
        const OodSet once = synthesize_scaled(d, a * b, 7);
        const OodSet twice = synthesize_scaled(with_test_rows(d, synthesize_scaled(d, a, 7)), b, 7);
        CHECK(once.features == twice.features);
    }
    // other factors agree to rounding
    const OodSet once = synthesize_scaled(d, 1000.0, 4);
    const OodSet twice = synthesize_scaled(with_test_rows(d, synthesize_scaled(d, 10.0, 4)), 100.0, 4);
    CHECK((once.features - twice.features).cwiseAbs().maxCoeff() <= 1e-15 * once.features.cwiseAbs().maxCoeff());
}

TEST_CASE("raw-space scaling re-applies the train standardization") {
    const Dataset d = blobs();
    const OodSet o = synthesize_scaled(d, 3.0, 1, ScalingSpace::Raw);
    const auto rows = d.indices(Split::Test);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        const double expected = (3.0 * d.raw_features(r, 1) - d.standardization.mean[1]) / d.standardization.scale[1];
        CHECK(o.features(static_cast<Eigen::Index>(i), 1) == doctest::Approx(expected).epsilon(1e-14));
        CHECK(o.features(static_cast<Eigen::Index>(i), 0) == d.features(r, 0));
    }
}

TEST_CASE("select_variables values") {
    const Dataset twelve = blobs(12);
    const auto all = select_variables(twelve, 50, 0);
    CHECK(all.size() == 12);
    for (std::size_t j = 0; j < 12; ++j) CHECK(all[j] == j);

    const Dataset wide = blobs(200);
    const auto capped = select_variables(wide, 50, 3);
    CHECK(capped.size() == 50);
    CHECK(std::set<std::size_t>(capped.begin(), capped.end()).size() == 50);
    CHECK(std::is_sorted(capped.begin(), capped.end()));
    CHECK(select_variables(wide, 50, 3) == capped);
    CHECK(select_variables(wide, 50, 4) != capped);
}

TEST_CASE("property: select_variables skips constant and all-zero columns") {
    SyntheticSpec s;
    s.dim = 10;
    s.per_class = 60;
    RawTable raw = make_synthetic(s);
    raw.values.col(2).setConstant(4.0);
    Dataset d = split_standardize(raw, {}, 5, "blobs");
    for (auto r : d.indices(Split::Test)) d.features(static_cast<Eigen::Index>(r), 6) = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto v = select_variables(d, 5, seed);
        CHECK(v.size() == 5);
        for (auto j : v) {
            CHECK(j != 2);
            CHECK(j != 6);
        }
    }
    CHECK(select_variables(d, 50, 0).size() == 8);
}

TEST_CASE("pair_external values") {
    const Dataset d = blobs();
    const auto test = d.view(Split::Test);
    RawTable self;
    self.column_names = d.column_names;
    self.values.resize(static_cast<Eigen::Index>(test.rows.size()), static_cast<Eigen::Index>(d.dim()));
    for (std::size_t i = 0; i < test.rows.size(); ++i)
        self.values.row(static_cast<Eigen::Index>(i)) = d.raw_features.row(static_cast<Eigen::Index>(test.rows[i]));
    const OodSet same = pair_external(d, self, d.column_names, "self");
    CHECK((same.features - test.features).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(same.provenance.kind == OodProvenance::Kind::External);
    CHECK(same.provenance.source == "self");

    // another blob table with the same schema, standardized by hand on three rows
    SyntheticSpec other;
    other.seed = 99;
    other.per_class = 20;
    const RawTable t = make_synthetic(other);
    const OodSet o = pair_external(d, t, {"x0", "x5"});
    REQUIRE(o.features.cols() == 2);
    for (Eigen::Index i = 0; i < 3; ++i) {
        CHECK(o.features(i, 0) ==
              doctest::Approx((t.values(i, 0) - d.standardization.mean[0]) / d.standardization.scale[0]).epsilon(1e-14));
        CHECK(o.features(i, 1) ==
              doctest::Approx((t.values(i, 5) - d.standardization.mean[5]) / d.standardization.scale[5]).epsilon(1e-14));
    }

    CHECK_THROWS_AS(pair_external(d, t, {}), ContractViolation);
    RawTable disjoint = t;
    disjoint.column_names.assign(disjoint.column_names.size(), "other");
    CHECK_THROWS_AS(pair_external(d, disjoint, {"x0"}), DatasetError);
    CHECK_THROWS_AS(pair_external(d, t, {"nope"}), DatasetError);
}
