#include "cea/oodsynth.hpp"

#include <algorithm>
#include <cmath>

#include "cea/errors.hpp"
#include "cea/rng.hpp"

namespace cea {

OodSet synthesize_scaled(const Dataset& dataset, double alpha, std::size_t dim, ScalingSpace space) {
    if (dim >= dataset.dim()) {
        throw ContractViolation("scaling dimension " + std::to_string(dim) + " out of range for " +
                                std::to_string(dataset.dim()) + " features");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ContractViolation("alpha must be positive");
    const auto rows = dataset.indices(Split::Test);
    const auto d = static_cast<Eigen::Index>(dim);
    OodSet out;
    out.provenance = {OodProvenance::Kind::Scaled, dim, alpha, dataset.name};
    out.source_split = Split::Test;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), dataset.features.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        const auto o = static_cast<Eigen::Index>(i);
        out.features.row(o) = dataset.features.row(r);
        if (space == ScalingSpace::Standardized) {
            out.features(o, d) = dataset.features(r, d) * alpha;
        } else {
            const auto& st = dataset.standardization;
            out.features(o, d) = (dataset.raw_features(r, d) * alpha - st.mean[d]) / st.scale[d];
        }
    }
    return out;
}

std::vector<std::size_t> select_variables(const Dataset& dataset, std::size_t max_count, std::uint64_t seed) {
    const auto test = dataset.indices(Split::Test);
    std::vector<std::size_t> eligible;
    for (std::size_t j = 0; j < dataset.dim(); ++j) {
        if (dataset.standardization.constant[j]) continue;
        const bool all_zero = std::all_of(test.begin(), test.end(), [&](std::size_t r) {
            return dataset.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) == 0.0;
        });
        if (!all_zero) eligible.push_back(j);
    }
    if (eligible.size() <= max_count) return eligible;
    Rng rng(derive_seed(seed, "variables"));
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(max_count);
    std::sort(eligible.begin(), eligible.end());
    return eligible;
}

OodSet pair_external(const Dataset& id_dataset, const RawTable& ood_table,
                     const std::vector<std::string>& shared_columns, std::string source_name) {
    if (shared_columns.empty()) throw ContractViolation("no shared columns between ID and OOD tables");
    const Dataset id = restrict_columns(id_dataset, shared_columns);
    std::vector<Eigen::Index> pos;
    for (const auto& c : shared_columns) {
        const auto it = std::find(ood_table.column_names.begin(), ood_table.column_names.end(), c);
        if (it == ood_table.column_names.end()) throw DatasetError("column '" + c + "' not in OOD table");
        pos.push_back(it - ood_table.column_names.begin());
    }
    Matrix raw(ood_table.values.rows(), static_cast<Eigen::Index>(pos.size()));
    for (std::size_t j = 0; j < pos.size(); ++j) raw.col(static_cast<Eigen::Index>(j)) = ood_table.values.col(pos[j]);
    OodSet out;
    out.features = id.standardization.apply(raw);
    out.provenance.kind = OodProvenance::Kind::External;
    out.provenance.source = std::move(source_name);
    out.source_split = Split::Test;
    return out;
}

}  // namespace cea
