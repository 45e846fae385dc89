#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cea/dataset.hpp"
#include "cea/numerics.hpp"

namespace cea {

enum class ScalingSpace { Standardized, Raw };

struct OodProvenance {
    enum class Kind { Scaled, External } kind = Kind::Scaled;
    std::size_t dim = 0;
    double alpha = 1.0;
    std::string source;  // external dataset name
};

struct OodSet {
    Matrix features;  // model-input (standardized) space
    OodProvenance provenance;
    Split source_split = Split::Test;
};

/// Copy of the ID test split with coordinate `dim` multiplied by alpha.
/// Standardized space scales the model input directly; Raw scales the raw
/// value and re-applies the train standardization.
OodSet synthesize_scaled(const Dataset& dataset, double alpha, std::size_t dim,
                         ScalingSpace space = ScalingSpace::Standardized);

/// Up to `max_count` distinct columns, sampled without replacement by seed,
/// among columns with train std > 1e-8 whose test values are not all 0.
/// Returns every eligible column when there are no more than `max_count`.
/// The result is sorted ascending.
std::vector<std::size_t> select_variables(const Dataset& dataset, std::size_t max_count, std::uint64_t seed);

/// OOD rows from another table, restricted to `shared_columns` and
/// standardized with the ID dataset's train statistics.
OodSet pair_external(const Dataset& id_dataset, const RawTable& ood_table,
                     const std::vector<std::string>& shared_columns, std::string source_name = "external");

}  // namespace cea
