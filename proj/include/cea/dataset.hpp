#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cea/numerics.hpp"

namespace cea {

/// Numeric table as ingested, before any standardization.
struct RawTable {
    std::vector<std::string> column_names;  // feature columns only
    Matrix values;                          // rows x columns
    std::vector<int> labels;                // dense class ids in [0, num_classes)
    std::vector<std::string> class_names;   // first-appearance order
    int num_classes = 0;
    std::size_t dropped_rows = 0;

    std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
};

/// Reads a headered CSV. Rows with missing or non-numeric cells are dropped
/// and counted in RawTable::dropped_rows. Class labels are mapped to dense ids
/// in order of first appearance.
RawTable load_csv(const std::filesystem::path& path, const std::string& label_column,
                  char delimiter = ',');

struct SyntheticSpec {
    int classes = 2;
    int dim = 16;
    int per_class = 1000;
    double separation = 6.0;
    std::uint64_t seed = 0;
};

/// Isotropic unit-variance Gaussian blobs. Class k is centred at
/// separation * e_k when classes <= dim, otherwise at separation times a
/// seeded random unit direction.
RawTable make_synthetic(const SyntheticSpec& spec);

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

struct SplitFractions {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

/// Per-column z-score record estimated on the training rows.
struct Standardization {
    Vector mean;
    Vector scale;               // std, or 1 for constant columns
    std::vector<bool> constant; // train std below 1e-8 (before substitution)

    Matrix apply(const Matrix& raw) const;
    Vector apply(const Vector& raw) const;
};

/// Population mean/std per column; columns with std <= 1e-8 get scale 1.
Standardization fit_standardization(const Matrix& rows);

struct SplitView {
    Matrix features;
    std::vector<int> labels;
    std::vector<std::size_t> rows;  // indices into the full dataset
};

struct Dataset {
    std::string name;
    std::vector<std::string> column_names;
    std::vector<std::string> class_names;
    int num_classes = 0;
    Matrix raw_features;  // unstandardized, kept for raw-space OOD synthesis
    Matrix features;      // standardized with the train statistics
    std::vector<int> labels;
    std::vector<Split> splits;
    Standardization standardization;

    std::size_t rows() const { return labels.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
    std::vector<std::size_t> indices(Split split) const;
    SplitView view(Split split) const;
};

/// Label-stratified seeded shuffle into train/val/test, then z-scoring with
/// statistics from the train rows only.
Dataset split_standardize(const RawTable& raw, const SplitFractions& fractions, std::uint64_t seed,
                          std::string name = {});

/// Copy of `dataset` restricted to the named columns (order as given). The
/// standardization record is restricted accordingly.
Dataset restrict_columns(const Dataset& dataset, const std::vector<std::string>& columns);

}  // namespace cea
