#include "cea/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "cea/errors.hpp"
#include "cea/rng.hpp"

namespace cea {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// Splits one CSV record; double quotes group a field and "" escapes a quote.
std::vector<std::string> split_record(const std::string& line, char delimiter) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delimiter) {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

bool parse_number(const std::string& cell, double& out) {
    if (cell.empty()) return false;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace

RawTable load_csv(const std::filesystem::path& path, const std::string& label_column,
                  char delimiter) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV file: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DatasetError("CSV file has no header: " + path.string());
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_record(line, delimiter);

    const auto label_it = std::find(header.begin(), header.end(), label_column);
    if (label_it == header.end()) {
        throw DatasetError("label column '" + label_column + "' not found in " + path.string());
    }
    const auto label_pos = static_cast<std::size_t>(label_it - header.begin());

    RawTable table;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i != label_pos) table.column_names.push_back(header[i]);
    }
    const std::size_t dim = table.column_names.size();

    std::vector<double> values;
    std::map<std::string, int> class_ids;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto fields = split_record(line, delimiter);
        bool ok = fields.size() == header.size() && !fields[label_pos].empty();
        std::vector<double> row;
        row.reserve(dim);
        for (std::size_t i = 0; ok && i < fields.size(); ++i) {
            if (i == label_pos) continue;
            double v = 0.0;
            ok = parse_number(fields[i], v);
            row.push_back(v);
        }
        if (!ok) {
            ++table.dropped_rows;
            continue;
        }
        const std::string& name = fields[label_pos];
        auto [it, inserted] = class_ids.try_emplace(name, static_cast<int>(table.class_names.size()));
        if (inserted) table.class_names.push_back(name);
        table.labels.push_back(it->second);
        values.insert(values.end(), row.begin(), row.end());
    }

    table.num_classes = static_cast<int>(table.class_names.size());
    if (table.num_classes < 2) {
        throw DatasetError("fewer than 2 classes after cleaning " + path.string());
    }
    table.values = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(table.labels.size()),
                                      static_cast<Eigen::Index>(dim));
    return table;
}

RawTable make_synthetic(const SyntheticSpec& spec) {
    if (spec.classes < 2 || spec.dim < 2 || spec.per_class < 10) {
        throw ContractViolation("synthetic spec needs classes >= 2, dim >= 2, per_class >= 10");
    }
    Rng rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix centers = Matrix::Zero(spec.classes, spec.dim);
    for (int k = 0; k < spec.classes; ++k) {
        if (spec.classes <= spec.dim) {
            centers(k, k) = spec.separation;
        } else {
            Vector dir(spec.dim);
            for (int j = 0; j < spec.dim; ++j) dir[j] = normal(rng);
            centers.row(k) = spec.separation * dir.normalized().transpose();
        }
    }

    RawTable table;
    for (int j = 0; j < spec.dim; ++j) table.column_names.push_back("x" + std::to_string(j));
    for (int k = 0; k < spec.classes; ++k) table.class_names.push_back("class" + std::to_string(k));
    table.num_classes = spec.classes;

    const int n = spec.classes * spec.per_class;
    table.values.resize(n, spec.dim);
    table.labels.resize(static_cast<std::size_t>(n));
    int r = 0;
    for (int i = 0; i < spec.per_class; ++i) {
        for (int k = 0; k < spec.classes; ++k, ++r) {
            for (int j = 0; j < spec.dim; ++j) table.values(r, j) = centers(k, j) + normal(rng);
            table.labels[static_cast<std::size_t>(r)] = k;
        }
    }
    return table;
}

Matrix Standardization::apply(const Matrix& raw) const {
    if (raw.cols() != mean.size()) throw DimensionMismatch("standardization width mismatch");
    Matrix out = raw.rowwise() - mean.transpose();
    out.array().rowwise() /= scale.transpose().array();
    return out;
}

Vector Standardization::apply(const Vector& raw) const {
    if (raw.size() != mean.size()) throw DimensionMismatch("standardization width mismatch");
    return ((raw - mean).array() / scale.array()).matrix();
}

Standardization fit_standardization(const Matrix& rows) {
    if (rows.rows() == 0) throw ContractViolation("standardization needs at least one row");
    Standardization st;
    st.mean = column_mean(rows);
    st.scale.resize(rows.cols());
    st.constant.assign(static_cast<std::size_t>(rows.cols()), false);
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        CompensatedSum acc;
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            const double d = rows(i, j) - st.mean[j];
            acc.add(d * d);
        }
        const double sd = std::sqrt(acc.value() / static_cast<double>(rows.rows()));
        const bool constant = !(sd > 1e-8);
        st.constant[static_cast<std::size_t>(j)] = constant;
        st.scale[j] = constant ? 1.0 : sd;
    }
    return st;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
        if (splits[i] == split) out.push_back(i);
    }
    return out;
}

SplitView Dataset::view(Split split) const {
    SplitView v;
    v.rows = indices(split);
    v.features.resize(static_cast<Eigen::Index>(v.rows.size()), features.cols());
    v.labels.reserve(v.rows.size());
    for (std::size_t i = 0; i < v.rows.size(); ++i) {
        v.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(v.rows[i]));
        v.labels.push_back(labels[v.rows[i]]);
    }
    return v;
}

Dataset split_standardize(const RawTable& raw, const SplitFractions& fractions, std::uint64_t seed,
                          std::string name) {
    if (!(fractions.train > 0 && fractions.val > 0 && fractions.test > 0) ||
        std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
        throw ContractViolation("split fractions must be positive and sum to 1");
    }
    if (raw.rows() != raw.labels.size()) throw DimensionMismatch("label count differs from row count");

    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(raw.num_classes));
    for (std::size_t i = 0; i < raw.labels.size(); ++i) {
        const int y = raw.labels[i];
        if (y < 0 || y >= raw.num_classes) throw DatasetError("label outside [0, num_classes)");
        by_class[static_cast<std::size_t>(y)].push_back(i);
    }

    Rng rng(derive_seed(seed, "split"));
    std::vector<Split> splits(raw.rows(), Split::Test);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        if (idx.size() < 3) {
            throw DatasetError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                               " rows; stratification needs at least one per split");
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = static_cast<double>(idx.size());
        auto n_train = static_cast<std::size_t>(std::llround(n * fractions.train));
        auto n_val = static_cast<std::size_t>(std::llround(n * fractions.val));
        n_train = std::min(n_train, idx.size());
        n_val = std::min(n_val, idx.size() - n_train);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            splits[idx[i]] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
        }
    }

    Dataset ds;
    ds.name = std::move(name);
    ds.column_names = raw.column_names;
    ds.class_names = raw.class_names;
    ds.num_classes = raw.num_classes;
    ds.raw_features = raw.values;
    ds.labels = raw.labels;
    ds.splits = std::move(splits);

    const auto train_rows = ds.indices(Split::Train);
    if (train_rows.empty()) throw DatasetError("empty train split");
    Matrix train(static_cast<Eigen::Index>(train_rows.size()), raw.values.cols());
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
        train.row(static_cast<Eigen::Index>(i)) = raw.values.row(static_cast<Eigen::Index>(train_rows[i]));
    }
    ds.standardization = fit_standardization(train);
    ds.features = ds.standardization.apply(ds.raw_features);
    return ds;
}

Dataset restrict_columns(const Dataset& dataset, const std::vector<std::string>& columns) {
    if (columns.empty()) throw ContractViolation("column list is empty");
    std::vector<Eigen::Index> pos;
    for (const auto& c : columns) {
        const auto it = std::find(dataset.column_names.begin(), dataset.column_names.end(), c);
        if (it == dataset.column_names.end()) throw DatasetError("column '" + c + "' not in dataset");
        pos.push_back(it - dataset.column_names.begin());
    }
    Dataset out = dataset;
    out.column_names = columns;
    const auto n = static_cast<Eigen::Index>(dataset.rows());
    const auto d = static_cast<Eigen::Index>(pos.size());
    out.raw_features.resize(n, d);
    out.features.resize(n, d);
    out.standardization.mean.resize(d);
    out.standardization.scale.resize(d);
    out.standardization.constant.assign(pos.size(), false);
    for (Eigen::Index j = 0; j < d; ++j) {
        const auto src = pos[static_cast<std::size_t>(j)];
        out.raw_features.col(j) = dataset.raw_features.col(src);
        out.features.col(j) = dataset.features.col(src);
        out.standardization.mean[j] = dataset.standardization.mean[src];
        out.standardization.scale[j] = dataset.standardization.scale[src];
        out.standardization.constant[static_cast<std::size_t>(j)] =
            dataset.standardization.constant[static_cast<std::size_t>(src)];
    }
    return out;
}

}  // namespace cea
