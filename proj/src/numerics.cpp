#include "cea/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cea/errors.hpp"

namespace cea {

double compensated_sum(std::span<const double> values) {
    CompensatedSum acc;
    for (double v : values) acc.add(v);
    return acc.value();
}

double mean(std::span<const double> values) {
    if (values.empty()) throw ContractViolation("mean of an empty range");
    return compensated_sum(values) / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
    if (values.size() < 2) return 0.0;
    const double m = mean(values);
    CompensatedSum acc;
    for (double v : values) acc.add((v - m) * (v - m));
    return std::sqrt(acc.value() / static_cast<double>(values.size() - 1));
}

Vector softmax(const Vector& logits) {
    if (logits.size() == 0) throw ContractViolation("softmax of an empty vector");
    const double top = logits.maxCoeff();
    Vector out = (logits.array() - top).exp().matrix();
    out /= out.sum();
    return out;
}

double logsumexp(const Vector& logits) {
    if (logits.size() == 0) throw ContractViolation("logsumexp of an empty vector");
    const double top = logits.maxCoeff();
    if (logits.size() == 1) return top;
    if (!std::isfinite(top)) return top;
    return top + std::log((logits.array() - top).exp().sum());
}

double percentile(std::span<const double> values, double p) {
    if (values.empty()) throw ContractViolation("percentile of an empty range");
    if (!(p >= 0.0 && p <= 100.0)) {
        std::ostringstream msg;
        msg << "percentile " << p << " outside [0, 100]";
        throw ContractViolation(msg.str());
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0) return sorted[lo];
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Matrix regularized_precision(const Matrix& cov, double ridge) {
    if (cov.rows() != cov.cols()) throw ContractViolation("covariance must be square");
    if (cov.size() > 0 && (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
        throw ContractViolation("covariance is not symmetric");
    }
    const auto n = cov.rows();
    Eigen::MatrixXd reg = cov;
    reg.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() != Eigen::Success) {
        throw SingularCovariance("covariance is not positive definite after ridge " +
                                 std::to_string(ridge));
    }
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
    Matrix out = 0.5 * (inv + inv.transpose());
    if (!out.allFinite()) throw SingularCovariance("non-finite precision matrix");
    return out;
}

double default_ridge(const Matrix& cov) {
    if (cov.rows() == 0) return 0.0;
    return 1e-6 * cov.trace() / static_cast<double>(cov.rows());
}

double lp_norm(std::span<const double> v, NormOrder order) {
    switch (order) {
        case NormOrder::L0:
            return static_cast<double>(
                std::count_if(v.begin(), v.end(), [](double x) { return x != 0.0; }));
        case NormOrder::L1: {
            CompensatedSum acc;
            for (double x : v) acc.add(std::abs(x));
            return acc.value();
        }
        case NormOrder::L2: {
            // Scale by a power of two near the largest magnitude: squares never
            // overflow and the scaling itself is exact.
            double largest = 0.0;
            for (double x : v) largest = std::max(largest, std::abs(x));
            if (largest == 0.0) return 0.0;
            if (!std::isfinite(largest)) return largest;
            const int e = std::ilogb(largest);
            CompensatedSum acc;
            for (double x : v) {
                const double r = std::ldexp(x, -e);
                acc.add(r * r);
            }
            return std::ldexp(std::sqrt(acc.value()), e);
        }
    }
    throw ContractViolation("unsupported norm order");
}

SymmetricEigen symmetric_eigen(const Matrix& m) {
    if (m.rows() != m.cols()) throw ContractViolation("eigendecomposition needs a square matrix");
    const Eigen::MatrixXd dense = m;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
    if (solver.info() != Eigen::Success) throw Error("eigendecomposition did not converge");
    return {solver.eigenvalues(), solver.eigenvectors()};
}

Vector column_mean(const Matrix& rows) {
    if (rows.rows() == 0) throw ContractViolation("mean of zero rows");
    Vector out(rows.cols());
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        CompensatedSum acc;
        for (Eigen::Index i = 0; i < rows.rows(); ++i) acc.add(rows(i, j));
        out[j] = acc.value() / static_cast<double>(rows.rows());
    }
    return out;
}

Matrix covariance(const Matrix& rows, const Vector& center) {
    if (rows.rows() == 0) throw ContractViolation("covariance of zero rows");
    if (rows.cols() != center.size()) throw DimensionMismatch("covariance center has wrong length");
    const auto d = rows.cols();
    Matrix centered = rows.rowwise() - center.transpose();
    std::vector<CompensatedSum> acc(static_cast<std::size_t>(d * (d + 1) / 2));
    for (Eigen::Index r = 0; r < centered.rows(); ++r) {
        const double* x = centered.row(r).data();
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) acc[k++].add(x[i] * x[j]);
        }
    }
    Matrix out(d, d);
    std::size_t k = 0;
    const double n = static_cast<double>(rows.rows());
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            out(i, j) = out(j, i) = acc[k++].value() / n;
        }
    }
    return out;
}

Matrix stack_rows(std::span<const Vector> rows) {
    if (rows.empty()) return Matrix(0, 0);
    Matrix out(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != out.cols()) throw DimensionMismatch("ragged rows");
        out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    return out;
}

}  // namespace cea
