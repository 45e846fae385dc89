#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cea {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class NormOrder { L0 = 0, L1 = 1, L2 = 2 };

inline std::span<const double> as_span(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

double compensated_sum(std::span<const double> values);
double mean(std::span<const double> values);
// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_std(std::span<const double> values);

/// Numerically stable softmax: the maximum logit is subtracted before
/// exponentiation. Throws ContractViolation on an empty vector.
Vector softmax(const Vector& logits);

/// max + ln(sum(exp(l - max))). Throws ContractViolation on an empty vector.
double logsumexp(const Vector& logits);

/// Percentile with linear interpolation between closest ranks
/// (position p/100 * (n-1) in the sorted values). p must lie in [0, 100].
double percentile(std::span<const double> values, double p);

/// (cov + ridge * I)^-1 through a Cholesky factorization. Requires a square,
/// symmetric (1e-9) input. Throws SingularCovariance when the factorization
/// fails.
Matrix regularized_precision(const Matrix& cov, double ridge);

/// Default ridge for covariance estimates: 1e-6 * trace / dim.
double default_ridge(const Matrix& cov);

/// l0 (count of nonzero entries), l1 or l2 norm.
double lp_norm(std::span<const double> v, NormOrder order);
inline double lp_norm(const Vector& v, NormOrder order) { return lp_norm(as_span(v), order); }

struct SymmetricEigen {
    Vector values;   // ascending
    Matrix vectors;  // column i pairs with values[i]
};

SymmetricEigen symmetric_eigen(const Matrix& m);

// Row-wise statistics over the rows of `rows`, accumulated with compensation.
Vector column_mean(const Matrix& rows);
// Population covariance (1/N) of the rows around `center`.
Matrix covariance(const Matrix& rows, const Vector& center);

Matrix stack_rows(std::span<const Vector> rows);

}  // namespace cea
