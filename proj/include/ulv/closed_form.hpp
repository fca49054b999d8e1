#ifndef ULV_CLOSED_FORM_HPP
#define ULV_CLOSED_FORM_HPP

#include "distributions.hpp"
#include "pairwise.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

/**
 * @file closed_form.hpp
 * @brief Closed-form test and least-squares latent levels for a single difference matrix.
 */

namespace ulv {

/**
 * @brief Outcome of testing one gene.
 */
struct TestResult {
    std::string gene_id;
    /// Estimated group effect on the metric scale.
    double effect = 0;
    double null_center = 0;
    double statistic = 0;
    double df = 0;
    double p_value = 1;
    std::string method;
    /// Set when the variance estimate is zero and the p-value comes from the continuity limit.
    bool degenerate = false;
    int n_case = 0;
    int n_control = 0;
};

struct ClosedFormOptions {
    double null_center = 0.5;
    Alternative alternative = Alternative::TWO_SIDED;
    bool normal_approx = false;
};

namespace internal {

/// P-value under a zero variance estimate: 1 at the null center, 0 elsewhere.
inline void degenerate_result(TestResult& output, double difference, double scale) {
    output.degenerate = true;
    const double tol = 1e-12 * std::max(1.0, scale);
    if (std::abs(difference) <= tol) {
        output.statistic = 0;
        output.p_value = 1;
    } else {
        output.statistic = (difference > 0 ? 1 : -1) * std::numeric_limits<double>::infinity();
        output.p_value = 0;
    }
}

}

/**
 * t-test of the mean pairwise difference, using the row and column mean-squares of the difference matrix.
 * The statistic is (d.. - mu0) / sqrt(s_row^2 / m + s_col^2 / n) where s_row^2 is the sample variance of the case-row means
 * and s_col^2 that of the control-column means, referred to t with m + n - 2 degrees of freedom.
 * The residual term of the sums-of-squares decomposition is not included.
 */
template<typename Derived>
TestResult closed_form_test(const Eigen::MatrixBase<Derived>& diff, const ClosedFormOptions& options = {}) {
    const Eigen::Index m = diff.rows(), n = diff.cols();
    if (m < 2 || n < 2) {
        throw std::invalid_argument("insufficient subjects (need at least 2 cases and 2 controls)");
    }

    const auto values = diff.derived().template cast<double>().eval();
    const double grand = values.mean();
    const Eigen::VectorXd row_means = values.rowwise().mean();
    const Eigen::VectorXd col_means = values.colwise().mean().transpose();
    const double s_row = (row_means.array() - grand).square().sum() / static_cast<double>(m - 1);
    const double s_col = (col_means.array() - grand).square().sum() / static_cast<double>(n - 1);
    const double variance = s_row / static_cast<double>(m) + s_col / static_cast<double>(n);

    TestResult output;
    output.effect = grand;
    output.null_center = options.null_center;
    output.df = static_cast<double>(m + n - 2);
    output.method = "ulv-closed-form";
    output.n_case = m;
    output.n_control = n;

    const double difference = grand - options.null_center;
    const double scale = std::max(std::abs(grand), std::abs(options.null_center));
    if (!(std::sqrt(variance) > 1e-12 * std::max(1.0, scale))) {
        internal::degenerate_result(output, difference, scale);
        if (output.p_value == 0 && options.alternative != Alternative::TWO_SIDED) {
            const bool toward = (options.alternative == Alternative::GREATER) == (difference > 0);
            output.p_value = toward ? 0 : 1;
        }
        return output;
    }

    output.statistic = difference / std::sqrt(variance);
    output.p_value = t_pvalue(output.statistic, output.df, options.alternative, options.normal_approx);
    return output;
}

template<typename Scalar>
TestResult closed_form_test(const DifferenceMatrix<Scalar>& diff, ClosedFormOptions options = {}) {
    options.null_center = static_cast<double>(diff.null_center);
    return closed_form_test(diff.values, options);
}

/**
 * Identifying constraint for the least-squares latent levels, which are only unique up to a common shift.
 */
enum class LevelConstraint {
    ZERO_MEAN_CONTROL, ///< Control levels sum to zero.
    MIN_NORM           ///< Smallest sum of squares of all levels, i.e., the Moore-Penrose solution.
};

template<typename Scalar>
struct LatentLevels {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> case_levels;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> control_levels;
};

/**
 * Least-squares solution of d_ij = a_i - b_j.
 *
 * Under `ZERO_MEAN_CONTROL`, a_i is the i-th row mean and b_j = d.. - d.j.
 * `MIN_NORM` shifts both by -m d.. / (m + n), which minimizes the norm of the stacked levels.
 * Fitted values a_i - b_j = d_i. + d.j - d.. are the same under either constraint.
 */
template<typename Derived>
LatentLevels<typename Derived::Scalar> lse_solution(const Eigen::MatrixBase<Derived>& diff, LevelConstraint constraint = LevelConstraint::ZERO_MEAN_CONTROL) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index m = diff.rows(), n = diff.cols();
    if (m < 1 || n < 1) {
        throw std::invalid_argument("difference matrix must be non-empty");
    }

    const Scalar grand = diff.mean();
    LatentLevels<Scalar> output;
    output.case_levels = diff.rowwise().mean();
    output.control_levels = (Scalar(grand) - diff.colwise().mean().transpose().array()).matrix();

    if (constraint == LevelConstraint::MIN_NORM) {
        const Scalar shift = -Scalar(m) * grand / Scalar(m + n);
        output.case_levels.array() += shift;
        output.control_levels.array() += shift;
    }
    return output;
}

/**
 * Residuals d_ij - (a_i - b_j) of a set of latent levels.
 */
template<typename Derived, typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> lse_residuals(const Eigen::MatrixBase<Derived>& diff, const LatentLevels<Scalar>& levels) {
    const Eigen::Index m = diff.rows(), n = diff.cols();
    return diff - (levels.case_levels.rowwise().replicate(n) - levels.control_levels.transpose().colwise().replicate(m));
}

}

#endif
