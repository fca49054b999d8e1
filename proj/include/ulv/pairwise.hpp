#ifndef ULV_PAIRWISE_HPP
#define ULV_PAIRWISE_HPP

#include "ranks.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

/**
 * @file pairwise.hpp
 * @brief Matrix of differences between every case subject and every control subject for a single gene.
 */

namespace ulv {

/**
 * Function used to compare the cells of a case subject against those of a control subject.
 */
enum class DifferenceMetric {
    PI,                     ///< Probabilistic index of case cells over control cells.
    LOGIT_PI,               ///< Logit of the clamped probabilistic index.
    MEAN_DIFF,              ///< Difference of subject means.
    MEDIAN_DIFF,            ///< Difference of subject medians.
    MEAN_GREATER_INDICATOR  ///< 1 if the case mean exceeds the control mean, 1/2 on ties, else 0.
};

/**
 * Value of the per-pair difference when the two groups do not differ.
 */
inline double null_center(DifferenceMetric metric) {
    switch (metric) {
        case DifferenceMetric::PI:
        case DifferenceMetric::MEAN_GREATER_INDICATOR:
            return 0.5;
        default:
            return 0;
    }
}

/**
 * Whether the metric can be written as g(case) - g(control), in which case the least-squares latent levels are exact.
 */
inline bool is_separable(DifferenceMetric metric) {
    return metric == DifferenceMetric::MEAN_DIFF || metric == DifferenceMetric::MEDIAN_DIFF;
}

/**
 * Whether the latent-model effect lives on (or maps back onto) the probabilistic index scale.
 */
inline bool has_pi_scale(DifferenceMetric metric) {
    return !is_separable(metric);
}

inline std::string_view to_string(DifferenceMetric metric) {
    switch (metric) {
        case DifferenceMetric::PI: return "pi";
        case DifferenceMetric::LOGIT_PI: return "logit-pi";
        case DifferenceMetric::MEAN_DIFF: return "mean";
        case DifferenceMetric::MEDIAN_DIFF: return "median";
        case DifferenceMetric::MEAN_GREATER_INDICATOR: return "mean-greater";
    }
    return "unknown";
}

inline DifferenceMetric parse_metric(std::string_view name) {
    for (auto m : { DifferenceMetric::PI, DifferenceMetric::LOGIT_PI, DifferenceMetric::MEAN_DIFF, DifferenceMetric::MEDIAN_DIFF, DifferenceMetric::MEAN_GREATER_INDICATOR }) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw std::invalid_argument("unknown difference metric '" + std::string(name) + "' (expected pi, logit-pi, mean, median or mean-greater)");
}

/**
 * @brief Pairwise differences d_ij between case subject i and control subject j for one gene.
 */
template<typename Scalar = double>
struct DifferenceMatrix {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    /// m x n matrix, rows are case subjects and columns are control subjects.
    Matrix values;
    std::vector<std::string> case_ids;
    std::vector<std::string> control_ids;
    /// Cells per case subject.
    Eigen::VectorXi case_sizes;
    /// Cells per control subject.
    Eigen::VectorXi control_sizes;
    DifferenceMetric metric = DifferenceMetric::PI;
    Scalar null_center = 0.5;

    Eigen::Index n_case() const { return values.rows(); }
    Eigen::Index n_control() const { return values.cols(); }
};

namespace internal {

template<typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template<typename Scalar>
Scalar sample_median(Vector<Scalar> sorted) {
    const Eigen::Index len = sorted.size();
    const Eigen::Index half = len / 2;
    if (len % 2 == 1) {
        return sorted[half];
    }
    return (sorted[half - 1] + sorted[half]) / Scalar(2);
}

template<typename Scalar>
void check_subjects(const std::vector<Vector<Scalar>>& subjects, const char* group) {
    if (subjects.size() < 2) {
        throw std::invalid_argument(std::string("insufficient subjects in the ") + group + " group (need at least 2)");
    }
    for (const auto& s : subjects) {
        if (s.size() == 0) {
            throw std::invalid_argument(std::string("subject with 0 cells in the ") + group + " group");
        }
        if (!s.array().isFinite().all()) {
            throw std::invalid_argument(std::string("non-finite cell value in the ") + group + " group");
        }
    }
}

template<typename Scalar>
std::vector<Vector<Scalar>> sorted_copies(const std::vector<Vector<Scalar>>& subjects) {
    std::vector<Vector<Scalar>> output = subjects;
    for (auto& s : output) {
        std::sort(s.data(), s.data() + s.size());
    }
    return output;
}

inline std::vector<std::string> default_ids(std::vector<std::string> ids, std::size_t count, const char* prefix) {
    if (ids.empty()) {
        for (std::size_t i = 0; i < count; ++i) {
            ids.push_back(prefix + std::to_string(i + 1));
        }
    } else if (ids.size() != count) {
        throw std::invalid_argument("number of subject identifiers does not match the number of subjects");
    }
    return ids;
}

}

/**
 * Build the matrix of differences between every case subject and every control subject.
 *
 * @param case_cells Expression values for each case subject, one vector of cells per subject.
 * @param control_cells Expression values for each control subject.
 * @param metric Difference function applied to each (case, control) pair.
 * @param case_ids Optional identifiers for the case subjects.
 * @param control_ids Optional identifiers for the control subjects.
 *
 * Each group needs at least 2 subjects and every subject needs at least one cell.
 * Covariates play no role here, adjustment happens entirely in the latent model.
 */
template<typename Scalar>
DifferenceMatrix<Scalar> build_difference_matrix(
    const std::vector<internal::Vector<Scalar>>& case_cells,
    const std::vector<internal::Vector<Scalar>>& control_cells,
    DifferenceMetric metric,
    std::vector<std::string> case_ids = {},
    std::vector<std::string> control_ids = {})
{
    internal::check_subjects(case_cells, "case");
    internal::check_subjects(control_cells, "control");

    const Eigen::Index m = case_cells.size(), n = control_cells.size();
    DifferenceMatrix<Scalar> output;
    output.metric = metric;
    output.null_center = static_cast<Scalar>(ulv::null_center(metric));
    output.case_ids = internal::default_ids(std::move(case_ids), m, "case");
    output.control_ids = internal::default_ids(std::move(control_ids), n, "control");
    output.case_sizes.resize(m);
    output.control_sizes.resize(n);
    for (Eigen::Index i = 0; i < m; ++i) {
        output.case_sizes[i] = case_cells[i].size();
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        output.control_sizes[j] = control_cells[j].size();
    }
    output.values.resize(m, n);

    switch (metric) {
        case DifferenceMetric::PI:
        case DifferenceMetric::LOGIT_PI:
        {
            const auto sorted_case = internal::sorted_copies(case_cells);
            const auto sorted_control = internal::sorted_copies(control_cells);
            for (Eigen::Index i = 0; i < m; ++i) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    const auto& x = sorted_case[i];
                    const auto& y = sorted_control[j];
                    auto pi = probabilistic_index_sorted(x.data(), x.size(), y.data(), y.size());
                    output.values(i, j) = (metric == DifferenceMetric::PI ? pi.value : logit_pi(pi));
                }
            }
            break;
        }
        case DifferenceMetric::MEAN_DIFF:
        case DifferenceMetric::MEDIAN_DIFF:
        case DifferenceMetric::MEAN_GREATER_INDICATOR:
        {
            auto summarize = [&](const internal::Vector<Scalar>& cells) -> Scalar {
                if (metric == DifferenceMetric::MEDIAN_DIFF) {
                    internal::Vector<Scalar> copy = cells;
                    std::sort(copy.data(), copy.data() + copy.size());
                    return internal::sample_median(std::move(copy));
                }
                return cells.mean();
            };
            internal::Vector<Scalar> case_summary(m), control_summary(n);
            for (Eigen::Index i = 0; i < m; ++i) {
                case_summary[i] = summarize(case_cells[i]);
            }
            for (Eigen::Index j = 0; j < n; ++j) {
                control_summary[j] = summarize(control_cells[j]);
            }

            if (metric == DifferenceMetric::MEAN_GREATER_INDICATOR) {
                for (Eigen::Index i = 0; i < m; ++i) {
                    for (Eigen::Index j = 0; j < n; ++j) {
                        const Scalar a = case_summary[i], b = control_summary[j];
                        output.values(i, j) = (a > b ? Scalar(1) : (a == b ? Scalar(0.5) : Scalar(0)));
                    }
                }
            } else {
                output.values = case_summary.rowwise().replicate(n) - control_summary.transpose().colwise().replicate(m);
            }
            break;
        }
    }

    return output;
}

/**
 * Clustered U statistic, i.e., the sum of all pairwise differences.
 * For the PI metric this is the sum of per-pair probabilistic indices.
 */
template<typename Scalar>
Scalar u_cluster(const DifferenceMatrix<Scalar>& diff) {
    return diff.values.sum();
}

/**
 * Sum of the cell-level U statistics over all subject pairs, recovered from a PI matrix by rescaling each entry by K1i * K0j.
 */
template<typename Scalar>
Scalar pooled_pair_u(const DifferenceMatrix<Scalar>& diff) {
    if (diff.metric != DifferenceMetric::PI) {
        throw std::invalid_argument("pooled U is only defined for the PI metric");
    }
    const auto weights = (diff.case_sizes.template cast<Scalar>() * diff.control_sizes.template cast<Scalar>().transpose()).eval();
    return diff.values.cwiseProduct(weights).sum();
}

}

#endif
