#ifndef ULV_RANKS_HPP
#define ULV_RANKS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

/**
 * @file ranks.hpp
 * @brief Midranks, Mann-Whitney U and the probabilistic index between two samples.
 */

namespace ulv {

/**
 * @brief Probabilistic index between the cells of one case subject and one control subject.
 *
 * `value` estimates P(Y1 > Y0) + P(Y1 = Y0) / 2 and is always a multiple of 1 / (2 * n_case_cells * n_control_cells).
 */
template<typename Scalar = double>
struct PIEstimate {
    Scalar value = 0.5;
    Eigen::Index n_case_cells = 0;
    Eigen::Index n_control_cells = 0;

    /// Smallest nonzero increment of the estimator.
    Scalar resolution() const {
        return Scalar(1) / (Scalar(2) * Scalar(n_case_cells) * Scalar(n_control_cells));
    }
};

namespace internal {

template<typename Derived>
void check_sample(const Eigen::DenseBase<Derived>& x, const char* what) {
    if (x.size() == 0) {
        throw std::invalid_argument(std::string(what) + " must be non-empty");
    }
    if (!x.derived().array().isFinite().all()) {
        throw std::invalid_argument(std::string(what) + " contains non-finite values");
    }
}

}

/**
 * Ranks of `values` in ascending order, starting from 1.
 * Tied entries receive the mean of the ranks they span, so the output always sums to L(L+1)/2.
 */
template<typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> midranks(const Eigen::DenseBase<Derived>& values) {
    using Scalar = typename Derived::Scalar;
    internal::check_sample(values, "values");

    const Eigen::Index len = values.size();
    std::vector<Eigen::Index> order(len);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index l, Eigen::Index r) -> bool {
        return values.derived().coeff(l) < values.derived().coeff(r);
    });

    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> output(len);
    Eigen::Index start = 0;
    while (start < len) {
        const Scalar current = values.derived().coeff(order[start]);
        Eigen::Index end = start + 1;
        while (end < len && values.derived().coeff(order[end]) == current) {
            ++end;
        }
        // ranks start+1 .. end, averaged.
        const Scalar rank = Scalar(start + 1 + end) / Scalar(2);
        for (Eigen::Index k = start; k < end; ++k) {
            output[order[k]] = rank;
        }
        start = end;
    }
    return output;
}

/**
 * Rank-sum W of the case sample among the pooled observations, using midranks.
 */
template<typename DerivedCase, typename DerivedControl>
typename DerivedCase::Scalar rank_sum(const Eigen::DenseBase<DerivedCase>& cases, const Eigen::DenseBase<DerivedControl>& controls) {
    using Scalar = typename DerivedCase::Scalar;
    internal::check_sample(cases, "case sample");
    internal::check_sample(controls, "control sample");

    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pooled(cases.size() + controls.size());
    pooled << cases.derived().template cast<Scalar>(), controls.derived().template cast<Scalar>();
    return midranks(pooled).head(cases.size()).sum();
}

/**
 * Mann-Whitney U of cases against controls, counting ties as one half.
 * Computed from the pooled midranks as U = W - m(m+1)/2.
 */
template<typename DerivedCase, typename DerivedControl>
typename DerivedCase::Scalar mann_whitney_u(const Eigen::DenseBase<DerivedCase>& cases, const Eigen::DenseBase<DerivedControl>& controls) {
    using Scalar = typename DerivedCase::Scalar;
    const Scalar m = Scalar(cases.size());
    return rank_sum(cases, controls) - m * (m + 1) / Scalar(2);
}

/**
 * Probabilistic index U / (K1 * K0), identical to the AUC of using the values to discriminate case cells from control cells.
 */
template<typename DerivedCase, typename DerivedControl>
PIEstimate<typename DerivedCase::Scalar> probabilistic_index(const Eigen::DenseBase<DerivedCase>& cases, const Eigen::DenseBase<DerivedControl>& controls) {
    using Scalar = typename DerivedCase::Scalar;
    PIEstimate<Scalar> output;
    output.n_case_cells = cases.size();
    output.n_control_cells = controls.size();
    output.value = mann_whitney_u(cases, controls) / (Scalar(cases.size()) * Scalar(controls.size()));
    return output;
}

/**
 * Probabilistic index from samples that are already sorted in ascending order.
 * A single merge pass is used, so the cost is linear in K1 + K0.
 * This is the workhorse for pairwise comparisons where each subject is sorted once and compared to many others.
 */
template<typename Scalar>
PIEstimate<Scalar> probabilistic_index_sorted(const Scalar* cases, Eigen::Index n_case, const Scalar* controls, Eigen::Index n_control) {
    if (n_case == 0 || n_control == 0) {
        throw std::invalid_argument("samples must be non-empty");
    }

    // Accumulate twice the U statistic in integers to keep the count exact.
    long long twice_u = 0;
    Eigen::Index below = 0;
    Eigen::Index i = 0;
    while (i < n_case) {
        const Scalar current = cases[i];
        Eigen::Index run = 1;
        while (i + run < n_case && cases[i + run] == current) {
            ++run;
        }
        while (below < n_control && controls[below] < current) {
            ++below;
        }
        Eigen::Index equal = 0;
        while (below + equal < n_control && controls[below + equal] == current) {
            ++equal;
        }
        twice_u += static_cast<long long>(run) * (2 * static_cast<long long>(below) + equal);
        i += run;
    }

    PIEstimate<Scalar> output;
    output.n_case_cells = n_case;
    output.n_control_cells = n_control;
    output.value = Scalar(twice_u) / (Scalar(2) * Scalar(n_case) * Scalar(n_control));
    return output;
}

/**
 * Logit of a probabilistic index after clamping it into `[epsilon, 1 - epsilon]`.
 */
template<typename Scalar>
Scalar logit_pi(const PIEstimate<Scalar>& pi, Scalar epsilon) {
    if (!(epsilon > 0 && epsilon < Scalar(0.5))) {
        throw std::invalid_argument("clamp epsilon must lie in (0, 0.5)");
    }
    const Scalar p = std::clamp(pi.value, epsilon, Scalar(1) - epsilon);
    return std::log(p / (Scalar(1) - p));
}

/**
 * Logit with the default clamp, i.e., the estimator's own resolution 1 / (2 * K1 * K0).
 * Clamping never reorders distinct estimates as they are all separated by at least this much.
 */
template<typename Scalar>
Scalar logit_pi(const PIEstimate<Scalar>& pi) {
    return logit_pi(pi, std::min(pi.resolution(), Scalar(0.25)));
}

template<typename Scalar>
Scalar inverse_logit(Scalar x) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
}

}

#endif
