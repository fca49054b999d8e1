#ifndef ULV_INFERENCE_HPP
#define ULV_INFERENCE_HPP

#include "distributions.hpp"
#include "pairwise.hpp"
#include "simulate.hpp"
#include "study.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

/**
 * @file inference.hpp
 * @brief Multiple testing adjustment, DE calls, rank-sum baselines and calibration by simulation.
 */

namespace ulv {

/**
 * Benjamini-Hochberg step-up adjustment, returned in input order.
 * Throws `std::invalid_argument` if any p-value lies outside [0, 1].
 */
std::vector<double> bh_adjust(const std::vector<double>& p_values);

/**
 * @brief A gene is called DE if its adjusted p-value is below the threshold and its effect lies outside the band.
 */
struct DECallRule {
    double fdr_threshold = 0.1;
    double pi_lower = 0.45;
    double pi_upper = 0.55;

    void validate() const;
};

/**
 * @param effect_pi Effect on the probabilistic-index scale.
 * @param fdr_p Adjusted p-value.
 * @param use_band Whether to require the effect to lie outside the band, which is only meaningful on the PI scale.
 */
bool call_de(double effect_pi, double fdr_p, const DECallRule& rule, bool use_band = true);

std::vector<bool> call_de(const std::vector<double>& effects_pi, const std::vector<double>& fdr_p, const DECallRule& rule, bool use_band = true);

/**
 * Rank-sum p-value comparing subject summaries.
 * For `m + n <= 14`, this enumerates all assignments of the pooled values to the two groups and counts those with U at least as extreme as observed.
 * Larger samples use `rank_sum_normal_pvalue()`.
 * Two-sided p-values double the smaller one-sided value, capped at 1.
 */
double exact_rank_sum_pvalue(const Eigen::VectorXd& cases, const Eigen::VectorXd& controls, Alternative alternative = Alternative::TWO_SIDED);

/**
 * Normal approximation to the rank-sum test with tie correction and a continuity correction of 1/2.
 */
double rank_sum_normal_pvalue(const Eigen::VectorXd& cases, const Eigen::VectorXd& controls, Alternative alternative = Alternative::TWO_SIDED);

/**
 * Largest total sample size for which `exact_rank_sum_pvalue()` enumerates.
 */
constexpr int exact_rank_sum_limit = 14;

/**
 * @brief Settings for a calibration study.
 */
struct CalibrationConfig {
    SimDesign design;
    /// Reference parameter table to resample; `default_reference_table()` if empty.
    std::vector<ReferenceRow> reference;
    std::vector<Method> methods{ Method::ULV };
    std::vector<double> alphas{ 0.001, 0.01, 0.05, 0.2 };
    int n_replicates = 100;
    std::uint64_t seed = 1;
    int threads = 1;
    GeneTestOptions test;
};

/**
 * @brief Rejection rates of one method at one level in one replicate.
 */
struct CalibrationRecord {
    Method method = Method::ULV;
    double alpha = 0.05;
    int replicate = 0;
    /// Fraction of null genes with p <= alpha; NaN if there are none.
    double rejection_rate = 0;
    /// Fraction of DE genes with p <= alpha; NaN if there are none.
    double power = 0;
};

struct CalibrationSummary {
    std::vector<double> alpha_levels;
    std::vector<Method> methods;
    int n_replicates = 0;
    int n_genes = 0;
    /// Ordered by replicate, then method, then alpha.
    std::vector<CalibrationRecord> records;

    /// Mean over replicates of the null rejection rate.
    double mean_rejection_rate(Method method, double alpha) const;

    /// Mean over replicates of the power.
    double mean_power(Method method, double alpha) const;
};

/**
 * Simulate `n_replicates` datasets and record per-replicate rejection rates of each method.
 * The output depends only on the configuration and seed, never on `threads`.
 */
CalibrationSummary calibrate(const CalibrationConfig& config);

/**
 * Delimited table with columns method, alpha, replicate, rejection_rate, power.
 */
void write_calibration(const std::string& path, const CalibrationSummary& summary);

/**
 * Box plots of per-replicate rejection rates, one panel per alpha, as a standalone SVG.
 */
void write_calibration_svg(const std::string& path, const CalibrationSummary& summary, bool power = false);

}

#endif
