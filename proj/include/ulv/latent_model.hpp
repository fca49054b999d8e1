#ifndef ULV_LATENT_MODEL_HPP
#define ULV_LATENT_MODEL_HPP

#include "closed_form.hpp"
#include "distributions.hpp"
#include "nelder_mead.hpp"
#include "pairwise.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

/**
 * @file latent_model.hpp
 * @brief Maximum likelihood fit of the crossed latent-level model on difference matrices.
 *
 * Each entry is modelled as d_ij = a_i - b_j + beta' (x_i - x_j) + e_ij with a_i ~ N(mu, s1 / w_i), b_j ~ N(0, s0 / w_j), e_ij ~ N(0, s).
 * The weights w are 1 in the unweighted model, and proportional to the cluster sizes in the weighted one.
 * Fixed effects are profiled out by generalized least squares and the variance components are found by simplex search on the log scale.
 */

namespace ulv {

struct LatentModelConfig {
    /**
     * Optional per-subject covariates, one row per subject with all case subjects first, followed by all control subjects.
     * Only differences between a case and a control enter the model.
     */
    std::optional<Eigen::MatrixXd> covariates;

    /**
     * Whether latent variances are inversely proportional to the cluster sizes.
     * Sizes are divided by their mean before use, so the variance components refer to a subject of average size.
     */
    bool weighted = false;

    /// Null value of mu, used by the tests.
    double null_center = 0.5;

    Alternative alternative = Alternative::TWO_SIDED;

    bool normal_approx = false;

    NelderMeadOptions optimizer;
};

/**
 * @brief Fitted latent model for one difference matrix.
 */
struct ModelFit {
    double mu_hat = 0;
    double se_mu = 0;
    /// Covariate coefficients, empty without covariates.
    Eigen::VectorXd beta_hat;
    Eigen::VectorXd se_beta;

    double var_case = 0;
    double var_control = 0;
    double var_resid = 0;

    /// Predicted case levels, including mu and the covariate contribution.
    Eigen::VectorXd a_hat;
    /// Predicted control levels, including the covariate contribution.
    Eigen::VectorXd b_hat;

    double loglik = 0;
    bool converged = false;
    /// Set when all differences are identical, so that the test falls back to its continuity limit.
    bool degenerate = false;
    int n_iterations = 0;
    int n_case = 0;
    int n_control = 0;
};

/**
 * Fit the model by maximum likelihood, starting the search from method-of-moments, equal-variance and residual-dominated guesses.
 * Throws if the covariate differences are collinear with each other or with the intercept.
 */
ModelFit fit_latent_model(const DifferenceMatrix<double>& diff, const LatentModelConfig& config);

/**
 * Fit from a single user-supplied starting point, given as log-variances (case, control, residual).
 */
ModelFit fit_latent_model(const DifferenceMatrix<double>& diff, const LatentModelConfig& config, const Eigen::Vector3d& log_variance_start);

/**
 * Profiled log-likelihood at fixed variance components (case, control, residual).
 */
double profile_loglik(const DifferenceMatrix<double>& diff, const LatentModelConfig& config, const Eigen::Vector3d& variances);

/**
 * Wald t-test of mu = null_center with m + n - 2 degrees of freedom.
 */
TestResult wald_test(const ModelFit& fit, double null_center, Alternative alternative = Alternative::TWO_SIDED, bool normal_approx = false);

/**
 * Fit then test, choosing the method label from the configuration.
 */
TestResult latent_model_test(const DifferenceMatrix<double>& diff, const LatentModelConfig& config);

/**
 * Per-subject covariates for a multi-group comparison.
 */
struct MultiGroupCovariates {
    /// One matrix per non-reference condition, rows matching the rows of the corresponding difference matrix.
    std::vector<Eigen::MatrixXd> conditions;
    /// Covariates for the reference subjects.
    Eigen::MatrixXd reference;
};

struct MultiGroupResult {
    /// Likelihood ratio test of all condition means equal to the null center.
    TestResult test;
    /// Estimated mean difference of each condition from the reference.
    Eigen::VectorXd condition_means;
    Eigen::VectorXd condition_ses;
    double loglik_full = 0;
    double loglik_null = 0;
    bool converged = false;
};

/**
 * Joint test of M >= 1 conditions against a shared reference, with condition-specific means and latent variances and shared reference levels.
 * All matrices must have the reference subjects as columns, in the same order.
 * The statistic is 2 (l_full - l_null) where the null fixes every condition mean at `config.null_center`, referred to chi-squared with M degrees of freedom.
 */
MultiGroupResult multi_group_test(const std::vector<DifferenceMatrix<double>>& matrices, const LatentModelConfig& config, const std::optional<MultiGroupCovariates>& covariates = std::nullopt);

}

#endif
