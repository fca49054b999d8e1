#ifndef ULV_STUDY_HPP
#define ULV_STUDY_HPP

#include "closed_form.hpp"
#include "data.hpp"
#include "latent_model.hpp"
#include "pairwise.hpp"

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <vector>

/**
 * @file study.hpp
 * @brief Per-gene testing of a whole study, from expression matrix to one result per gene.
 */

namespace ulv {

/**
 * @brief Subject-level summary used by the pseudobulk rank-sum baseline.
 */
enum class SubjectSummary { MEAN, MEDIAN, NONZERO_FRACTION };

SubjectSummary parse_subject_summary(std::string_view name);

std::string_view to_string(SubjectSummary summary);

double summarize(const Eigen::VectorXd& cells, SubjectSummary summary);

/**
 * @brief Available per-gene tests.
 */
enum class Method {
    ULV,                  ///< Closed-form test, or the ML fit when covariates or weights are requested.
    ULV_ADJ,              ///< ML fit adjusting for covariates.
    ULV_WT,               ///< ML fit weighting for cluster sizes.
    WILCOXON_PSEUDOBULK,  ///< Rank-sum test on subject summaries.
    WILCOXON_SC           ///< Rank-sum test pooling all cells; ignores clustering and is a known-invalid baseline.
};

Method parse_method(std::string_view name);

std::string_view to_string(Method method);

/**
 * @brief Two-group arrangement of the cells of a study.
 */
struct TwoGroupLayout {
    std::vector<std::string> case_subjects;
    std::vector<std::string> control_subjects;
    /// Column indices of each subject's cells in the expression matrix.
    std::vector<std::vector<Eigen::Index>> case_cells;
    std::vector<std::vector<Eigen::Index>> control_cells;
    /// Subjects by selected covariates, cases first; zero columns when none are selected.
    Eigen::MatrixXd covariates;
    std::vector<std::string> covariate_names;
};

/**
 * Pick the named covariate columns, or throw an error that lists the available columns.
 */
std::vector<size_t> select_covariates(const StudyMetadata& metadata, const std::vector<std::string>& names);

TwoGroupLayout make_two_group_layout(const CountMatrix& counts, const StudyMetadata& metadata, const std::string& case_condition,
                                     const std::string& control_condition, const std::vector<std::string>& covariate_names = {});

/**
 * @brief Several conditions each compared against one reference condition.
 */
struct MultiGroupLayout {
    std::vector<std::string> conditions;
    std::vector<std::vector<std::string>> condition_subjects;
    std::vector<std::vector<std::vector<Eigen::Index>>> condition_cells;
    std::string reference;
    std::vector<std::string> reference_subjects;
    std::vector<std::vector<Eigen::Index>> reference_cells;
    /// Per-condition subject covariates and the reference's, in the subject order above.
    std::vector<Eigen::MatrixXd> condition_covariates;
    Eigen::MatrixXd reference_covariates;
    std::vector<std::string> covariate_names;
};

MultiGroupLayout make_multi_group_layout(const CountMatrix& counts, const StudyMetadata& metadata, const std::string& reference,
                                         const std::vector<std::string>& covariate_names = {});

struct GeneTestOptions {
    DifferenceMetric metric = DifferenceMetric::PI;
    /// Only used by `Method::ULV`, where either switches to the ML fit.
    bool adjust = false;
    bool weighted = false;
    Alternative alternative = Alternative::TWO_SIDED;
    bool normal_approx = false;
    SubjectSummary summary = SubjectSummary::MEAN;
};

/**
 * Test one gene of a two-group study.
 * The result's `effect` is on the metric scale for the latent-variable methods and on the probabilistic-index scale for the rank-sum baselines.
 */
TestResult test_gene(Method method, const CountMatrix& counts, Eigen::Index gene, const TwoGroupLayout& layout, const GeneTestOptions& options);

/**
 * Test every gene, writing one result per gene in input order. `threads` changes only the speed.
 */
std::vector<TestResult> test_genes(Method method, const CountMatrix& counts, const TwoGroupLayout& layout, const GeneTestOptions& options, int threads = 1);

/**
 * Likelihood-ratio test of all condition effects for one gene.
 */
TestResult test_gene_multi(const CountMatrix& counts, Eigen::Index gene, const MultiGroupLayout& layout, const GeneTestOptions& options);

std::vector<TestResult> test_genes_multi(const CountMatrix& counts, const MultiGroupLayout& layout, const GeneTestOptions& options, int threads = 1);

/**
 * Effect on the probabilistic-index scale: unchanged for PI-scale metrics, inverse-logit for logit-PI.
 * Metrics without a PI scale are returned unchanged.
 */
double effect_on_pi_scale(double effect, Method method, DifferenceMetric metric);

}

#endif
