#ifndef ULV_IO_HPP
#define ULV_IO_HPP

#include "closed_form.hpp"
#include "data.hpp"
#include "pairwise.hpp"
#include "simulate.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

/**
 * @file io.hpp
 * @brief Reading and writing expression matrices, metadata, parameter tables and results; QC filtering and CLR normalization.
 */

namespace ulv {

enum class MatrixFormat {
    DENSE_TSV,     ///< Header row of cell ids, then one row per gene starting with the gene id.
    MATRIX_MARKET  ///< Coordinate format with sidecar files listing gene and cell ids, one per line.
};

MatrixFormat parse_matrix_format(std::string_view name);

/**
 * Sidecar identifier files for a Matrix Market file at `path`: `path + ".genes"` and `path + ".cells"`.
 */
std::filesystem::path mtx_gene_ids_path(const std::filesystem::path& path);
std::filesystem::path mtx_cell_ids_path(const std::filesystem::path& path);

/**
 * Parse an expression matrix. Parsing is strict, and any malformed line is reported with its line number.
 * Negative values are rejected unless `allow_negative` is set, e.g., for already-normalized data.
 */
CountMatrix read_counts(const std::filesystem::path& path, MatrixFormat format, bool allow_negative = false);

void write_counts(const std::filesystem::path& path, const CountMatrix& counts, MatrixFormat format);

/**
 * Metadata TSV with header `cell_id`, `subject_id`, `condition`, then one column per covariate.
 * Subjects must have the same condition and covariates on all of their rows; missing covariates are rejected.
 */
StudyMetadata read_metadata(const std::filesystem::path& path);

void write_metadata(const std::filesystem::path& path, const StudyMetadata& metadata, const std::vector<std::string>& cell_ids);

enum class ExpressionScope {
    ALL_CELLS,  ///< Expressed fraction over every retained cell.
    CASE_CELLS  ///< Expressed fraction over cells of subjects in the case condition only.
};

struct QcOptions {
    /// Subjects need strictly more cells than this; 0 disables the filter.
    int min_cells_per_subject = 50;
    /// Genes need a nonzero fraction strictly above this; 0 disables the filter.
    double min_expr_fraction = 0.1;
    ExpressionScope scope = ExpressionScope::ALL_CELLS;
    /// Condition defining the case cells when `scope = CASE_CELLS`.
    std::string case_condition;
};

struct QcResult {
    CountMatrix counts;
    StudyMetadata metadata;
    std::vector<std::string> dropped_subjects;
    std::vector<std::string> dropped_genes;
};

/**
 * Drop small subjects (and their cells) first, then drop rarely-expressed genes among the retained cells.
 * Throws if every subject is dropped.
 */
QcResult filter_qc(const CountMatrix& counts, const StudyMetadata& metadata, const QcOptions& options);

/**
 * Centered log-ratio transform of each cell: log(v + c) minus the mean of log(v + c) over genes.
 */
Eigen::MatrixXd clr_normalize(const CountMatrix& counts, double pseudocount = 1);

/**
 * @brief One output row of a differential test.
 */
struct ResultRow {
    TestResult test;
    /// Effect on the probabilistic-index scale, or the raw effect for metrics without one.
    double effect_pi = 0.5;
    double fdr_p = 1;
    bool is_de = false;
    DifferenceMetric metric = DifferenceMetric::PI;
};

/**
 * Tab-separated results with header `gene_id effect_pi statistic df p_value fdr_p is_de method metric n_case_subjects n_control_subjects`,
 * numbers written with 6 significant digits, rows in input order.
 */
void write_results(const std::filesystem::path& path, const std::vector<ResultRow>& rows);

std::vector<ResultRow> read_results(const std::filesystem::path& path);

/**
 * Reference parameter table with header `gene_id subject_id mu phi dropout sigma`.
 */
std::vector<ReferenceRow> read_parameter_table(const std::filesystem::path& path);

void write_parameter_table(const std::filesystem::path& path, const std::vector<ReferenceRow>& rows);

/**
 * Ground truth per simulated gene: `gene_id is_de fold_change`.
 */
void write_truth(const std::filesystem::path& path, const std::vector<GeneTruth>& truth);

/**
 * Human-readable `key=value` record of a resolved configuration, written next to an output file as `<output>.config`.
 */
void write_config_sidecar(const std::filesystem::path& output, const std::vector<std::pair<std::string, std::string>>& entries);

/**
 * Format with 6 significant digits.
 */
std::string format_number(double x);

}

#endif
