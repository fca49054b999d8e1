#ifndef ULV_DATA_HPP
#define ULV_DATA_HPP

#include <Eigen/Sparse>

#include <map>
#include <string>
#include <vector>

/**
 * @file data.hpp
 * @brief Expression matrices and study metadata.
 */

namespace ulv {

/**
 * @brief Genes x cells expression values, stored sparsely by gene.
 *
 * Values are usually raw counts, but normalized reals are also allowed.
 */
struct CountMatrix {
    std::vector<std::string> gene_ids;
    std::vector<std::string> cell_ids;
    Eigen::SparseMatrix<double, Eigen::RowMajor> values;

    Eigen::Index n_genes() const { return values.rows(); }
    Eigen::Index n_cells() const { return values.cols(); }

    /// Throws unless the dimensions match the identifiers, identifiers are unique and (unless `allow_negative`) values are non-negative.
    void validate(bool allow_negative = false) const;

    /// Dense copy of one gene across all cells.
    Eigen::VectorXd gene(Eigen::Index g) const;
};

/**
 * @brief Assignment of cells to subjects and of subjects to conditions, plus per-subject covariates.
 */
struct StudyMetadata {
    std::map<std::string, std::string> cell_to_subject;
    std::map<std::string, std::string> subject_to_condition;
    std::vector<std::string> covariate_names;
    /// One vector of length `covariate_names.size()` per subject.
    std::map<std::string, std::vector<double>> subject_covariates;

    /// Number of cells per subject among the listed cells.
    std::map<std::string, int> cluster_sizes(const std::vector<std::string>& cell_ids) const;

    /// Subjects in a condition, in sorted order.
    std::vector<std::string> subjects_in(const std::string& condition) const;

    /// Distinct conditions in sorted order.
    std::vector<std::string> conditions() const;

    /// Throws unless every listed cell maps to a known subject with a condition and a complete covariate vector.
    void validate(const std::vector<std::string>& cell_ids) const;
};

}

#endif
