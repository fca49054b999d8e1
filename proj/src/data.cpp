#include "ulv/data.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace ulv {

void CountMatrix::validate(bool allow_negative) const {
    if (static_cast<size_t>(values.rows()) != gene_ids.size()) {
        throw std::invalid_argument("number of gene ids (" + std::to_string(gene_ids.size()) +
                                    ") does not match number of rows (" + std::to_string(values.rows()) + ")");
    }
    if (static_cast<size_t>(values.cols()) != cell_ids.size()) {
        throw std::invalid_argument("number of cell ids (" + std::to_string(cell_ids.size()) +
                                    ") does not match number of columns (" + std::to_string(values.cols()) + ")");
    }

    auto check_unique = [](const std::vector<std::string>& ids, const char* what) -> void {
        std::set<std::string> seen;
        for (const auto& id : ids) {
            if (!seen.insert(id).second) {
                throw std::invalid_argument(std::string("duplicate ") + what + " id '" + id + "'");
            }
        }
    };
    check_unique(gene_ids, "gene");
    check_unique(cell_ids, "cell");

    for (Eigen::Index g = 0; g < values.outerSize(); ++g) {
        for (decltype(values)::InnerIterator it(values, g); it; ++it) {
            if (!std::isfinite(it.value())) {
                throw std::invalid_argument("non-finite value for gene '" + gene_ids[g] + "'");
            }
            if (!allow_negative && it.value() < 0) {
                throw std::invalid_argument("negative value for gene '" + gene_ids[g] + "'");
            }
        }
    }
}

Eigen::VectorXd CountMatrix::gene(Eigen::Index g) const {
    Eigen::VectorXd output = Eigen::VectorXd::Zero(values.cols());
    for (decltype(values)::InnerIterator it(values, g); it; ++it) {
        output[it.col()] = it.value();
    }
    return output;
}

std::map<std::string, int> StudyMetadata::cluster_sizes(const std::vector<std::string>& cell_ids) const {
    std::map<std::string, int> output;
    for (const auto& c : cell_ids) {
        auto it = cell_to_subject.find(c);
        if (it == cell_to_subject.end()) {
            throw std::invalid_argument("cell '" + c + "' has no subject");
        }
        ++output[it->second];
    }
    return output;
}

std::vector<std::string> StudyMetadata::subjects_in(const std::string& condition) const {
    std::vector<std::string> output;
    for (const auto& entry : subject_to_condition) {
        if (entry.second == condition) {
            output.push_back(entry.first);
        }
    }
    return output;
}

std::vector<std::string> StudyMetadata::conditions() const {
    std::set<std::string> found;
    for (const auto& entry : subject_to_condition) {
        found.insert(entry.second);
    }
    return std::vector<std::string>(found.begin(), found.end());
}

void StudyMetadata::validate(const std::vector<std::string>& cell_ids) const {
    const size_t p = covariate_names.size();
    for (const auto& c : cell_ids) {
        auto it = cell_to_subject.find(c);
        if (it == cell_to_subject.end()) {
            throw std::invalid_argument("cell '" + c + "' is missing from the metadata");
        }
        if (subject_to_condition.find(it->second) == subject_to_condition.end()) {
            throw std::invalid_argument("subject '" + it->second + "' has no condition");
        }
        if (p) {
            auto cit = subject_covariates.find(it->second);
            if (cit == subject_covariates.end() || cit->second.size() != p) {
                throw std::invalid_argument("subject '" + it->second + "' does not have " + std::to_string(p) + " covariate values");
            }
        }
    }
}

}
