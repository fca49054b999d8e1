#include "ulv/study.hpp"
#include "ulv/inference.hpp"
#include "ulv/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ulv {

namespace {

typedef std::vector<Eigen::VectorXd> SubjectCells;

SubjectCells gather(const Eigen::VectorXd& row, const std::vector<std::vector<Eigen::Index>>& cells) {
    SubjectCells output;
    output.reserve(cells.size());
    for (const auto& indices : cells) {
        Eigen::VectorXd current(indices.size());
        for (size_t k = 0; k < indices.size(); ++k) {
            current[k] = row[indices[k]];
        }
        output.push_back(std::move(current));
    }
    return output;
}

void collect_cells(const CountMatrix& counts, const StudyMetadata& metadata, const std::vector<std::string>& subjects,
                   std::vector<std::vector<Eigen::Index>>& output) {
    std::map<std::string, size_t> position;
    for (size_t s = 0; s < subjects.size(); ++s) {
        position[subjects[s]] = s;
    }
    output.assign(subjects.size(), {});
    for (Eigen::Index c = 0; c < counts.n_cells(); ++c) {
        auto it = metadata.cell_to_subject.find(counts.cell_ids[c]);
        if (it == metadata.cell_to_subject.end()) {
            throw std::invalid_argument("cell '" + counts.cell_ids[c] + "' is missing from the metadata");
        }
        auto pit = position.find(it->second);
        if (pit != position.end()) {
            output[pit->second].push_back(c);
        }
    }
}

// Only subjects with at least one cell in the matrix take part.
std::vector<std::string> subjects_with_cells(const StudyMetadata& metadata, const std::map<std::string, int>& sizes, const std::string& condition) {
    std::vector<std::string> output;
    for (const auto& s : metadata.subjects_in(condition)) {
        if (sizes.count(s)) {
            output.push_back(s);
        }
    }
    return output;
}

Eigen::MatrixXd covariate_rows(const StudyMetadata& metadata, const std::vector<std::string>& subjects, const std::vector<size_t>& columns) {
    Eigen::MatrixXd output(subjects.size(), columns.size());
    for (size_t s = 0; s < subjects.size(); ++s) {
        const auto& values = metadata.subject_covariates.at(subjects[s]);
        for (size_t k = 0; k < columns.size(); ++k) {
            output(s, k) = values[columns[k]];
        }
    }
    return output;
}

TestResult rank_sum_result(double u, double p, int m, int n, double effect, const char* method) {
    TestResult output;
    output.effect = effect;
    output.null_center = 0.5;
    output.statistic = u;
    output.df = std::numeric_limits<double>::quiet_NaN();
    output.p_value = p;
    output.method = method;
    output.n_case = m;
    output.n_control = n;
    return output;
}

}

SubjectSummary parse_subject_summary(std::string_view name) {
    if (name == "mean") {
        return SubjectSummary::MEAN;
    }
    if (name == "median") {
        return SubjectSummary::MEDIAN;
    }
    if (name == "nonzero") {
        return SubjectSummary::NONZERO_FRACTION;
    }
    throw std::invalid_argument("unknown subject summary '" + std::string(name) + "' (expected mean, median or nonzero)");
}

std::string_view to_string(SubjectSummary summary) {
    switch (summary) {
        case SubjectSummary::MEAN: return "mean";
        case SubjectSummary::MEDIAN: return "median";
        case SubjectSummary::NONZERO_FRACTION: return "nonzero";
    }
    return "";
}

double summarize(const Eigen::VectorXd& cells, SubjectSummary summary) {
    if (cells.size() == 0) {
        throw std::invalid_argument("subject with 0 cells");
    }
    switch (summary) {
        case SubjectSummary::MEAN:
            return cells.mean();
        case SubjectSummary::MEDIAN: {
            Eigen::VectorXd sorted = cells;
            std::sort(sorted.begin(), sorted.end());
            return internal::sample_median(sorted);
        }
        case SubjectSummary::NONZERO_FRACTION:
            return static_cast<double>((cells.array() != 0).count()) / cells.size();
    }
    return 0;
}

Method parse_method(std::string_view name) {
    if (name == "ulv") {
        return Method::ULV;
    }
    if (name == "ulv-adj") {
        return Method::ULV_ADJ;
    }
    if (name == "ulv-wt") {
        return Method::ULV_WT;
    }
    if (name == "wilcoxon-pseudobulk") {
        return Method::WILCOXON_PSEUDOBULK;
    }
    if (name == "wilcoxon-sc") {
        return Method::WILCOXON_SC;
    }
    throw std::invalid_argument("unknown method '" + std::string(name) + "' (expected ulv, ulv-adj, ulv-wt, wilcoxon-pseudobulk or wilcoxon-sc)");
}

std::string_view to_string(Method method) {
    switch (method) {
        case Method::ULV: return "ulv";
        case Method::ULV_ADJ: return "ulv-adj";
        case Method::ULV_WT: return "ulv-wt";
        case Method::WILCOXON_PSEUDOBULK: return "wilcoxon-pseudobulk";
        case Method::WILCOXON_SC: return "wilcoxon-sc";
    }
    return "";
}

std::vector<size_t> select_covariates(const StudyMetadata& metadata, const std::vector<std::string>& names) {
    std::vector<size_t> output;
    for (const auto& n : names) {
        auto it = std::find(metadata.covariate_names.begin(), metadata.covariate_names.end(), n);
        if (it == metadata.covariate_names.end()) {
            std::string available;
            for (const auto& a : metadata.covariate_names) {
                available += (available.empty() ? "" : ", ") + a;
            }
            throw std::invalid_argument("unknown covariate '" + n + "'; available columns: " + (available.empty() ? "(none)" : available));
        }
        output.push_back(it - metadata.covariate_names.begin());
    }
    return output;
}

TwoGroupLayout make_two_group_layout(const CountMatrix& counts, const StudyMetadata& metadata, const std::string& case_condition,
                                     const std::string& control_condition, const std::vector<std::string>& covariate_names) {
    if (case_condition == control_condition) {
        throw std::invalid_argument("case and control conditions should differ");
    }
    metadata.validate(counts.cell_ids);
    const auto columns = select_covariates(metadata, covariate_names);
    const auto sizes = metadata.cluster_sizes(counts.cell_ids);

    TwoGroupLayout output;
    output.case_subjects = subjects_with_cells(metadata, sizes, case_condition);
    output.control_subjects = subjects_with_cells(metadata, sizes, control_condition);
    if (output.case_subjects.size() < 2) {
        throw std::invalid_argument("insufficient subjects in condition '" + case_condition + "'");
    }
    if (output.control_subjects.size() < 2) {
        throw std::invalid_argument("insufficient subjects in condition '" + control_condition + "'");
    }
    collect_cells(counts, metadata, output.case_subjects, output.case_cells);
    collect_cells(counts, metadata, output.control_subjects, output.control_cells);

    output.covariate_names = covariate_names;
    output.covariates.resize(output.case_subjects.size() + output.control_subjects.size(), columns.size());
    output.covariates << covariate_rows(metadata, output.case_subjects, columns), covariate_rows(metadata, output.control_subjects, columns);
    return output;
}

MultiGroupLayout make_multi_group_layout(const CountMatrix& counts, const StudyMetadata& metadata, const std::string& reference,
                                         const std::vector<std::string>& covariate_names) {
    metadata.validate(counts.cell_ids);
    const auto columns = select_covariates(metadata, covariate_names);
    const auto sizes = metadata.cluster_sizes(counts.cell_ids);

    MultiGroupLayout output;
    output.reference = reference;
    output.covariate_names = covariate_names;
    output.reference_subjects = subjects_with_cells(metadata, sizes, reference);
    if (output.reference_subjects.empty()) {
        throw std::invalid_argument("no subjects in reference condition '" + reference + "'");
    }
    if (output.reference_subjects.size() < 2) {
        throw std::invalid_argument("insufficient subjects in condition '" + reference + "'");
    }
    collect_cells(counts, metadata, output.reference_subjects, output.reference_cells);
    output.reference_covariates = covariate_rows(metadata, output.reference_subjects, columns);

    for (const auto& condition : metadata.conditions()) {
        if (condition == reference) {
            continue;
        }
        auto subjects = subjects_with_cells(metadata, sizes, condition);
        if (subjects.empty()) {
            continue;
        }
        if (subjects.size() < 2) {
            throw std::invalid_argument("insufficient subjects in condition '" + condition + "'");
        }
        output.conditions.push_back(condition);
        output.condition_covariates.push_back(covariate_rows(metadata, subjects, columns));
        output.condition_cells.emplace_back();
        collect_cells(counts, metadata, subjects, output.condition_cells.back());
        output.condition_subjects.push_back(std::move(subjects));
    }
    if (output.conditions.empty()) {
        throw std::invalid_argument("no conditions other than the reference '" + reference + "'");
    }
    return output;
}

TestResult test_gene(Method method, const CountMatrix& counts, Eigen::Index gene, const TwoGroupLayout& layout, const GeneTestOptions& options) {
    const Eigen::VectorXd row = counts.gene(gene);
    const auto cases = gather(row, layout.case_cells);
    const auto controls = gather(row, layout.control_cells);
    const int m = cases.size(), n = controls.size();

    TestResult output;
    switch (method) {
        case Method::WILCOXON_PSEUDOBULK: {
            Eigen::VectorXd a(m), b(n);
            for (int i = 0; i < m; ++i) {
                a[i] = summarize(cases[i], options.summary);
            }
            for (int j = 0; j < n; ++j) {
                b[j] = summarize(controls[j], options.summary);
            }
            const double u = mann_whitney_u(a, b);
            output = rank_sum_result(u, exact_rank_sum_pvalue(a, b, options.alternative), m, n, u / (static_cast<double>(m) * n), "wilcoxon-pseudobulk");
            break;
        }

        case Method::WILCOXON_SC: {
            Eigen::Index ncase = 0, ncontrol = 0;
            for (const auto& c : cases) {
                ncase += c.size();
            }
            for (const auto& c : controls) {
                ncontrol += c.size();
            }
            Eigen::VectorXd a(ncase), b(ncontrol);
            ncase = 0;
            for (const auto& c : cases) {
                a.segment(ncase, c.size()) = c;
                ncase += c.size();
            }
            ncontrol = 0;
            for (const auto& c : controls) {
                b.segment(ncontrol, c.size()) = c;
                ncontrol += c.size();
            }
            const double u = mann_whitney_u(a, b);
            output = rank_sum_result(u, rank_sum_normal_pvalue(a, b, options.alternative), m, n,
                                     u / (static_cast<double>(a.size()) * b.size()), "wilcoxon-sc");
            break;
        }

        default: {
            auto diff = build_difference_matrix(cases, controls, options.metric, layout.case_subjects, layout.control_subjects);
            const bool adjust = method == Method::ULV_ADJ || (method == Method::ULV && options.adjust);
            const bool weighted = method == Method::ULV_WT || (method == Method::ULV && options.weighted);

            if (!adjust && !weighted) {
                ClosedFormOptions cfopt;
                cfopt.alternative = options.alternative;
                cfopt.normal_approx = options.normal_approx;
                output = closed_form_test(diff, cfopt);
            } else {
                LatentModelConfig config;
                config.null_center = diff.null_center;
                config.alternative = options.alternative;
                config.normal_approx = options.normal_approx;
                config.weighted = weighted;
                if (adjust) {
                    if (layout.covariates.cols() == 0) {
                        throw std::invalid_argument("covariate adjustment requested without covariates");
                    }
                    config.covariates = layout.covariates;
                }
                output = latent_model_test(diff, config);
            }
            break;
        }
    }

    output.gene_id = counts.gene_ids[gene];
    return output;
}

std::vector<TestResult> test_genes(Method method, const CountMatrix& counts, const TwoGroupLayout& layout, const GeneTestOptions& options, int threads) {
    std::vector<TestResult> output(counts.n_genes());
    parallel_for(counts.n_genes(), threads, [&](long long g) -> void {
        output[g] = test_gene(method, counts, g, layout, options);
    });
    return output;
}

TestResult test_gene_multi(const CountMatrix& counts, Eigen::Index gene, const MultiGroupLayout& layout, const GeneTestOptions& options) {
    const Eigen::VectorXd row = counts.gene(gene);
    const auto reference = gather(row, layout.reference_cells);

    std::vector<DifferenceMatrix<double>> matrices;
    for (size_t c = 0; c < layout.conditions.size(); ++c) {
        matrices.push_back(build_difference_matrix(gather(row, layout.condition_cells[c]), reference, options.metric,
                                                   layout.condition_subjects[c], layout.reference_subjects));
    }

    LatentModelConfig config;
    config.null_center = matrices.front().null_center;
    config.alternative = options.alternative;
    config.normal_approx = options.normal_approx;
    config.weighted = options.weighted;

    std::optional<MultiGroupCovariates> covariates;
    if (options.adjust && !layout.covariate_names.empty()) {
        covariates = MultiGroupCovariates{ layout.condition_covariates, layout.reference_covariates };
    }

    auto output = multi_group_test(matrices, config, covariates).test;
    output.gene_id = counts.gene_ids[gene];
    return output;
}

std::vector<TestResult> test_genes_multi(const CountMatrix& counts, const MultiGroupLayout& layout, const GeneTestOptions& options, int threads) {
    std::vector<TestResult> output(counts.n_genes());
    parallel_for(counts.n_genes(), threads, [&](long long g) -> void {
        output[g] = test_gene_multi(counts, g, layout, options);
    });
    return output;
}

double effect_on_pi_scale(double effect, Method method, DifferenceMetric metric) {
    if (method == Method::WILCOXON_PSEUDOBULK || method == Method::WILCOXON_SC) {
        return effect;
    }
    if (metric == DifferenceMetric::LOGIT_PI) {
        return inverse_logit(effect);
    }
    return effect;
}

}
