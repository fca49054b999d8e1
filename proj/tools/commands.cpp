#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

namespace ulv_cli {

namespace {

std::string join(const std::vector<std::string>& values, const char* sep = ",") {
    std::string output;
    for (const auto& v : values) {
        output += (output.empty() ? "" : sep) + v;
    }
    return output;
}

std::string number(double x) {
    return ulv::format_number(x);
}

std::string format_name(ulv::MatrixFormat format) {
    return format == ulv::MatrixFormat::DENSE_TSV ? "dense" : "mtx";
}

std::string alternative_name(ulv::Alternative alt) {
    switch (alt) {
        case ulv::Alternative::GREATER: return "greater";
        case ulv::Alternative::LESS: return "less";
        default: return "two-sided";
    }
}

std::vector<std::string> method_names(const std::vector<ulv::Method>& methods) {
    std::vector<std::string> output;
    for (auto m : methods) {
        output.emplace_back(ulv::to_string(m));
    }
    return output;
}

struct Study {
    ulv::CountMatrix counts;
    ulv::StudyMetadata metadata;
};

bool qc_enabled(const ulv::QcOptions& qc) {
    return qc.min_cells_per_subject > 0 || qc.min_expr_fraction > 0;
}

Study load_study(const RunConfig& config, bool require_metadata = true) {
    if (config.counts.empty()) {
        throw std::invalid_argument("--counts is required");
    }
    Study output;
    output.counts = ulv::read_counts(config.counts, config.format, config.normalized);
    if (config.metadata.empty()) {
        if (require_metadata) {
            throw std::invalid_argument("--metadata is required");
        }
        return output;
    }
    output.metadata = ulv::read_metadata(config.metadata);
    output.metadata.validate(output.counts.cell_ids);

    if (qc_enabled(config.qc)) {
        auto filtered = ulv::filter_qc(output.counts, output.metadata, config.qc);
        std::cerr << "QC removed " << filtered.dropped_subjects.size() << " subject(s) and " << filtered.dropped_genes.size()
                  << " gene(s)" << std::endl;
        output.counts = std::move(filtered.counts);
        output.metadata = std::move(filtered.metadata);
    }
    return output;
}

std::vector<std::string> present_conditions(const Study& study) {
    std::set<std::string> found;
    for (const auto& entry : study.metadata.cluster_sizes(study.counts.cell_ids)) {
        found.insert(study.metadata.subject_to_condition.at(entry.first));
    }
    return std::vector<std::string>(found.begin(), found.end());
}

std::pair<std::string, std::string> resolve_two_groups(const RunConfig& config, const std::vector<std::string>& conditions) {
    auto other = [&](const std::string& name, const char* flag) -> std::string {
        if (std::find(conditions.begin(), conditions.end(), name) == conditions.end()) {
            throw std::invalid_argument(std::string(flag) + " '" + name + "' is not one of the conditions: " + join(conditions, ", "));
        }
        return conditions[0] == name ? conditions[1] : conditions[0];
    };

    if (!config.reference.empty()) {
        const auto case_condition = other(config.reference, "--reference");
        if (!config.case_condition.empty() && config.case_condition != case_condition) {
            throw std::invalid_argument("--case '" + config.case_condition + "' conflicts with --reference '" + config.reference + "'");
        }
        return { case_condition, config.reference };
    }
    if (!config.case_condition.empty()) {
        return { config.case_condition, other(config.case_condition, "--case") };
    }
    if (conditions[0] == "case" && conditions[1] == "control") {
        return { "case", "control" };
    }
    throw std::invalid_argument("found conditions " + join(conditions, ", ") + "; use --reference to name the control condition");
}

ulv::GeneTestOptions test_options(const RunConfig& config) {
    ulv::GeneTestOptions output;
    output.metric = resolved_metric(config);
    output.adjust = !config.covariates.empty();
    output.weighted = config.weighted;
    output.alternative = config.alternative;
    output.normal_approx = config.normal_approx;
    output.summary = config.summary;
    return output;
}

std::vector<ulv::ResultRow> finalize(const std::vector<ulv::TestResult>& results, const RunConfig& config, ulv::DifferenceMetric metric) {
    std::vector<double> pvalues;
    pvalues.reserve(results.size());
    for (const auto& r : results) {
        pvalues.push_back(std::clamp(r.p_value, 0.0, 1.0));
    }
    const auto fdr = ulv::bh_adjust(pvalues);

    ulv::DECallRule rule;
    rule.fdr_threshold = config.fdr;
    rule.pi_lower = config.pi_lower;
    rule.pi_upper = config.pi_upper;
    const bool band = ulv::has_pi_scale(metric);

    std::vector<ulv::ResultRow> output(results.size());
    for (size_t g = 0; g < results.size(); ++g) {
        auto& row = output[g];
        row.test = results[g];
        row.metric = metric;
        row.effect_pi = ulv::effect_on_pi_scale(results[g].effect, ulv::Method::ULV, metric);
        row.fdr_p = fdr[g];
        row.is_de = ulv::call_de(row.effect_pi, row.fdr_p, rule, band);
    }
    return output;
}

void write_sidecar(const std::string& output, const RunConfig& config, const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    auto entries = config.describe();
    entries.insert(entries.end(), extra.begin(), extra.end());
    ulv::write_config_sidecar(output, entries);
}

void require_output(const RunConfig& config) {
    if (config.out.empty()) {
        throw std::invalid_argument("--out is required");
    }
}

std::vector<ulv::ReferenceRow> reference_table(const RunConfig& config) {
    return config.params.empty() ? ulv::default_reference_table() : ulv::read_parameter_table(config.params);
}

}

ulv::DifferenceMetric resolved_metric(const RunConfig& config) {
    if (config.transform == "none") {
        return config.metric;
    }
    if (config.transform == "logit") {
        if (config.metric != ulv::DifferenceMetric::PI && config.metric != ulv::DifferenceMetric::LOGIT_PI) {
            throw std::invalid_argument("--transform logit only applies to the pi metric");
        }
        return ulv::DifferenceMetric::LOGIT_PI;
    }
    throw std::invalid_argument("unknown transform '" + config.transform + "' (expected none or logit)");
}

std::vector<std::pair<std::string, std::string>> RunConfig::describe() const {
    std::vector<std::pair<std::string, std::string>> output{ { "subcommand", subcommand } };
    auto add = [&](const std::string& key, const std::string& value) -> void { output.emplace_back(key, value); };

    if (subcommand == "test" || subcommand == "permute" || subcommand == "normalize") {
        add("counts", counts);
        add("metadata", metadata);
        add("format", format_name(format));
        add("normalized", normalized ? "true" : "false");
        add("min_cells_per_subject", std::to_string(qc.min_cells_per_subject));
        add("min_expr_fraction", number(qc.min_expr_fraction));
        add("expr_fraction_scope", qc.scope == ulv::ExpressionScope::ALL_CELLS ? "all" : "case:" + qc.case_condition);
    }
    if (subcommand == "normalize") {
        add("pseudocount", number(pseudocount));
    }
    if (subcommand == "test" || subcommand == "permute" || subcommand == "calibrate") {
        add("metric", std::string(ulv::to_string(metric)));
        add("transform", transform);
        add("weighted", weighted ? "true" : "false");
        add("covariates", join(covariates));
        add("alternative", alternative_name(alternative));
        add("normal_approx", normal_approx ? "true" : "false");
        add("subject_summary", std::string(ulv::to_string(summary)));
    }
    if (subcommand == "test") {
        add("reference", reference);
        add("case", case_condition);
        add("fdr", number(fdr));
        add("pi_band", number(pi_lower) + "," + number(pi_upper));
    }
    if (subcommand == "simulate" || subcommand == "calibrate") {
        add("preset", preset);
        add("params", params.empty() ? "(built-in synthetic table)" : params);
        add("n_case_subjects", std::to_string(design.n_case_subjects));
        add("n_control_subjects", std::to_string(design.n_control_subjects));
        add("cells_per_subject", std::to_string(design.min_cells_per_subject) + "," + std::to_string(design.max_cells_per_subject));
        add("n_genes", std::to_string(design.n_genes));
        add("n_de_genes", std::to_string(design.n_de_genes));
        add("fold_change", number(design.fold_change));
        add("covariate_beta", number(design.covariate_beta));
    }
    if (subcommand == "calibrate" || subcommand == "permute") {
        add("methods", join(method_names(methods)));
        std::vector<std::string> a;
        for (auto x : alphas) {
            a.push_back(number(x));
        }
        add("alpha", join(a));
    }
    if (subcommand == "calibrate") {
        add("replicates", std::to_string(replicates));
    }
    if (subcommand == "permute") {
        add("permutations", std::to_string(permutations));
        std::vector<std::string> comp;
        for (const auto& entry : composition) {
            comp.push_back(entry.first + "=" + std::to_string(entry.second));
        }
        add("composition", comp.empty() ? "balanced" : join(comp));
    }
    if (subcommand != "normalize") {
        add("seed", std::to_string(seed));
    }
    add("threads", std::to_string(threads));
    add("out", out);
    return output;
}

void cmd_test(const RunConfig& config) {
    require_output(config);
    const auto metric = resolved_metric(config);
    const auto study = load_study(config);
    const auto conditions = present_conditions(study);
    if (conditions.size() < 2) {
        throw std::invalid_argument("need at least two conditions, found " + std::to_string(conditions.size()));
    }
    const auto options = test_options(config);

    std::vector<ulv::TestResult> results;
    std::vector<std::pair<std::string, std::string>> extra;
    if (conditions.size() == 2) {
        const auto groups = resolve_two_groups(config, conditions);
        const auto layout = ulv::make_two_group_layout(study.counts, study.metadata, groups.first, groups.second, config.covariates);
        results = ulv::test_genes(ulv::Method::ULV, study.counts, layout, options, config.threads);
        extra = { { "case_condition", groups.first }, { "control_condition", groups.second } };
    } else {
        if (config.reference.empty()) {
            throw std::invalid_argument("found " + std::to_string(conditions.size()) + " conditions (" + join(conditions, ", ") +
                                        "); use --reference to name the condition that the others are compared against");
        }
        if (std::find(conditions.begin(), conditions.end(), config.reference) == conditions.end()) {
            throw std::invalid_argument("--reference '" + config.reference + "' is not one of the conditions: " + join(conditions, ", "));
        }
        const auto layout = ulv::make_multi_group_layout(study.counts, study.metadata, config.reference, config.covariates);
        results = ulv::test_genes_multi(study.counts, layout, options, config.threads);
        extra = { { "conditions", join(layout.conditions) }, { "control_condition", config.reference } };
    }

    ulv::write_results(config.out, finalize(results, config, metric));
    write_sidecar(config.out, config, extra);
}

void cmd_simulate(const RunConfig& config) {
    require_output(config);
    auto design = config.design;
    design.seed = config.seed;
    const auto grid = ulv::resample_parameters(reference_table(config), design.n_genes, design.n_subjects(), ulv::derive_seed(config.seed, 1));
    const auto data = ulv::simulate_dataset(design, grid, config.threads);

    if (!data.skipped_genes.empty()) {
        std::cerr << "skipped " << data.skipped_genes.size() << " gene(s) whose fold change exceeds the dispersion-feasible range: "
                  << join(data.skipped_genes, ", ") << std::endl;
    }

    const std::string counts_path = config.out + (config.format == ulv::MatrixFormat::DENSE_TSV ? ".counts.tsv" : ".counts.mtx");
    const std::string metadata_path = config.out + ".metadata.tsv";
    const std::string truth_path = config.out + ".truth.tsv";
    ulv::write_counts(counts_path, data.counts, config.format);
    ulv::write_metadata(metadata_path, data.metadata, data.counts.cell_ids);
    ulv::write_truth(truth_path, data.truth);

    std::vector<std::pair<std::string, std::string>> extra{ { "skipped_genes", join(data.skipped_genes) } };
    for (const auto& path : { counts_path, metadata_path, truth_path }) {
        write_sidecar(path, config, extra);
    }
}

void cmd_calibrate(const RunConfig& config) {
    require_output(config);
    ulv::CalibrationConfig calib;
    calib.design = config.design;
    calib.reference = reference_table(config);
    calib.methods = config.methods;
    calib.alphas = config.alphas;
    calib.n_replicates = config.replicates;
    calib.seed = config.seed;
    calib.threads = config.threads;
    calib.test = test_options(config);
    calib.test.adjust = false;

    const auto summary = ulv::calibrate(calib);
    ulv::write_calibration(config.out, summary);
    write_sidecar(config.out, config);

    if (!config.svg.empty()) {
        ulv::write_calibration_svg(config.svg, summary, false);
        write_sidecar(config.svg, config);
        if (config.design.n_de_genes > 0 && config.design.fold_change > 1) {
            auto stem = config.svg;
            if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".svg") {
                stem.resize(stem.size() - 4);
            }
            ulv::write_calibration_svg(stem + "-power.svg", summary, true);
        }
    }

    for (auto m : summary.methods) {
        for (auto a : summary.alpha_levels) {
            std::cerr << ulv::to_string(m) << "\talpha=" << number(a) << "\tmean type I error=" << number(summary.mean_rejection_rate(m, a));
            const double power = summary.mean_power(m, a);
            if (!std::isnan(power)) {
                std::cerr << "\tmean power=" << number(power);
            }
            std::cerr << '\n';
        }
    }
}

void cmd_permute(const RunConfig& config) {
    require_output(config);
    const auto study = load_study(config);

    std::vector<std::string> subjects, conditions;
    for (const auto& entry : study.metadata.cluster_sizes(study.counts.cell_ids)) {
        subjects.push_back(entry.first);
        conditions.push_back(study.metadata.subject_to_condition.at(entry.first));
    }
    const auto composition = config.composition.empty() ? ulv::balanced_composition(conditions) : config.composition;
    const auto perms = ulv::permute_labels(conditions, composition, config.permutations, config.seed);
    if (perms.exhaustive) {
        std::cerr << "notice: requested " << config.permutations << " permutations but only " << perms.total
                  << " distinct assignments exist; enumerating all of them" << std::endl;
    }

    const auto options = test_options(config);
    std::ofstream summary(config.out);
    std::ofstream sets(config.out + ".sets");
    if (!summary || !sets) {
        throw std::runtime_error("cannot open '" + config.out + "' for writing");
    }
    summary << "permutation\tmethod\talpha\trejection_rate\n";
    sets << "permutation\tgroup1_subjects\n";

    for (size_t p = 0; p < perms.first_group.size(); ++p) {
        auto metadata = study.metadata;
        std::vector<std::string> group1;
        for (auto& s : subjects) {
            metadata.subject_to_condition[s] = "group2";
        }
        for (auto i : perms.first_group[p]) {
            metadata.subject_to_condition[subjects[i]] = "group1";
            group1.push_back(subjects[i]);
        }
        sets << (p + 1) << '\t' << join(group1) << '\n';

        const auto layout = ulv::make_two_group_layout(study.counts, metadata, "group1", "group2", config.covariates);
        for (auto method : config.methods) {
            const auto results = ulv::test_genes(method, study.counts, layout, options, config.threads);
            for (auto alpha : config.alphas) {
                double hits = 0;
                for (const auto& r : results) {
                    hits += (r.p_value <= alpha);
                }
                summary << (p + 1) << '\t' << ulv::to_string(method) << '\t' << number(alpha) << '\t'
                        << number(results.empty() ? 0 : hits / results.size()) << '\n';
            }
        }
    }

    summary.close();
    sets.close();
    if (!summary || !sets) {
        throw std::runtime_error("failed to write '" + config.out + "'");
    }
    write_sidecar(config.out, config, { { "total_assignments", std::to_string(perms.total) },
                                        { "exhaustive", perms.exhaustive ? "true" : "false" } });
}

void cmd_normalize(const RunConfig& config) {
    require_output(config);
    if (qc_enabled(config.qc) && config.metadata.empty()) {
        throw std::invalid_argument("QC filters need --metadata");
    }
    auto study = load_study(config, false);

    ulv::CountMatrix normalized;
    normalized.gene_ids = study.counts.gene_ids;
    normalized.cell_ids = study.counts.cell_ids;
    normalized.values = ulv::clr_normalize(study.counts, config.pseudocount).sparseView();
    ulv::write_counts(config.out, normalized, config.format);
    write_sidecar(config.out, config);

    if (!config.metadata.empty()) {
        const std::string metadata_path = config.out + ".metadata.tsv";
        ulv::write_metadata(metadata_path, study.metadata, study.counts.cell_ids);
    }
}

}
