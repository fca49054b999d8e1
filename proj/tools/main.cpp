#include "CLI11.hpp"
#include "commands.hpp"

#include <iostream>

namespace {

struct DesignFlags {
    std::optional<int> cases, controls, cells, genes, de_genes;
    std::vector<int> cells_range;
    std::optional<double> fold_change, beta;

    void add(CLI::App* app) {
        app->add_option("--cases", cases, "Number of case subjects")->check(CLI::PositiveNumber);
        app->add_option("--controls", controls, "Number of control subjects")->check(CLI::PositiveNumber);
        app->add_option("--cells", cells, "Fixed number of cells per subject")->check(CLI::PositiveNumber);
        app->add_option("--cells-range", cells_range, "Cells per subject drawn uniformly from MIN,MAX")->delimiter(',')->expected(2);
        app->add_option("--genes", genes, "Number of genes")->check(CLI::PositiveNumber);
        app->add_option("--de-genes", de_genes, "Number of genes receiving the fold change")->check(CLI::NonNegativeNumber);
        app->add_option("--fold-change", fold_change, "Fold change r >= 1 for DE genes");
        app->add_option("--beta", beta, "Covariate effect on log mean");
    }

    ulv::SimDesign resolve(const std::string& preset) const {
        ulv::SimDesign output = preset.empty() ? ulv::design_preset("fig3-null") : ulv::design_preset(preset);
        if (cases) {
            output.n_case_subjects = *cases;
        }
        if (controls) {
            output.n_control_subjects = *controls;
        }
        if (cells) {
            if (!cells_range.empty()) {
                throw std::invalid_argument("--cells and --cells-range are mutually exclusive");
            }
            output.min_cells_per_subject = output.max_cells_per_subject = *cells;
        }
        if (!cells_range.empty()) {
            output.min_cells_per_subject = cells_range[0];
            output.max_cells_per_subject = cells_range[1];
        }
        if (genes) {
            output.n_genes = *genes;
            output.n_de_genes = std::min(output.n_de_genes, *genes);
        }
        if (de_genes) {
            output.n_de_genes = *de_genes;
        }
        if (fold_change) {
            output.fold_change = *fold_change;
        }
        if (beta) {
            output.covariate_beta = *beta;
        }
        output.validate();
        return output;
    }
};

struct ModelFlags {
    std::string metric = "pi", alternative = "two-sided", summary = "mean";

    void add(CLI::App* app, ulv_cli::RunConfig& config) {
        app->add_option("--metric", metric, "Pairwise difference: pi, logit-pi, mean, median or mean-greater")->capture_default_str();
        app->add_option("--transform", config.transform, "Transform of the PI metric: none or logit")->capture_default_str();
        app->add_flag("--weighted", config.weighted, "Weight subjects by cluster size");
        app->add_option("--covariates", config.covariates, "Comma-separated covariate columns to adjust for")->delimiter(',');
        app->add_option("--alternative", alternative, "two-sided, greater or less")->capture_default_str();
        app->add_flag("--normal-approx", config.normal_approx, "Use the normal instead of the t reference distribution");
        app->add_option("--summary", summary, "Subject summary for the pseudobulk rank-sum baseline: mean, median or nonzero")->capture_default_str();
    }

    void resolve(ulv_cli::RunConfig& config) const {
        config.metric = ulv::parse_metric(metric);
        config.alternative = ulv::parse_alternative(alternative);
        config.summary = ulv::parse_subject_summary(summary);
        ulv_cli::resolved_metric(config);
    }
};

struct InputFlags {
    std::string format = "dense", scope = "all";
    int min_cells = 0;
    double min_fraction = 0;

    void add(CLI::App* app, ulv_cli::RunConfig& config, bool metadata_required) {
        app->add_option("--counts", config.counts, "Expression matrix (genes x cells)")->required();
        auto meta = app->add_option("--metadata", config.metadata, "Cell metadata: cell_id, subject_id, condition, covariates...");
        if (metadata_required) {
            meta->required();
        }
        app->add_option("--format", format, "Matrix format: dense or mtx")->capture_default_str();
        app->add_flag("--normalized", config.normalized, "Input holds normalized values, which may be negative");
        app->add_option("--min-cells", min_cells, "Keep subjects with more than this many cells (0 disables)")->capture_default_str()->check(CLI::NonNegativeNumber);
        app->add_option("--min-expr-fraction", min_fraction, "Keep genes expressed in more than this fraction of cells (0 disables)")
            ->capture_default_str()->check(CLI::Range(0.0, 1.0));
        app->add_option("--expr-scope", scope, "Cells used for the expression fraction: all, or case:CONDITION")->capture_default_str();
    }

    void resolve(ulv_cli::RunConfig& config) const {
        config.format = ulv::parse_matrix_format(format);
        config.qc.min_cells_per_subject = min_cells;
        config.qc.min_expr_fraction = min_fraction;
        if (scope == "all") {
            config.qc.scope = ulv::ExpressionScope::ALL_CELLS;
        } else if (scope.rfind("case:", 0) == 0 && scope.size() > 5) {
            config.qc.scope = ulv::ExpressionScope::CASE_CELLS;
            config.qc.case_condition = scope.substr(5);
        } else {
            throw std::invalid_argument("--expr-scope should be 'all' or 'case:CONDITION'");
        }
    }
};

std::vector<ulv::Method> parse_methods(const std::vector<std::string>& names) {
    std::vector<ulv::Method> output;
    for (const auto& n : names) {
        output.push_back(ulv::parse_method(n));
    }
    return output;
}

std::map<std::string, int> parse_composition(const std::vector<std::string>& entries) {
    std::map<std::string, int> output;
    for (const auto& e : entries) {
        const auto eq = e.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw std::invalid_argument("--composition entries should look like CONDITION=COUNT, got '" + e + "'");
        }
        try {
            size_t used = 0;
            const int k = std::stoi(e.substr(eq + 1), &used);
            if (used != e.size() - eq - 1) {
                throw std::invalid_argument("");
            }
            output[e.substr(0, eq)] = k;
        } catch (std::exception&) {
            throw std::invalid_argument("invalid count in --composition entry '" + e + "'");
        }
    }
    return output;
}

}

int main(int argc, char** argv) {
    CLI::App app{ "Differential testing for clustered single-cell data with the ULV latent-variable model" };
    app.require_subcommand(1);

    ulv_cli::RunConfig config;
    config.methods = { ulv::Method::ULV, ulv::Method::WILCOXON_PSEUDOBULK };

    auto common = [&](CLI::App* sub) -> void {
        sub->add_option("--seed", config.seed, "Random seed")->capture_default_str();
        sub->add_option("--threads", config.threads, "Worker threads for the per-gene fan-out")
            ->envname("ULV_THREADS")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--out", config.out, "Output path (or prefix for simulate)")->required();
    };

    InputFlags input;
    ModelFlags model;
    DesignFlags design;
    std::vector<std::string> pi_band, methods, composition;

    auto test = app.add_subcommand("test", "Test every gene for a difference between conditions");
    input.add(test, config, true);
    model.add(test, config);
    test->add_option("--reference", config.reference, "Control condition; with more than two conditions, the shared reference");
    test->add_option("--case", config.case_condition, "Case condition when there are two");
    test->add_option("--fdr", config.fdr, "FDR threshold for DE calls")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    test->add_option("--pi-band", pi_band, "PI band LO,HI outside which genes may be called DE")->delimiter(',')->expected(2);
    common(test);

    auto simulate = app.add_subcommand("simulate", "Simulate a clustered count dataset");
    simulate->add_option("--preset", config.preset, "Named design: fig3-null or fig3-power-r2");
    simulate->add_option("--params", config.params, "Reference parameter table (gene_id, subject_id, mu, phi, dropout, sigma)");
    simulate->add_option("--format", input.format, "Matrix format: dense or mtx")->capture_default_str();
    design.add(simulate);
    common(simulate);

    auto calibrate = app.add_subcommand("calibrate", "Estimate type I error and power by repeated simulation");
    calibrate->add_option("--preset", config.preset, "Named design: fig3-null or fig3-power-r2");
    calibrate->add_option("--params", config.params, "Reference parameter table");
    calibrate->add_option("--methods", methods, "Comma-separated methods: ulv, ulv-adj, ulv-wt, wilcoxon-pseudobulk, wilcoxon-sc")->delimiter(',');
    calibrate->add_option("--alpha", config.alphas, "Comma-separated significance levels")->delimiter(',');
    calibrate->add_option("--replicates", config.replicates, "Number of simulated datasets")->capture_default_str()->check(CLI::PositiveNumber);
    calibrate->add_option("--svg", config.svg, "Also draw box plots of the per-replicate rates");
    design.add(calibrate);
    model.add(calibrate, config);
    common(calibrate);

    auto permute = app.add_subcommand("permute", "Type I error on subject-label permutations of a real dataset");
    input.add(permute, config, true);
    model.add(permute, config);
    permute->add_option("--permutations", config.permutations, "Number of distinct permutations")->capture_default_str()->check(CLI::PositiveNumber);
    permute->add_option("--composition", composition, "Subjects of each condition placed in the first group, e.g. AML=8,healthy=2")->delimiter(',');
    permute->add_option("--methods", methods, "Comma-separated methods")->delimiter(',');
    permute->add_option("--alpha", config.alphas, "Comma-separated significance levels")->delimiter(',');
    common(permute);

    auto normalize = app.add_subcommand("normalize", "Centered log-ratio normalization of each cell");
    input.add(normalize, config, false);
    normalize->add_option("--pseudocount", config.pseudocount, "Pseudocount added before the log")->capture_default_str();
    normalize->add_option("--threads", config.threads, "Unused; accepted for consistency")->envname("ULV_THREADS");
    normalize->add_option("--out", config.out, "Output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (test->parsed()) {
            config.subcommand = "test";
            input.resolve(config);
            model.resolve(config);
            if (!pi_band.empty()) {
                config.pi_lower = std::stod(pi_band[0]);
                config.pi_upper = std::stod(pi_band[1]);
            }
            ulv::DECallRule rule{ config.fdr, config.pi_lower, config.pi_upper };
            rule.validate();
            ulv_cli::cmd_test(config);

        } else if (simulate->parsed()) {
            config.subcommand = "simulate";
            config.format = ulv::parse_matrix_format(input.format);
            config.design = design.resolve(config.preset);
            ulv_cli::cmd_simulate(config);

        } else if (calibrate->parsed()) {
            config.subcommand = "calibrate";
            model.resolve(config);
            if (!methods.empty()) {
                config.methods = parse_methods(methods);
            }
            config.design = design.resolve(config.preset);
            ulv_cli::cmd_calibrate(config);

        } else if (permute->parsed()) {
            config.subcommand = "permute";
            input.resolve(config);
            model.resolve(config);
            config.methods = methods.empty() ? std::vector<ulv::Method>{ ulv::Method::ULV } : parse_methods(methods);
            config.composition = parse_composition(composition);
            ulv_cli::cmd_permute(config);

        } else if (normalize->parsed()) {
            config.subcommand = "normalize";
            input.resolve(config);
            ulv_cli::cmd_normalize(config);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }

    return 0;
}
