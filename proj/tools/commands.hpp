#ifndef ULV_TOOLS_COMMANDS_HPP
#define ULV_TOOLS_COMMANDS_HPP

#include "ulv/inference.hpp"
#include "ulv/io.hpp"
#include "ulv/simulate.hpp"
#include "ulv/study.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ulv_cli {

struct RunConfig {
    std::string subcommand;

    std::string counts;
    std::string metadata;
    ulv::MatrixFormat format = ulv::MatrixFormat::DENSE_TSV;
    bool normalized = false;

    ulv::DifferenceMetric metric = ulv::DifferenceMetric::PI;
    std::string transform = "none";
    bool weighted = false;
    std::vector<std::string> covariates;
    std::string reference;
    std::string case_condition;
    ulv::Alternative alternative = ulv::Alternative::TWO_SIDED;
    bool normal_approx = false;
    ulv::SubjectSummary summary = ulv::SubjectSummary::MEAN;

    double fdr = 0.1;
    double pi_lower = 0.45;
    double pi_upper = 0.55;

    ulv::QcOptions qc{ 0, 0, ulv::ExpressionScope::ALL_CELLS, "" };
    double pseudocount = 1;

    std::string preset;
    ulv::SimDesign design;
    std::string params;
    std::vector<ulv::Method> methods;
    std::vector<double> alphas{ 0.001, 0.01, 0.05, 0.2 };
    int replicates = 100;
    int permutations = 100;
    std::map<std::string, int> composition;
    std::string svg;

    std::uint64_t seed = 1;
    int threads = 1;
    std::string out;

    /// Key-value pairs describing the resolved configuration.
    std::vector<std::pair<std::string, std::string>> describe() const;
};

/// Metric after applying the transform, e.g., PI with a logit transform becomes logit-PI.
ulv::DifferenceMetric resolved_metric(const RunConfig& config);

void cmd_test(const RunConfig& config);

void cmd_simulate(const RunConfig& config);

void cmd_calibrate(const RunConfig& config);

void cmd_permute(const RunConfig& config);

void cmd_normalize(const RunConfig& config);

}

#endif
