#ifndef ULV_SIMULATE_HPP
#define ULV_SIMULATE_HPP

#include "data.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

/**
 * @file simulate.hpp
 * @brief Zero-inflated negative binomial simulation of clustered counts, fold changes, covariate effects and label permutations.
 */

namespace ulv {

/**
 * @brief Random engine used for every simulation stream.
 */
typedef std::mt19937_64 RandomEngine;

/**
 * Mix a 64-bit value with the splitmix64 finalizer.
 */
std::uint64_t splitmix64(std::uint64_t x);

/**
 * Seed of an independent stream, derived as a hash of the seed XOR'd with the index.
 * Streams for different indices are used for different genes, so that results do not depend on the parallel schedule.
 */
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/**
 * @brief Parameters of the zero-inflated negative binomial for one gene in one subject.
 *
 * The negative binomial has mean `mu` and size `phi`, i.e., variance `mu + mu^2 / phi`.
 * Each cell first draws its own mean from a normal distribution with standard deviation `sigma`.
 */
struct ZinbParams {
    double mu = 1;
    double phi = 1;
    double dropout = 0;
    double sigma = 0;

    /// Throws `std::invalid_argument` unless all fields are finite, `mu, phi > 0`, `dropout` is in [0, 1] and `sigma >= 0`.
    void validate() const;
};

/**
 * Draw one count. The cell-level mean is floored at 1e-6 when the normal draw is not positive.
 */
unsigned long long sample_zinb(const ZinbParams& params, RandomEngine& rng);

/**
 * @brief Thrown when a fold change cannot be represented by the mean/dispersion transform.
 */
struct FoldChangeError : public std::domain_error {
    FoldChangeError() : std::domain_error("fold change exceeds dispersion-feasible range") {}
};

/**
 * Mean and dispersion after a fold change of `r`: `mu / r` and `phi * mu / (mu + (1 - r) * phi)`.
 * Throws `FoldChangeError` if `mu + (1 - r) * phi <= 0`.
 */
std::pair<double, double> fold_change_transform(double mu, double phi, double r);

/**
 * Shift the mean on the log scale by `beta * x`.
 */
double apply_covariate_effect(double mu, double beta, double x);

/**
 * @brief One row of a reference parameter table.
 */
struct ReferenceRow {
    std::string gene_id;
    std::string subject_id;
    ZinbParams params;
};

/**
 * Synthetic reference table used when no table is supplied.
 * Each gene has a baseline mean and dispersion with log-normal variation across subjects.
 * The table is fixed for a given seed.
 */
std::vector<ReferenceRow> default_reference_table(int n_genes = 200, int n_subjects = 20, std::uint64_t seed = 20240101);

/**
 * @brief Simulation parameters per gene and subject.
 */
struct ParameterGrid {
    int n_genes = 0;
    int n_subjects = 0;
    /// Row-major by gene.
    std::vector<ZinbParams> values;
    /// Reference gene used for each simulated gene.
    std::vector<std::string> source_genes;

    const ZinbParams& operator()(int gene, int subject) const { return values[static_cast<size_t>(gene) * n_subjects + subject]; }
};

/**
 * Fill a grid by resampling the reference table with replacement.
 * Each simulated gene draws one reference gene, and each of its subjects draws one of that gene's subject rows,
 * so that the mean/dispersion relationship of each gene is preserved while subjects vary.
 * The output is a deterministic function of the seed.
 */
ParameterGrid resample_parameters(const std::vector<ReferenceRow>& reference, int n_genes, int n_subjects, std::uint64_t seed);

/**
 * @brief Layout of a simulated two-group study.
 */
struct SimDesign {
    int n_case_subjects = 5;
    int n_control_subjects = 5;
    /// Cells per subject are drawn uniformly from [min, max]; a fixed number when the two are equal.
    int min_cells_per_subject = 100;
    int max_cells_per_subject = 100;
    int n_genes = 1000;
    /// The first `n_de_genes` genes receive the fold change in their case subjects.
    int n_de_genes = 0;
    double fold_change = 1;
    double covariate_beta = 0;
    /// One value per subject, cases first; defaults to the confounded layout from `default_covariate_values()`.
    std::vector<double> covariate_values;
    std::uint64_t seed = 1;

    void validate() const;

    int n_subjects() const { return n_case_subjects + n_control_subjects; }
};

/**
 * Cases equally spaced on [-0.9, 1.1] and controls equally spaced on [-1, 1].
 */
std::vector<double> default_covariate_values(int n_case_subjects, int n_control_subjects);

/**
 * @brief Ground truth for one simulated gene.
 */
struct GeneTruth {
    std::string gene_id;
    bool is_de = false;
    double fold_change = 1;
};

struct SimulatedDataset {
    CountMatrix counts;
    /// Conditions are "case" and "control"; the single covariate is named "x".
    StudyMetadata metadata;
    std::vector<GeneTruth> truth;
    /// Genes dropped because their fold change was infeasible.
    std::vector<std::string> skipped_genes;
};

/**
 * Simulate counts for every gene and subject of the design.
 * `threads` only changes the speed, never the output.
 */
SimulatedDataset simulate_dataset(const SimDesign& design, const ParameterGrid& params, int threads = 1);

/**
 * @brief Reassignment of subjects to two groups.
 */
struct PermutationSet {
    /// For each permutation, the indices of subjects placed in the first group, sorted.
    std::vector<std::vector<int>> first_group;
    /// Number of distinct assignments with the requested composition.
    std::uint64_t total = 0;
    /// Whether every assignment was enumerated.
    bool exhaustive = false;
};

/**
 * Sample distinct assignments uniformly without replacement.
 * `composition` gives, for each original condition, how many of its subjects go to the first group.
 * If `n_permutations` is at least the number of possible assignments, all of them are returned.
 */
PermutationSet permute_labels(const std::vector<std::string>& subject_conditions, const std::map<std::string, int>& composition,
                              int n_permutations, std::uint64_t seed);

/**
 * Composition placing half (rounded down) of each condition's subjects in the first group.
 */
std::map<std::string, int> balanced_composition(const std::vector<std::string>& subject_conditions);

/**
 * Named designs: "fig3-null" (5 vs 5 subjects, 100 cells, no fold change) and "fig3-power-r2" (the same with half the genes at r = 2).
 */
SimDesign design_preset(const std::string& name);

std::vector<std::string> design_preset_names();

}

#endif
