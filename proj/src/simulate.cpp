#include "ulv/simulate.hpp"
#include "ulv/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace ulv {

namespace {

enum StreamPurpose : std::uint64_t {
    RESAMPLE = 0x7265'7361'6d70'6c65,
    CELL_COUNTS = 0x6365'6c6c'636f'756e,
    EXPRESSION = 0x6578'7072'6573'7369,
    PERMUTATION = 0x7065'726d'7574'6174,
    REFERENCE = 0x7265'6665'7265'6e63
};

std::uint64_t stream_seed(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index) {
    return derive_seed(derive_seed(seed, purpose), index);
}

void check_finite(double x, const char* name) {
    if (!std::isfinite(x)) {
        throw std::invalid_argument(std::string("non-finite ") + name);
    }
}

std::uint64_t checked_binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) {
        return 0;
    }
    k = std::min(k, n - k);
    unsigned __int128 output = 1;
    for (std::uint64_t i = 0; i < k; ++i) {
        output = output * (n - i) / (i + 1);
        if (output > std::numeric_limits<std::uint64_t>::max()) {
            throw std::overflow_error("too many possible permutations to index");
        }
    }
    return static_cast<std::uint64_t>(output);
}

std::uint64_t checked_multiply(std::uint64_t a, std::uint64_t b) {
    unsigned __int128 output = static_cast<unsigned __int128>(a) * b;
    if (output > std::numeric_limits<std::uint64_t>::max()) {
        throw std::overflow_error("too many possible permutations to index");
    }
    return static_cast<std::uint64_t>(output);
}

// Lexicographic unranking of a k-subset of [0, n).
void unrank_combination(std::uint64_t rank, int n, int k, std::vector<int>& output) {
    output.clear();
    for (int i = 0; i < n && k > 0; ++i) {
        const std::uint64_t with_i = checked_binomial(n - i - 1, k - 1);
        if (rank < with_i) {
            output.push_back(i);
            --k;
        } else {
            rank -= with_i;
        }
    }
}

}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ index);
}

void ZinbParams::validate() const {
    check_finite(mu, "mu");
    check_finite(phi, "phi");
    check_finite(dropout, "dropout");
    check_finite(sigma, "sigma");
    if (mu <= 0) {
        throw std::invalid_argument("mu should be positive");
    }
    if (phi <= 0) {
        throw std::invalid_argument("phi should be positive");
    }
    if (dropout < 0 || dropout > 1) {
        throw std::invalid_argument("dropout should lie in [0, 1]");
    }
    if (sigma < 0) {
        throw std::invalid_argument("sigma should be non-negative");
    }
}

unsigned long long sample_zinb(const ZinbParams& params, RandomEngine& rng) {
    double cell_mean = params.mu;
    if (params.sigma > 0) {
        std::normal_distribution<double> jitter(params.mu, params.sigma);
        cell_mean = std::max(jitter(rng), 1e-6);
    }

    if (params.dropout > 0) {
        std::bernoulli_distribution zero(params.dropout);
        if (zero(rng)) {
            return 0;
        }
    }

    // Gamma-Poisson mixture with shape phi and scale mu / phi.
    std::gamma_distribution<double> rate(params.phi, cell_mean / params.phi);
    const double lambda = rate(rng);
    if (!(lambda > 0)) {
        return 0;
    }
    std::poisson_distribution<unsigned long long> count(lambda);
    return count(rng);
}

std::pair<double, double> fold_change_transform(double mu, double phi, double r) {
    if (!(mu > 0) || !(phi > 0) || !std::isfinite(mu) || !std::isfinite(phi)) {
        throw std::invalid_argument("mu and phi should be positive and finite");
    }
    if (!(r >= 1) || !std::isfinite(r)) {
        throw std::invalid_argument("fold change should be a finite value no less than 1");
    }
    if (r == 1) {
        return { mu, phi };
    }
    const double denom = mu + (1 - r) * phi;
    if (denom <= 0) {
        throw FoldChangeError();
    }
    return { mu / r, phi * mu / denom };
}

double apply_covariate_effect(double mu, double beta, double x) {
    return mu * std::exp(beta * x);
}

std::vector<ReferenceRow> default_reference_table(int n_genes, int n_subjects, std::uint64_t seed) {
    if (n_genes < 1 || n_subjects < 1) {
        throw std::invalid_argument("reference table needs at least one gene and subject");
    }

    std::vector<ReferenceRow> output;
    output.reserve(static_cast<size_t>(n_genes) * n_subjects);
    for (int g = 0; g < n_genes; ++g) {
        RandomEngine rng(stream_seed(seed, REFERENCE, g));
        std::uniform_real_distribution<double> log_mean(std::log(0.5), std::log(20.0));
        std::uniform_real_distribution<double> size_ratio(0.15, 0.8);
        std::uniform_real_distribution<double> dropout(0, 0.4);
        std::uniform_real_distribution<double> cv(0, 0.3);
        std::normal_distribution<double> subject_effect(0, 0.25);

        const double base = std::exp(log_mean(rng));
        const double ratio = size_ratio(rng);
        const double z = dropout(rng);
        const double spread = cv(rng);
        const std::string gene_id = "ref_gene" + std::to_string(g + 1);

        for (int s = 0; s < n_subjects; ++s) {
            ReferenceRow row;
            row.gene_id = gene_id;
            row.subject_id = "ref_subject" + std::to_string(s + 1);
            row.params.mu = base * std::exp(subject_effect(rng));
            row.params.phi = row.params.mu * ratio;
            row.params.dropout = z;
            row.params.sigma = row.params.mu * spread;
            output.push_back(std::move(row));
        }
    }
    return output;
}

ParameterGrid resample_parameters(const std::vector<ReferenceRow>& reference, int n_genes, int n_subjects, std::uint64_t seed) {
    if (reference.empty()) {
        throw std::invalid_argument("empty reference parameter table");
    }
    if (n_genes < 1 || n_subjects < 1) {
        throw std::invalid_argument("parameter grid needs at least one gene and subject");
    }

    // Group rows by gene, in order of first appearance.
    std::vector<std::string> genes;
    std::vector<std::vector<size_t>> rows_by_gene;
    {
        std::map<std::string, size_t> index;
        for (size_t r = 0; r < reference.size(); ++r) {
            reference[r].params.validate();
            auto it = index.find(reference[r].gene_id);
            if (it == index.end()) {
                index[reference[r].gene_id] = genes.size();
                genes.push_back(reference[r].gene_id);
                rows_by_gene.emplace_back(1, r);
            } else {
                rows_by_gene[it->second].push_back(r);
            }
        }
    }

    ParameterGrid output;
    output.n_genes = n_genes;
    output.n_subjects = n_subjects;
    output.values.resize(static_cast<size_t>(n_genes) * n_subjects);
    output.source_genes.resize(n_genes);

    for (int g = 0; g < n_genes; ++g) {
        RandomEngine rng(stream_seed(seed, RESAMPLE, g));
        std::uniform_int_distribution<size_t> pick_gene(0, genes.size() - 1);
        const size_t chosen = pick_gene(rng);
        output.source_genes[g] = genes[chosen];

        const auto& rows = rows_by_gene[chosen];
        std::uniform_int_distribution<size_t> pick_row(0, rows.size() - 1);
        for (int s = 0; s < n_subjects; ++s) {
            output.values[static_cast<size_t>(g) * n_subjects + s] = reference[rows[pick_row(rng)]].params;
        }
    }

    return output;
}

std::vector<double> default_covariate_values(int n_case_subjects, int n_control_subjects) {
    auto spaced = [](int n, double lo, double hi) -> std::vector<double> {
        std::vector<double> output(n);
        for (int i = 0; i < n; ++i) {
            output[i] = (n == 1 ? (lo + hi) / 2 : lo + (hi - lo) * i / (n - 1));
        }
        return output;
    };
    auto output = spaced(n_case_subjects, -0.9, 1.1);
    auto controls = spaced(n_control_subjects, -1, 1);
    output.insert(output.end(), controls.begin(), controls.end());
    return output;
}

void SimDesign::validate() const {
    if (n_case_subjects < 1 || n_control_subjects < 1) {
        throw std::invalid_argument("each group needs at least one subject");
    }
    if (min_cells_per_subject < 1 || max_cells_per_subject < min_cells_per_subject) {
        throw std::invalid_argument("cells per subject should satisfy 1 <= min <= max");
    }
    if (n_genes < 1) {
        throw std::invalid_argument("need at least one gene");
    }
    if (n_de_genes < 0 || n_de_genes > n_genes) {
        throw std::invalid_argument("number of DE genes should lie in [0, number of genes]");
    }
    if (!(fold_change >= 1) || !std::isfinite(fold_change)) {
        throw std::invalid_argument("fold change should be a finite value no less than 1");
    }
    check_finite(covariate_beta, "covariate effect");
    if (!covariate_values.empty() && static_cast<int>(covariate_values.size()) != n_subjects()) {
        throw std::invalid_argument("need one covariate value per subject");
    }
    for (auto x : covariate_values) {
        check_finite(x, "covariate value");
    }
}

SimulatedDataset simulate_dataset(const SimDesign& design, const ParameterGrid& params, int threads) {
    design.validate();
    const int nsubjects = design.n_subjects();
    if (params.n_genes != design.n_genes || params.n_subjects != nsubjects) {
        throw std::invalid_argument("parameter grid dimensions do not match the design");
    }

    const std::vector<double> covariates = design.covariate_values.empty() ?
        default_covariate_values(design.n_case_subjects, design.n_control_subjects) : design.covariate_values;

    SimulatedDataset output;
    auto& meta = output.metadata;
    meta.covariate_names = { "x" };

    std::vector<std::string> subjects(nsubjects);
    std::vector<int> cells(nsubjects);
    {
        RandomEngine rng(stream_seed(design.seed, CELL_COUNTS, 0));
        std::uniform_int_distribution<int> ncells(design.min_cells_per_subject, design.max_cells_per_subject);
        for (int s = 0; s < nsubjects; ++s) {
            const bool is_case = s < design.n_case_subjects;
            subjects[s] = is_case ? "case" + std::to_string(s + 1) : "control" + std::to_string(s - design.n_case_subjects + 1);
            meta.subject_to_condition[subjects[s]] = is_case ? "case" : "control";
            meta.subject_covariates[subjects[s]] = { covariates[s] };
            cells[s] = ncells(rng);
        }
    }

    auto& counts = output.counts;
    for (int s = 0; s < nsubjects; ++s) {
        for (int k = 0; k < cells[s]; ++k) {
            counts.cell_ids.push_back(subjects[s] + "_" + std::to_string(k + 1));
            meta.cell_to_subject[counts.cell_ids.back()] = subjects[s];
        }
    }
    const Eigen::Index ncells_total = counts.cell_ids.size();

    std::vector<std::vector<std::pair<Eigen::Index, double>>> nonzeros(design.n_genes);
    std::vector<char> skipped(design.n_genes, 0);

    parallel_for(design.n_genes, threads, [&](long long g) -> void {
        const bool is_de = g < design.n_de_genes;
        std::vector<ZinbParams> subject_params(nsubjects);
        try {
            for (int s = 0; s < nsubjects; ++s) {
                ZinbParams current = params(g, s);
                current.validate();
                if (is_de && s < design.n_case_subjects) {
                    auto shifted = fold_change_transform(current.mu, current.phi, design.fold_change);
                    current.mu = shifted.first;
                    current.phi = shifted.second;
                }
                current.mu = apply_covariate_effect(current.mu, design.covariate_beta, covariates[s]);
                subject_params[s] = current;
            }
        } catch (FoldChangeError&) {
            skipped[g] = 1;
            return;
        }

        RandomEngine rng(stream_seed(design.seed, EXPRESSION, g));
        auto& store = nonzeros[g];
        Eigen::Index column = 0;
        for (int s = 0; s < nsubjects; ++s) {
            for (int k = 0; k < cells[s]; ++k, ++column) {
                const auto y = sample_zinb(subject_params[s], rng);
                if (y) {
                    store.emplace_back(column, static_cast<double>(y));
                }
            }
        }
    });

    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::Index row = 0;
    for (int g = 0; g < design.n_genes; ++g) {
        const std::string gene_id = "gene" + std::to_string(g + 1);
        if (skipped[g]) {
            output.skipped_genes.push_back(gene_id);
            continue;
        }
        counts.gene_ids.push_back(gene_id);
        GeneTruth truth;
        truth.gene_id = gene_id;
        truth.is_de = g < design.n_de_genes && design.fold_change > 1;
        truth.fold_change = truth.is_de ? design.fold_change : 1;
        output.truth.push_back(std::move(truth));
        for (const auto& entry : nonzeros[g]) {
            triplets.emplace_back(row, entry.first, entry.second);
        }
        ++row;
    }

    counts.values.resize(row, ncells_total);
    counts.values.setFromTriplets(triplets.begin(), triplets.end());
    counts.values.makeCompressed();
    return output;
}

std::map<std::string, int> balanced_composition(const std::vector<std::string>& subject_conditions) {
    std::map<std::string, int> output;
    for (const auto& c : subject_conditions) {
        ++output[c];
    }
    for (auto& entry : output) {
        entry.second /= 2;
    }
    return output;
}

PermutationSet permute_labels(const std::vector<std::string>& subject_conditions, const std::map<std::string, int>& composition,
                              int n_permutations, std::uint64_t seed) {
    if (n_permutations < 1) {
        throw std::invalid_argument("need at least one permutation");
    }

    std::map<std::string, std::vector<int>> strata;
    for (int s = 0; s < static_cast<int>(subject_conditions.size()); ++s) {
        strata[subject_conditions[s]].push_back(s);
    }
    for (const auto& entry : composition) {
        if (strata.find(entry.first) == strata.end()) {
            throw std::invalid_argument("infeasible composition: no subjects in condition '" + entry.first + "'");
        }
    }

    std::vector<const std::vector<int>*> members;
    std::vector<int> chosen;
    std::vector<std::uint64_t> radix;
    std::uint64_t total = 1;
    for (const auto& stratum : strata) {
        auto it = composition.find(stratum.first);
        const int k = (it == composition.end() ? 0 : it->second);
        const int n = stratum.second.size();
        if (k < 0 || k > n) {
            throw std::invalid_argument("infeasible composition: cannot place " + std::to_string(k) + " of " +
                                        std::to_string(n) + " subjects from condition '" + stratum.first + "'");
        }
        members.push_back(&stratum.second);
        chosen.push_back(k);
        radix.push_back(checked_binomial(n, k));
        total = checked_multiply(total, radix.back());
    }

    PermutationSet output;
    output.total = total;

    std::vector<std::uint64_t> ranks;
    if (static_cast<std::uint64_t>(n_permutations) >= total) {
        output.exhaustive = true;
        ranks.resize(total);
        for (std::uint64_t r = 0; r < total; ++r) {
            ranks[r] = r;
        }
    } else {
        // Floyd's algorithm for a uniform subset of distinct ranks.
        RandomEngine rng(stream_seed(seed, PERMUTATION, 0));
        std::set<std::uint64_t> picked;
        for (std::uint64_t j = total - n_permutations; j < total; ++j) {
            std::uniform_int_distribution<std::uint64_t> draw(0, j);
            const auto t = draw(rng);
            if (!picked.insert(t).second) {
                picked.insert(j);
            }
        }
        ranks.assign(picked.begin(), picked.end());
    }

    std::vector<int> buffer;
    for (auto rank : ranks) {
        std::vector<int> group;
        for (size_t s = 0; s < members.size(); ++s) {
            const std::uint64_t sub = rank % radix[s];
            rank /= radix[s];
            unrank_combination(sub, members[s]->size(), chosen[s], buffer);
            for (auto i : buffer) {
                group.push_back((*members[s])[i]);
            }
        }
        std::sort(group.begin(), group.end());
        output.first_group.push_back(std::move(group));
    }

    return output;
}

SimDesign design_preset(const std::string& name) {
    SimDesign design;
    design.n_case_subjects = 5;
    design.n_control_subjects = 5;
    design.min_cells_per_subject = 100;
    design.max_cells_per_subject = 100;
    design.n_genes = 1000;

    if (name == "fig3-null") {
        design.fold_change = 1;
        design.n_de_genes = 0;
    } else if (name == "fig3-power-r2") {
        design.fold_change = 2;
        design.n_de_genes = 500;
    } else {
        throw std::invalid_argument("unknown preset '" + name + "'");
    }
    return design;
}

std::vector<std::string> design_preset_names() {
    return { "fig3-null", "fig3-power-r2" };
}

}
