#include "ulv/inference.hpp"
#include "ulv/ranks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ulv {

std::vector<double> bh_adjust(const std::vector<double>& p_values) {
    const size_t G = p_values.size();
    for (auto p : p_values) {
        if (!(p >= 0 && p <= 1)) {
            throw std::invalid_argument("p-values should lie in [0, 1]");
        }
    }

    std::vector<size_t> order(G);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t l, size_t r) -> bool { return p_values[l] < p_values[r]; });

    std::vector<double> output(G);
    double running = 1;
    for (size_t k = G; k > 0; --k) {
        const size_t i = order[k - 1];
        running = std::min(running, p_values[i] * static_cast<double>(G) / k);
        output[i] = std::max(running, p_values[i]);
    }
    return output;
}

void DECallRule::validate() const {
    if (!(fdr_threshold > 0 && fdr_threshold < 1)) {
        throw std::invalid_argument("FDR threshold should lie in (0, 1)");
    }
    if (!(pi_lower > 0 && pi_lower < pi_upper && pi_upper < 1)) {
        throw std::invalid_argument("PI band should satisfy 0 < lower < upper < 1");
    }
}

bool call_de(double effect_pi, double fdr_p, const DECallRule& rule, bool use_band) {
    if (!(fdr_p < rule.fdr_threshold)) {
        return false;
    }
    return !use_band || effect_pi < rule.pi_lower || effect_pi > rule.pi_upper;
}

std::vector<bool> call_de(const std::vector<double>& effects_pi, const std::vector<double>& fdr_p, const DECallRule& rule, bool use_band) {
    if (effects_pi.size() != fdr_p.size()) {
        throw std::invalid_argument("need one adjusted p-value per effect");
    }
    std::vector<bool> output(effects_pi.size());
    for (size_t g = 0; g < effects_pi.size(); ++g) {
        output[g] = call_de(effects_pi[g], fdr_p[g], rule, use_band);
    }
    return output;
}

namespace {

double combine_sides(double upper, double lower, Alternative alternative) {
    switch (alternative) {
        case Alternative::GREATER: return upper;
        case Alternative::LESS: return lower;
        default: return std::min(1.0, 2 * std::min(upper, lower));
    }
}

Eigen::VectorXd pooled(const Eigen::VectorXd& cases, const Eigen::VectorXd& controls) {
    Eigen::VectorXd output(cases.size() + controls.size());
    output << cases, controls;
    return output;
}

}

double exact_rank_sum_pvalue(const Eigen::VectorXd& cases, const Eigen::VectorXd& controls, Alternative alternative) {
    const int m = cases.size(), n = controls.size();
    if (m == 0 || n == 0) {
        throw std::invalid_argument("both groups need at least one subject");
    }
    if (m + n > exact_rank_sum_limit) {
        return rank_sum_normal_pvalue(cases, controls, alternative);
    }

    // Twice the midranks are integers, so every comparison below is exact.
    const Eigen::VectorXd ranks = midranks(pooled(cases, controls));
    const int N = m + n;
    std::vector<long long> twice(N);
    for (int i = 0; i < N; ++i) {
        twice[i] = std::llround(2 * ranks[i]);
    }
    const long long observed = std::accumulate(twice.begin(), twice.begin() + m, 0LL);

    long long total = 0, at_least = 0, at_most = 0;
    const unsigned limit = 1u << N;
    for (unsigned mask = (1u << m) - 1; mask < limit;) {
        long long sum = 0;
        for (int i = 0; i < N; ++i) {
            if (mask & (1u << i)) {
                sum += twice[i];
            }
        }
        ++total;
        at_least += (sum >= observed);
        at_most += (sum <= observed);

        // Next subset of the same size (Gosper's hack).
        const unsigned low = mask & -mask;
        const unsigned ripple = mask + low;
        mask = (((ripple ^ mask) >> 2) / low) | ripple;
    }

    return combine_sides(static_cast<double>(at_least) / total, static_cast<double>(at_most) / total, alternative);
}

double rank_sum_normal_pvalue(const Eigen::VectorXd& cases, const Eigen::VectorXd& controls, Alternative alternative) {
    const double m = cases.size(), n = controls.size();
    if (m == 0 || n == 0) {
        throw std::invalid_argument("both groups need at least one observation");
    }

    Eigen::VectorXd all = pooled(cases, controls);
    const Eigen::VectorXd ranks = midranks(all);
    const double u = ranks.head(cases.size()).sum() - m * (m + 1) / 2;

    std::sort(all.begin(), all.end());
    const double N = m + n;
    double ties = 0;
    for (Eigen::Index start = 0; start < all.size();) {
        Eigen::Index end = start + 1;
        while (end < all.size() && all[end] == all[start]) {
            ++end;
        }
        const double t = end - start;
        ties += t * t * t - t;
        start = end;
    }

    const double variance = m * n / 12 * ((N + 1) - (N > 1 ? ties / (N * (N - 1)) : 0));
    if (!(variance > 0)) {
        return 1;
    }
    const double sd = std::sqrt(variance);
    const double center = m * n / 2;
    const double upper = std::min(1.0, normal_upper_tail((u - center - 0.5) / sd));
    const double lower = std::min(1.0, normal_upper_tail((center - u - 0.5) / sd));
    return combine_sides(upper, lower, alternative);
}

double CalibrationSummary::mean_rejection_rate(Method method, double alpha) const {
    double sum = 0;
    int count = 0;
    for (const auto& r : records) {
        if (r.method == method && r.alpha == alpha && !std::isnan(r.rejection_rate)) {
            sum += r.rejection_rate;
            ++count;
        }
    }
    return count ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

double CalibrationSummary::mean_power(Method method, double alpha) const {
    double sum = 0;
    int count = 0;
    for (const auto& r : records) {
        if (r.method == method && r.alpha == alpha && !std::isnan(r.power)) {
            sum += r.power;
            ++count;
        }
    }
    return count ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

CalibrationSummary calibrate(const CalibrationConfig& config) {
    if (config.n_replicates < 1) {
        throw std::invalid_argument("need at least one replicate");
    }
    if (config.methods.empty()) {
        throw std::invalid_argument("need at least one method");
    }
    for (auto a : config.alphas) {
        if (!(a > 0 && a < 1)) {
            throw std::invalid_argument("significance levels should lie in (0, 1)");
        }
    }
    config.design.validate();

    const auto reference = config.reference.empty() ? default_reference_table() : config.reference;
    const bool any_adjusted = std::find(config.methods.begin(), config.methods.end(), Method::ULV_ADJ) != config.methods.end();

    CalibrationSummary output;
    output.alpha_levels = config.alphas;
    output.methods = config.methods;
    output.n_replicates = config.n_replicates;
    output.n_genes = config.design.n_genes;

    for (int rep = 0; rep < config.n_replicates; ++rep) {
        const std::uint64_t rep_seed = derive_seed(config.seed, rep);
        const auto grid = resample_parameters(reference, config.design.n_genes, config.design.n_subjects(), derive_seed(rep_seed, 1));
        SimDesign design = config.design;
        design.seed = derive_seed(rep_seed, 2);
        const auto data = simulate_dataset(design, grid, config.threads);

        std::vector<std::string> covariates;
        if (any_adjusted) {
            covariates.push_back("x");
        }
        const auto layout = make_two_group_layout(data.counts, data.metadata, "case", "control", covariates);

        for (auto method : config.methods) {
            const auto results = test_genes(method, data.counts, layout, config.test, config.threads);
            for (auto alpha : config.alphas) {
                double null_total = 0, null_hits = 0, de_total = 0, de_hits = 0;
                for (size_t g = 0; g < results.size(); ++g) {
                    const bool hit = results[g].p_value <= alpha;
                    if (data.truth[g].is_de) {
                        ++de_total;
                        de_hits += hit;
                    } else {
                        ++null_total;
                        null_hits += hit;
                    }
                }

                CalibrationRecord record;
                record.method = method;
                record.alpha = alpha;
                record.replicate = rep;
                record.rejection_rate = null_total ? null_hits / null_total : std::numeric_limits<double>::quiet_NaN();
                record.power = de_total ? de_hits / de_total : std::numeric_limits<double>::quiet_NaN();
                output.records.push_back(record);
            }
        }
    }

    return output;
}

void write_calibration(const std::string& path, const CalibrationSummary& summary) {
    std::ofstream output(path);
    if (!output) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }

    auto format = [](double x) -> std::string {
        if (std::isnan(x)) {
            return "NA";
        }
        char buffer[64];
        std::snprintf(buffer, sizeof(buffer), "%.6g", x);
        return buffer;
    };

    output << "method\talpha\treplicate\trejection_rate\tpower\n";
    for (const auto& r : summary.records) {
        output << to_string(r.method) << '\t' << format(r.alpha) << '\t' << (r.replicate + 1) << '\t' << format(r.rejection_rate) << '\t'
               << format(r.power) << '\n';
    }
    output.close();
    if (!output) {
        throw std::runtime_error("failed to write '" + path + "'");
    }
}

void write_calibration_svg(const std::string& path, const CalibrationSummary& summary, bool power) {
    const double panel_width = 60.0 * summary.methods.size() + 60, panel_height = 300, margin = 40;
    const double width = panel_width * summary.alpha_levels.size() + margin, height = panel_height + 2 * margin + 60;

    std::ofstream output(path);
    if (!output) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }

    auto quantile = [](std::vector<double> x, double q) -> double {
        std::sort(x.begin(), x.end());
        const double pos = q * (x.size() - 1);
        const size_t lo = std::floor(pos), hi = std::ceil(pos);
        return x[lo] + (x[hi] - x[lo]) * (pos - lo);
    };

    char buffer[512];
    output << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    output << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (size_t a = 0; a < summary.alpha_levels.size(); ++a) {
        const double alpha = summary.alpha_levels[a];
        const double x0 = margin + a * panel_width, y0 = margin;

        std::vector<std::vector<double>> values(summary.methods.size());
        double top = power ? 1 : 2 * alpha;
        for (const auto& r : summary.records) {
            if (r.alpha != alpha) {
                continue;
            }
            const double v = power ? r.power : r.rejection_rate;
            if (std::isnan(v)) {
                continue;
            }
            const size_t k = std::find(summary.methods.begin(), summary.methods.end(), r.method) - summary.methods.begin();
            values[k].push_back(v);
            top = std::max(top, v);
        }
        auto ypos = [&](double v) -> double { return y0 + panel_height * (1 - v / top); };

        std::snprintf(buffer, sizeof(buffer), "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">alpha = %g</text>\n", x0 + panel_width / 2, y0 - 10, alpha);
        output << buffer;
        std::snprintf(buffer, sizeof(buffer), "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n",
                      x0 + 10, y0, panel_width - 20, panel_height);
        output << buffer;
        std::snprintf(buffer, sizeof(buffer), "<text x=\"%g\" y=\"%g\">%.3g</text>\n", x0 + 12, y0 + 12, top);
        output << buffer;
        if (!power) {
            std::snprintf(buffer, sizeof(buffer), "<line x1=\"%g\" x2=\"%g\" y1=\"%g\" y2=\"%g\" stroke=\"red\" stroke-dasharray=\"4,3\"/>\n",
                          x0 + 10, x0 + panel_width - 10, ypos(alpha), ypos(alpha));
            output << buffer;
        }

        for (size_t k = 0; k < summary.methods.size(); ++k) {
            const double cx = x0 + 40 + 60 * k;
            if (!values[k].empty()) {
                const double q1 = quantile(values[k], 0.25), q2 = quantile(values[k], 0.5), q3 = quantile(values[k], 0.75);
                const double lo = *std::min_element(values[k].begin(), values[k].end());
                const double hi = *std::max_element(values[k].begin(), values[k].end());
                std::snprintf(buffer, sizeof(buffer),
                              "<line x1=\"%g\" x2=\"%g\" y1=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                              "<rect x=\"%g\" y=\"%g\" width=\"30\" height=\"%g\" fill=\"#9ecae1\" stroke=\"black\"/>\n"
                              "<line x1=\"%g\" x2=\"%g\" y1=\"%g\" y2=\"%g\" stroke=\"black\" stroke-width=\"2\"/>\n",
                              cx, cx, ypos(hi), ypos(lo), cx - 15, ypos(q3), ypos(q1) - ypos(q3), cx - 15, cx + 15, ypos(q2), ypos(q2));
                output << buffer;
            }
            std::snprintf(buffer, sizeof(buffer), "<text x=\"%g\" y=\"%g\" transform=\"rotate(40 %g %g)\">%s</text>\n", cx - 10,
                          y0 + panel_height + 14, cx - 10, y0 + panel_height + 14, std::string(to_string(summary.methods[k])).c_str());
            output << buffer;
        }
    }

    output << "</svg>\n";
    output.close();
    if (!output) {
        throw std::runtime_error("failed to write '" + path + "'");
    }
}

}
