#include "ulv/latent_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ulv {

namespace {

constexpr double variance_floor = 1e-12;

/*
 * Gaussian model for observations y_k = x_k' beta + u_{row(k)} - u_{col(k)} + e_k,
 * where row levels belong to one of several variance classes and all column levels share a single class.
 * With Z the +1/-1 incidence matrix and G the diagonal of level variances, V = s I + Z G Z'.
 *
 * Let Q be an orthonormal basis of range(Z) with W = Q'Z, and P the orthogonal complement projector. Then
 * V^-1 = P / s + Q K^-1 Q' with K = s I + W G W', and log|V| = (N - r) log s + log|K| for r = rank(Z).
 * The projected parts are computed once in observation space, which keeps the likelihood accurate
 * when s collapses towards zero (e.g., for separable differences that are fitted exactly).
 */
class CrossedModel {
public:
    CrossedModel(Eigen::VectorXd y, Eigen::MatrixXd X, std::vector<int> row_of, std::vector<int> col_of,
                 Eigen::VectorXi row_class, int n_row_classes, Eigen::VectorXd row_scale, Eigen::VectorXd col_scale) :
        my_y(std::move(y)),
        my_X(std::move(X)),
        my_row_of(std::move(row_of)),
        my_col_of(std::move(col_of)),
        my_row_class(std::move(row_class)),
        my_n_row_classes(n_row_classes),
        my_row_scale(std::move(row_scale)),
        my_col_scale(std::move(col_scale))
    {
        const Eigen::Index N = my_y.size(), R = my_row_scale.size(), C = my_col_scale.size(), p = my_X.cols();
        const Eigen::Index q = R + C;

        if (p > 0) {
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(my_X);
            if (qr.rank() < p) {
                throw std::invalid_argument("collinear covariates");
            }
        }

        Eigen::MatrixXd ZtZ = Eigen::MatrixXd::Zero(q, q);
        Eigen::MatrixXd ZtX = Eigen::MatrixXd::Zero(q, p);
        Eigen::VectorXd Zty = Eigen::VectorXd::Zero(q);
        for (Eigen::Index k = 0; k < N; ++k) {
            const Eigen::Index r = my_row_of[k], c = R + my_col_of[k];
            ZtZ(r, r) += 1;
            ZtZ(c, c) += 1;
            ZtZ(r, c) -= 1;
            ZtZ(c, r) -= 1;
            ZtX.row(r) += my_X.row(k);
            ZtX.row(c) -= my_X.row(k);
            Zty[r] += my_y[k];
            Zty[c] -= my_y[k];
        }

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ZtZ);
        const auto& evals = eig.eigenvalues();
        const double tol = 1e-10 * evals.maxCoeff();
        std::vector<Eigen::Index> keep;
        for (Eigen::Index e = 0; e < q; ++e) {
            if (evals[e] > tol) {
                keep.push_back(e);
            }
        }
        const Eigen::Index rank = keep.size();
        Eigen::MatrixXd U(q, rank);
        Eigen::VectorXd lambda(rank);
        for (Eigen::Index e = 0; e < rank; ++e) {
            U.col(e) = eig.eigenvectors().col(keep[e]);
            lambda[e] = evals[keep[e]];
        }

        // Q = Z U diag(lambda)^-1/2, so Q'v = diag(lambda)^-1/2 U' Z'v and W = Q'Z = diag(lambda)^1/2 U'.
        const Eigen::VectorXd inv_sqrt = lambda.array().rsqrt();
        my_W = lambda.array().sqrt().matrix().asDiagonal() * U.transpose();
        my_Qty = inv_sqrt.asDiagonal() * (U.transpose() * Zty);
        my_QtX = inv_sqrt.asDiagonal() * (U.transpose() * ZtX);

        // Explicit residuals from projecting onto range(Z).
        auto project_out = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& Ztv) -> Eigen::VectorXd {
            const Eigen::VectorXd coef = U * (lambda.cwiseInverse().asDiagonal() * (U.transpose() * Ztv));
            Eigen::VectorXd out = v;
            for (Eigen::Index k = 0; k < N; ++k) {
                out[k] -= coef[my_row_of[k]] - coef[R + my_col_of[k]];
            }
            return out;
        };
        const Eigen::VectorXd y_perp = project_out(my_y, Zty);
        Eigen::MatrixXd X_perp(N, p);
        for (Eigen::Index c = 0; c < p; ++c) {
            X_perp.col(c) = project_out(my_X.col(c), ZtX.col(c));
        }
        my_yty_perp = y_perp.squaredNorm();
        my_Xty_perp = X_perp.transpose() * y_perp;
        my_XtX_perp = X_perp.transpose() * X_perp;
        my_rank = rank;
    }

    Eigen::Index n_params() const {
        return my_n_row_classes + 2;
    }

    Eigen::Index n_obs() const {
        return my_y.size();
    }

    struct Evaluation {
        double loglik = 0;
        Eigen::VectorXd beta;
        Eigen::MatrixXd beta_cov;
        Eigen::VectorXd levels;
    };

    /**
     * `variances` holds one entry per row class, then the column variance, then the residual variance.
     */
    Evaluation evaluate(const Eigen::VectorXd& variances, bool with_levels = false) const {
        const Eigen::Index N = my_y.size(), R = my_row_scale.size(), C = my_col_scale.size(), p = my_X.cols();
        const Eigen::Index q = R + C;

        Eigen::VectorXd level_var(q);
        for (Eigen::Index r = 0; r < R; ++r) {
            level_var[r] = variances[my_row_class[r]] * my_row_scale[r];
        }
        for (Eigen::Index c = 0; c < C; ++c) {
            level_var[R + c] = variances[my_n_row_classes] * my_col_scale[c];
        }
        const double resid = variances[my_n_row_classes + 1];

        Eigen::MatrixXd K = my_W * level_var.asDiagonal() * my_W.transpose();
        K.diagonal().array() += resid;
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        const double logdet = static_cast<double>(N - my_rank) * std::log(resid) + 2 * llt.matrixLLT().diagonal().array().log().sum();

        const Eigen::VectorXd Kinv_y = llt.solve(my_Qty);
        double quad = my_yty_perp / resid + my_Qty.dot(Kinv_y);

        Evaluation output;
        if (p > 0) {
            const Eigen::MatrixXd Kinv_X = llt.solve(my_QtX);
            const Eigen::MatrixXd A = my_XtX_perp / resid + my_QtX.transpose() * Kinv_X;
            const Eigen::VectorXd b = my_Xty_perp / resid + my_QtX.transpose() * Kinv_y;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
            output.beta = ldlt.solve(b);
            output.beta_cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
            quad -= b.dot(output.beta);
        }

        output.loglik = -0.5 * (static_cast<double>(N) * std::log(2 * std::numbers::pi) + logdet + quad);

        if (with_levels) {
            // Conditional means G Z' V^-1 r = G W' K^-1 Q'r; column levels enter Z negated, so these are on the b_j scale.
            Eigen::VectorXd Qtr = my_Qty;
            if (p > 0) {
                Qtr -= my_QtX * output.beta;
            }
            output.levels = level_var.asDiagonal() * (my_W.transpose() * llt.solve(Qtr));
        }
        return output;
    }

    /**
     * Starting points on the log-variance scale, from a backfitted additive decomposition of the OLS residuals.
     */
    std::vector<Eigen::VectorXd> starting_points() const {
        const Eigen::Index N = my_y.size(), R = my_row_scale.size(), C = my_col_scale.size(), p = my_X.cols();

        Eigen::VectorXd resid = my_y;
        if (p > 0) {
            resid -= my_X * my_X.colPivHouseholderQr().solve(my_y);
        }

        // Backfit resid ~ a_row - b_col.
        Eigen::VectorXd a = Eigen::VectorXd::Zero(R), b = Eigen::VectorXd::Zero(C);
        Eigen::VectorXd row_count = Eigen::VectorXd::Zero(R), col_count = Eigen::VectorXd::Zero(C);
        for (Eigen::Index k = 0; k < N; ++k) {
            row_count[my_row_of[k]] += 1;
            col_count[my_col_of[k]] += 1;
        }
        for (int sweep = 0; sweep < 20; ++sweep) {
            a.setZero();
            for (Eigen::Index k = 0; k < N; ++k) {
                a[my_row_of[k]] += resid[k] + b[my_col_of[k]];
            }
            a.array() /= row_count.array();
            b.setZero();
            for (Eigen::Index k = 0; k < N; ++k) {
                b[my_col_of[k]] += a[my_row_of[k]] - resid[k];
            }
            b.array() /= col_count.array();
        }

        double resid_ss = 0;
        for (Eigen::Index k = 0; k < N; ++k) {
            const double e = resid[k] - a[my_row_of[k]] + b[my_col_of[k]];
            resid_ss += e * e;
        }
        const double resid_df = std::max<double>(1, static_cast<double>(N - R - C + 1 - p));
        const double resid_var = resid_ss / resid_df;

        const double total_mean = resid.mean();
        const double total_var = std::max((resid.array() - total_mean).square().sum() / std::max<double>(1, N - 1), variance_floor);
        const double lower = std::max(1e-3 * total_var, variance_floor);

        auto sample_var = [](const std::vector<double>& x) -> double {
            if (x.size() < 2) {
                return 0;
            }
            double mean = 0;
            for (auto v : x) { mean += v; }
            mean /= x.size();
            double ss = 0;
            for (auto v : x) { ss += (v - mean) * (v - mean); }
            return ss / (x.size() - 1);
        };

        const Eigen::Index n_par = n_params();
        Eigen::VectorXd moments(n_par);
        for (int cls = 0; cls < my_n_row_classes; ++cls) {
            std::vector<double> levels;
            double per_row = 0;
            for (Eigen::Index r = 0; r < R; ++r) {
                if (my_row_class[r] == cls) {
                    levels.push_back(a[r]);
                    per_row += row_count[r];
                }
            }
            per_row /= std::max<std::size_t>(1, levels.size());
            moments[cls] = std::max(sample_var(levels) - resid_var / per_row, lower);
        }
        {
            std::vector<double> levels(b.data(), b.data() + C);
            const double per_col = col_count.mean();
            moments[my_n_row_classes] = std::max(sample_var(levels) - resid_var / per_col, lower);
        }
        moments[my_n_row_classes + 1] = std::max(resid_var, lower);

        Eigen::VectorXd equal = Eigen::VectorXd::Constant(n_par, total_var / 3);
        Eigen::VectorXd resid_heavy = Eigen::VectorXd::Constant(n_par, 0.05 * total_var);
        resid_heavy[n_par - 1] = 0.9 * total_var;

        std::vector<Eigen::VectorXd> output{ moments, equal, resid_heavy };
        for (auto& o : output) {
            o = o.array().max(variance_floor).log().matrix();
        }
        return output;
    }

    double total_variance() const {
        const double mean = my_y.mean();
        return (my_y.array() - mean).square().sum() / std::max<double>(1, my_y.size() - 1);
    }

    /// Whether all observations are identical, up to rounding.
    bool constant_response() const {
        const double lo = my_y.minCoeff(), hi = my_y.maxCoeff();
        return (hi - lo) <= 1e-12 * std::max({ 1.0, std::abs(lo), std::abs(hi) });
    }

private:
    Eigen::VectorXd my_y;
    Eigen::MatrixXd my_X;
    std::vector<int> my_row_of, my_col_of;
    Eigen::VectorXi my_row_class;
    int my_n_row_classes;
    Eigen::VectorXd my_row_scale, my_col_scale;

    Eigen::MatrixXd my_W, my_QtX, my_XtX_perp;
    Eigen::VectorXd my_Qty, my_Xty_perp;
    double my_yty_perp = 0;
    Eigen::Index my_rank = 0;
};

struct Optimum {
    Eigen::VectorXd variances;
    CrossedModel::Evaluation evaluation;
    bool converged = false;
    int iterations = 0;
};

Optimum maximize(const CrossedModel& model, const std::vector<Eigen::VectorXd>& starts, const NelderMeadOptions& options) {
    const double lower = std::log(variance_floor);
    const double upper = std::log(std::max(model.total_variance(), 1.0) * 1e8);
    auto to_variances = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return x.array().max(lower).min(upper).exp().matrix();
    };
    auto objective = [&](const Eigen::VectorXd& x) -> double {
        return -model.evaluate(to_variances(x)).loglik;
    };

    Optimum output;
    double best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_x;
    for (const auto& s : starts) {
        auto res = nelder_mead<double>(objective, s, options);
        output.iterations += res.iterations;
        if (res.minimum < best) {
            best = res.minimum;
            best_x = res.minimizer;
            output.converged = res.converged;
        }
    }

    // Restart from the best point with a smaller simplex to escape premature collapse.
    NelderMeadOptions polish = options;
    polish.initial_step = options.initial_step / 4;
    auto res = nelder_mead<double>(objective, best_x, polish);
    output.iterations += res.iterations;
    if (res.minimum <= best) {
        best_x = res.minimizer;
        output.converged = res.converged;
    }

    output.variances = to_variances(best_x);
    output.evaluation = model.evaluate(output.variances, true);
    return output;
}

Eigen::VectorXd cluster_scales(const Eigen::VectorXi& sizes, double mean_size, bool weighted) {
    if (!weighted) {
        return Eigen::VectorXd::Ones(sizes.size());
    }
    if ((sizes.array() <= 0).any()) {
        throw std::invalid_argument("weighted fit requires positive cluster sizes");
    }
    return (mean_size / sizes.cast<double>().array()).matrix();
}

void check_covariates(const Eigen::MatrixXd& cov, Eigen::Index n_subjects) {
    if (!cov.allFinite()) {
        throw std::invalid_argument("missing or non-finite covariate values");
    }
    if (cov.cols() >= n_subjects - 1) {
        throw std::invalid_argument("too many covariates for the number of subjects");
    }
}

CrossedModel two_group_model(const DifferenceMatrix<double>& diff, const LatentModelConfig& config) {
    const Eigen::Index m = diff.n_case(), n = diff.n_control();
    if (m < 2 || n < 2) {
        throw std::invalid_argument("insufficient subjects (need at least 2 cases and 2 controls)");
    }

    const Eigen::Index p = config.covariates ? config.covariates->cols() : 0;
    if (config.covariates) {
        if (config.covariates->rows() != m + n) {
            throw std::invalid_argument("covariate matrix must have one row per subject");
        }
        check_covariates(*config.covariates, m + n);
    }

    const Eigen::Index N = m * n;
    Eigen::VectorXd y(N);
    Eigen::MatrixXd X(N, 1 + p);
    std::vector<int> row_of(N), col_of(N);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const Eigen::Index k = i * n + j;
            y[k] = diff.values(i, j);
            X(k, 0) = 1;
            if (p) {
                X.row(k).tail(p) = config.covariates->row(i) - config.covariates->row(m + j);
            }
            row_of[k] = i;
            col_of[k] = j;
        }
    }

    double mean_size = 1;
    if (config.weighted) {
        if (diff.case_sizes.size() != m || diff.control_sizes.size() != n) {
            throw std::invalid_argument("weighted fit requires cluster sizes for every subject");
        }
        mean_size = (diff.case_sizes.cast<double>().sum() + diff.control_sizes.cast<double>().sum()) / static_cast<double>(m + n);
    }

    return CrossedModel(std::move(y), std::move(X), std::move(row_of), std::move(col_of),
        Eigen::VectorXi::Zero(m), 1,
        cluster_scales(diff.case_sizes, mean_size, config.weighted),
        cluster_scales(diff.control_sizes, mean_size, config.weighted));
}

ModelFit assemble_fit(const CrossedModel& model, const Optimum& opt, const DifferenceMatrix<double>& diff, const LatentModelConfig& config) {
    const Eigen::Index m = diff.n_case(), n = diff.n_control();
    const auto& eval = opt.evaluation;

    ModelFit output;
    output.mu_hat = eval.beta[0];
    output.se_mu = std::sqrt(std::max(eval.beta_cov(0, 0), 0.0));
    const Eigen::Index p = eval.beta.size() - 1;
    output.beta_hat = eval.beta.tail(p);
    output.se_beta = eval.beta_cov.diagonal().tail(p).cwiseMax(0).cwiseSqrt();

    output.var_case = opt.variances[0];
    output.var_control = opt.variances[1];
    output.var_resid = opt.variances[2];

    output.a_hat = eval.levels.head(m).array() + output.mu_hat;
    output.b_hat = eval.levels.tail(n);
    if (p) {
        output.a_hat += config.covariates->topRows(m) * output.beta_hat;
        output.b_hat += config.covariates->bottomRows(n) * output.beta_hat;
    }

    output.loglik = eval.loglik;
    output.converged = opt.converged;
    output.n_iterations = opt.iterations;
    output.n_case = m;
    output.n_control = n;
    output.degenerate = model.constant_response();
    return output;
}

}

ModelFit fit_latent_model(const DifferenceMatrix<double>& diff, const LatentModelConfig& config) {
    const auto model = two_group_model(diff, config);
    const auto opt = maximize(model, model.starting_points(), config.optimizer);
    return assemble_fit(model, opt, diff, config);
}

ModelFit fit_latent_model(const DifferenceMatrix<double>& diff, const LatentModelConfig& config, const Eigen::Vector3d& log_variance_start) {
    const auto model = two_group_model(diff, config);
    const auto opt = maximize(model, { Eigen::VectorXd(log_variance_start) }, config.optimizer);
    return assemble_fit(model, opt, diff, config);
}

double profile_loglik(const DifferenceMatrix<double>& diff, const LatentModelConfig& config, const Eigen::Vector3d& variances) {
    const auto model = two_group_model(diff, config);
    return model.evaluate(Eigen::VectorXd(variances)).loglik;
}

TestResult wald_test(const ModelFit& fit, double null_center, Alternative alternative, bool normal_approx) {
    TestResult output;
    output.effect = fit.mu_hat;
    output.null_center = null_center;
    output.df = static_cast<double>(fit.n_case + fit.n_control - 2);
    output.method = "ulv-ml";
    output.n_case = fit.n_case;
    output.n_control = fit.n_control;

    const double difference = fit.mu_hat - null_center;
    const double scale = std::max(std::abs(fit.mu_hat), std::abs(null_center));
    if (fit.degenerate || !(fit.se_mu > 0)) {
        internal::degenerate_result(output, difference, scale);
        if (output.p_value == 0 && alternative != Alternative::TWO_SIDED) {
            const bool toward = (alternative == Alternative::GREATER) == (difference > 0);
            output.p_value = toward ? 0 : 1;
        }
        return output;
    }

    output.statistic = difference / fit.se_mu;
    output.p_value = t_pvalue(output.statistic, output.df, alternative, normal_approx);
    return output;
}

TestResult latent_model_test(const DifferenceMatrix<double>& diff, const LatentModelConfig& config) {
    const auto fit = fit_latent_model(diff, config);
    auto output = wald_test(fit, config.null_center, config.alternative, config.normal_approx);
    if (config.covariates && config.weighted) {
        output.method = "ulv-adj-wt";
    } else if (config.covariates) {
        output.method = "ulv-adj";
    } else if (config.weighted) {
        output.method = "ulv-wt";
    }
    return output;
}

MultiGroupResult multi_group_test(const std::vector<DifferenceMatrix<double>>& matrices, const LatentModelConfig& config, const std::optional<MultiGroupCovariates>& covariates) {
    const Eigen::Index M = matrices.size();
    if (M < 1) {
        throw std::invalid_argument("at least one non-reference condition is required");
    }
    const Eigen::Index n = matrices.front().n_control();
    if (n < 2) {
        throw std::invalid_argument("insufficient subjects in the reference condition");
    }

    Eigen::Index R = 0, N = 0;
    for (const auto& mat : matrices) {
        if (mat.n_case() < 2) {
            throw std::invalid_argument("insufficient subjects in a non-reference condition (need at least 2)");
        }
        if (mat.n_control() != n) {
            throw std::invalid_argument("all conditions must be compared against the same reference subjects");
        }
        R += mat.n_case();
        N += mat.n_case() * n;
    }

    const Eigen::Index p = covariates ? covariates->reference.cols() : 0;
    if (covariates) {
        if (static_cast<Eigen::Index>(covariates->conditions.size()) != M) {
            throw std::invalid_argument("covariates must be supplied for every condition");
        }
        for (Eigen::Index c = 0; c < M; ++c) {
            if (covariates->conditions[c].rows() != matrices[c].n_case() || covariates->conditions[c].cols() != p) {
                throw std::invalid_argument("covariate matrix must have one row per subject");
            }
        }
        if (covariates->reference.rows() != n) {
            throw std::invalid_argument("covariate matrix must have one row per subject");
        }
        for (const auto& cov : covariates->conditions) {
            check_covariates(cov, R + n);
        }
        check_covariates(covariates->reference, R + n);
    }

    Eigen::VectorXd y(N);
    Eigen::MatrixXd Xcov(N, p), Xcond = Eigen::MatrixXd::Zero(N, M);
    std::vector<int> row_of(N), col_of(N);
    Eigen::VectorXi row_class(R), row_sizes(R);
    {
        Eigen::Index k = 0, offset = 0;
        for (Eigen::Index c = 0; c < M; ++c) {
            const auto& mat = matrices[c];
            for (Eigen::Index i = 0; i < mat.n_case(); ++i) {
                row_class[offset + i] = c;
                row_sizes[offset + i] = (mat.case_sizes.size() == mat.n_case() ? mat.case_sizes[i] : 1);
                for (Eigen::Index j = 0; j < n; ++j, ++k) {
                    y[k] = mat.values(i, j);
                    Xcond(k, c) = 1;
                    if (p) {
                        Xcov.row(k) = covariates->conditions[c].row(i) - covariates->reference.row(j);
                    }
                    row_of[k] = offset + i;
                    col_of[k] = j;
                }
            }
            offset += mat.n_case();
        }
    }

    Eigen::VectorXi col_sizes = matrices.front().control_sizes;
    if (config.weighted && (col_sizes.size() != n || (row_sizes.array() <= 0).any())) {
        throw std::invalid_argument("weighted fit requires cluster sizes for every subject");
    }
    const double mean_size = config.weighted ? (row_sizes.cast<double>().sum() + col_sizes.cast<double>().sum()) / static_cast<double>(R + n) : 1;
    const Eigen::VectorXd row_scale = cluster_scales(row_sizes, mean_size, config.weighted);
    const Eigen::VectorXd col_scale = cluster_scales(col_sizes, mean_size, config.weighted);

    Eigen::MatrixXd Xfull(N, M + p);
    Xfull << Xcond, Xcov;
    CrossedModel full(y, Xfull, row_of, col_of, row_class, M, row_scale, col_scale);
    CrossedModel null(y.array() - config.null_center, Xcov, row_of, col_of, row_class, M, row_scale, col_scale);

    const auto full_opt = maximize(full, full.starting_points(), config.optimizer);
    const auto null_opt = maximize(null, null.starting_points(), config.optimizer);

    MultiGroupResult output;
    output.condition_means = full_opt.evaluation.beta.head(M);
    output.condition_ses = full_opt.evaluation.beta_cov.diagonal().head(M).cwiseMax(0).cwiseSqrt();
    output.loglik_full = full_opt.evaluation.loglik;
    output.loglik_null = null_opt.evaluation.loglik;
    output.converged = full_opt.converged && null_opt.converged;

    auto& test = output.test;
    test.method = "ulv-multi";
    test.null_center = config.null_center;
    test.df = static_cast<double>(M);
    test.n_case = R;
    test.n_control = n;
    Eigen::Index furthest;
    (output.condition_means.array() - config.null_center).abs().maxCoeff(&furthest);
    test.effect = output.condition_means[furthest];

    if (full.constant_response()) {
        internal::degenerate_result(test, test.effect - config.null_center, std::max(std::abs(test.effect), std::abs(config.null_center)));
        test.statistic = std::abs(test.statistic);
        return output;
    }
    test.statistic = std::max(0.0, 2 * (output.loglik_full - output.loglik_null));
    test.p_value = chisq_upper_tail(test.statistic, test.df);
    return output;
}

}
