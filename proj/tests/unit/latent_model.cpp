#include <gtest/gtest.h>

#include "ulv/latent_model.hpp"
#include "oracles.hpp"

#include <random>

namespace {

// Draws from the crossed model itself: d_ij = mu + a_i - b_j + e_ij.
ulv::DifferenceMatrix<double> simulate_matrix(std::mt19937_64& rng, int m, int n, double mu, double sd_case = 0.1, double sd_control = 0.08, double sd_resid = 0.05) {
    std::normal_distribution<double> normal;
    ulv::DifferenceMatrix<double> D;
    D.values.resize(m, n);
    Eigen::VectorXd a(m), b(n);
    for (auto& v : a) { v = mu + sd_case * normal(rng); }
    for (auto& v : b) { v = sd_control * normal(rng); }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            D.values(i, j) = a[i] - b[j] + sd_resid * normal(rng);
        }
    }
    D.case_sizes = Eigen::VectorXi::Constant(m, 100);
    D.control_sizes = Eigen::VectorXi::Constant(n, 100);
    D.null_center = 0.5;
    return D;
}

ulv::LatentModelConfig default_config() {
    ulv::LatentModelConfig config;
    config.null_center = 0.5;
    return config;
}

}

TEST(LatentModel, ProfileLikelihoodMatchesDenseOracle) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> unif(0.001, 0.05);
    for (int it = 0; it < 20; ++it) {
        auto D = simulate_matrix(rng, 4, 3, 0.6);
        Eigen::Vector3d var(unif(rng), unif(rng), unif(rng));
        // The design is balanced, so the GLS mean is the grand mean at any variances.
        const double expected = oracle::dense_loglik(D.values, D.values.mean(), var[0], var[1], var[2]);
        EXPECT_NEAR(ulv::profile_loglik(D, default_config(), var), expected, 1e-8 * std::abs(expected));
    }
}

TEST(LatentModel, GrandMeanExample) {
    ulv::DifferenceMatrix<double> D;
    D.values.resize(2, 2);
    D.values << 0.7, 0.5, 0.9, 0.7;
    D.case_sizes = Eigen::VectorXi::Constant(2, 10);
    D.control_sizes = Eigen::VectorXi::Constant(2, 10);
    auto fit = ulv::fit_latent_model(D, default_config());
    EXPECT_NEAR(fit.mu_hat, 0.7, 1e-12);
    EXPECT_GE(fit.var_case, 0);
    EXPECT_GE(fit.var_control, 0);
    EXPECT_GE(fit.var_resid, 0);
}

TEST(LatentModel, MLMeanIsGrandMean) {
    std::mt19937_64 rng(2);
    for (int it = 0; it < 50; ++it) {
        auto D = simulate_matrix(rng, 3 + it % 5, 2 + it % 7, 0.55);
        auto fit = ulv::fit_latent_model(D, default_config());
        EXPECT_NEAR(fit.mu_hat, D.values.mean(), 1e-8);
        EXPECT_TRUE(fit.converged);
        EXPECT_EQ(fit.a_hat.size(), D.n_case());
        EXPECT_EQ(fit.b_hat.size(), D.n_control());
    }
}

TEST(LatentModel, NoRandomRestartBeatsTheOptimum) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif(std::log(1e-6), std::log(1.0));
    for (int it = 0; it < 5; ++it) {
        auto D = simulate_matrix(rng, 5, 5, 0.5);
        auto config = default_config();
        auto fit = ulv::fit_latent_model(D, config);
        for (int r = 0; r < 20; ++r) {
            Eigen::Vector3d start(unif(rng), unif(rng), unif(rng));
            auto other = ulv::fit_latent_model(D, config, start);
            EXPECT_LE(other.loglik, fit.loglik + 1e-6);
        }
    }
}

TEST(LatentModel, WeightedWithEqualSizesMatchesUnweighted) {
    std::mt19937_64 rng(4);
    for (int it = 0; it < 20; ++it) {
        auto D = simulate_matrix(rng, 5, 6, 0.52);
        auto unweighted = ulv::fit_latent_model(D, default_config());
        auto config = default_config();
        config.weighted = true;
        auto weighted = ulv::fit_latent_model(D, config);
        EXPECT_NEAR(weighted.mu_hat, unweighted.mu_hat, 1e-8);
        auto tw = ulv::wald_test(weighted, 0.5), tu = ulv::wald_test(unweighted, 0.5);
        EXPECT_NEAR(tw.statistic, tu.statistic, 1e-8);
    }
}

TEST(LatentModel, WeightedUsesClusterSizes) {
    std::mt19937_64 rng(5);
    auto D = simulate_matrix(rng, 5, 5, 0.6);
    D.case_sizes << 10, 20, 400, 50, 60;
    auto config = default_config();
    config.weighted = true;
    auto weighted = ulv::fit_latent_model(D, config);
    auto unweighted = ulv::fit_latent_model(D, default_config());
    EXPECT_GT(std::abs(weighted.mu_hat - unweighted.mu_hat), 1e-6);

    D.case_sizes[0] = 0;
    EXPECT_THROW(ulv::fit_latent_model(D, config), std::invalid_argument);
}

TEST(LatentModel, CollinearCovariates) {
    std::mt19937_64 rng(6);
    auto D = simulate_matrix(rng, 4, 4, 0.5);
    auto config = default_config();
    config.covariates = Eigen::MatrixXd::Constant(8, 1, 3.0);
    try {
        ulv::fit_latent_model(D, config);
        FAIL();
    } catch (std::invalid_argument& e) {
        EXPECT_EQ(std::string(e.what()), "collinear covariates");
    }

    config.covariates = Eigen::MatrixXd::Zero(7, 1);
    EXPECT_THROW(ulv::fit_latent_model(D, config), std::invalid_argument);

    Eigen::MatrixXd bad = Eigen::MatrixXd::Random(8, 1);
    bad(2, 0) = std::numeric_limits<double>::quiet_NaN();
    config.covariates = bad;
    EXPECT_THROW(ulv::fit_latent_model(D, config), std::invalid_argument);
}

TEST(LatentModel, CovariateShiftInvariance) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal;
    for (int it = 0; it < 10; ++it) {
        auto D = simulate_matrix(rng, 5, 5, 0.55);
        Eigen::MatrixXd X(10, 2);
        for (auto& v : X.reshaped()) { v = normal(rng); }
        // Inject a covariate effect.
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 5; ++j) {
                D.values(i, j) += 0.05 * (X(i, 0) - X(5 + j, 0));
            }
        }

        auto config = default_config();
        config.covariates = X;
        auto fit = ulv::fit_latent_model(D, config);
        EXPECT_EQ(fit.beta_hat.size(), 2);

        Eigen::MatrixXd shifted = X;
        shifted.col(1).array() += 17;
        config.covariates = shifted;
        auto fit2 = ulv::fit_latent_model(D, config);
        EXPECT_NEAR(fit2.mu_hat, fit.mu_hat, 1e-8);
        EXPECT_NEAR(fit2.beta_hat[0], fit.beta_hat[0], 1e-8);
        EXPECT_NEAR(fit2.beta_hat[1], fit.beta_hat[1], 1e-8);
    }
}

TEST(LatentModel, CovariateRecoversEffect) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> normal;
    double total = 0;
    const int reps = 30;
    for (int it = 0; it < reps; ++it) {
        auto D = simulate_matrix(rng, 10, 10, 0.5, 0.02, 0.02, 0.02);
        Eigen::MatrixXd X(20, 1);
        for (auto& v : X.reshaped()) { v = normal(rng); }
        for (int i = 0; i < 10; ++i) {
            for (int j = 0; j < 10; ++j) {
                D.values(i, j) += 0.1 * (X(i, 0) - X(10 + j, 0));
            }
        }
        auto config = default_config();
        config.covariates = X;
        total += ulv::fit_latent_model(D, config).beta_hat[0];
    }
    EXPECT_NEAR(total / reps, 0.1, 0.01);
}

TEST(LatentModel, SeparableMetricGivesExactLevels) {
    // Exact additive structure: the residual variance collapses to the floor.
    ulv::DifferenceMatrix<double> D;
    Eigen::VectorXd g1(3), g0(4);
    g1 << 1, 4, 2;
    g0 << 0.5, 3, 1, 2;
    D.values = g1.rowwise().replicate(4) - g0.transpose().colwise().replicate(3);
    D.case_sizes = Eigen::VectorXi::Constant(3, 1);
    D.control_sizes = Eigen::VectorXi::Constant(4, 1);
    D.null_center = 0;
    auto config = default_config();
    config.null_center = 0;
    auto fit = ulv::fit_latent_model(D, config);
    EXPECT_LT(fit.var_resid, 1e-9);
    EXPECT_NEAR(fit.mu_hat, D.values.mean(), 1e-10);
}

TEST(WaldTest, BasicProperties) {
    ulv::ModelFit fit;
    fit.mu_hat = 0.5;
    fit.se_mu = 0.1;
    fit.n_case = 5;
    fit.n_control = 5;
    auto res = ulv::wald_test(fit, 0.5);
    EXPECT_EQ(res.statistic, 0);
    EXPECT_EQ(res.p_value, 1);
    EXPECT_EQ(res.df, 8);

    fit.mu_hat = 0.3;
    res = ulv::wald_test(fit, 0.5);
    EXPECT_NEAR(res.statistic, -2, 1e-12);
    EXPECT_LT(res.p_value, 0.1);

    fit.se_mu = 0;
    res = ulv::wald_test(fit, 0.5);
    EXPECT_TRUE(res.degenerate);
    EXPECT_EQ(res.p_value, 0);
}

TEST(WaldTest, ScaleEquivariance) {
    std::mt19937_64 rng(9);
    for (int it = 0; it < 10; ++it) {
        auto D = simulate_matrix(rng, 5, 4, 0.58);
        auto fit = ulv::fit_latent_model(D, default_config());
        auto D2 = D;
        D2.values = (D.values.array() - 0.5) * 2 + 0.5;
        auto fit2 = ulv::fit_latent_model(D2, default_config());
        EXPECT_NEAR(fit2.mu_hat - 0.5, 2 * (fit.mu_hat - 0.5), 1e-8);
        auto t1 = ulv::wald_test(fit, 0.5).statistic, t2 = ulv::wald_test(fit2, 0.5).statistic;
        EXPECT_EQ(t1 > 0, t2 > 0);
        EXPECT_NEAR(t1, t2, 1e-4 * std::abs(t1));
    }
}

TEST(WaldTest, DegenerateConstantMatrix) {
    ulv::DifferenceMatrix<double> D;
    D.values = Eigen::MatrixXd::Constant(3, 3, 0.5);
    D.case_sizes = D.control_sizes = Eigen::VectorXi::Constant(3, 5);
    auto res = ulv::latent_model_test(D, default_config());
    EXPECT_TRUE(res.degenerate);
    EXPECT_EQ(res.p_value, 1);

    D.values.setConstant(0.8);
    res = ulv::latent_model_test(D, default_config());
    EXPECT_EQ(res.p_value, 0);
}

TEST(WaldTest, AgreesWithClosedForm) {
    // With many subjects the ML variance components and the mean squares coincide closely.
    std::mt19937_64 rng(10);
    double worst = 0;
    for (int it = 0; it < 100; ++it) {
        auto D = simulate_matrix(rng, 40, 40, 0.5 + 0.01 * (it % 3));
        auto fit = ulv::fit_latent_model(D, default_config());
        auto wald = ulv::wald_test(fit, 0.5);
        auto cf = ulv::closed_form_test(D);
        EXPECT_NEAR(fit.mu_hat, cf.effect, 1e-8);
        worst = std::max(worst, std::abs(wald.statistic - cf.statistic));
    }
    EXPECT_LE(worst, 0.05);
}

TEST(LatentModelTest, MethodLabels) {
    std::mt19937_64 rng(11);
    auto D = simulate_matrix(rng, 4, 4, 0.5);
    auto config = default_config();
    EXPECT_EQ(ulv::latent_model_test(D, config).method, "ulv-ml");
    config.weighted = true;
    EXPECT_EQ(ulv::latent_model_test(D, config).method, "ulv-wt");
    config.covariates = Eigen::MatrixXd::Random(8, 1);
    EXPECT_EQ(ulv::latent_model_test(D, config).method, "ulv-adj-wt");
    config.weighted = false;
    EXPECT_EQ(ulv::latent_model_test(D, config).method, "ulv-adj");
}

TEST(MultiGroup, InsufficientSubjects) {
    std::mt19937_64 rng(12);
    auto A = simulate_matrix(rng, 4, 4, 0.5);
    auto B = simulate_matrix(rng, 1, 4, 0.5);
    EXPECT_THROW(ulv::multi_group_test({ A, B }, default_config()), std::invalid_argument);
    auto C = simulate_matrix(rng, 3, 5, 0.5);
    EXPECT_THROW(ulv::multi_group_test({ A, C }, default_config()), std::invalid_argument);
}

TEST(MultiGroup, SingleConditionAgreesWithWald) {
    std::mt19937_64 rng(13);
    int agree = 0;
    const int total = 200;
    for (int it = 0; it < total; ++it) {
        auto D = simulate_matrix(rng, 15, 15, 0.5 + (it % 2) * 0.06);
        auto lrt = ulv::multi_group_test({ D }, default_config());
        auto wald = ulv::wald_test(ulv::fit_latent_model(D, default_config()), 0.5);
        agree += ((lrt.test.p_value < 0.05) == (wald.p_value < 0.05));
        EXPECT_EQ(lrt.test.df, 1);
        EXPECT_NEAR(lrt.condition_means[0], D.values.mean(), 1e-8);
    }
    EXPECT_GE(agree, 0.95 * total);
}

TEST(MultiGroup, NullCalibration) {
    std::mt19937_64 rng(14);
    int rejected = 0;
    const int total = 400;
    for (int it = 0; it < total; ++it) {
        // Two conditions share the reference controls.
        std::normal_distribution<double> normal;
        const int n = 8;
        Eigen::VectorXd b(n);
        for (auto& v : b) { v = 0.08 * normal(rng); }
        std::vector<ulv::DifferenceMatrix<double>> mats;
        for (int c = 0; c < 2; ++c) {
            ulv::DifferenceMatrix<double> D;
            const int m = 8;
            D.values.resize(m, n);
            for (int i = 0; i < m; ++i) {
                const double a = 0.5 + 0.08 * normal(rng);
                for (int j = 0; j < n; ++j) {
                    D.values(i, j) = a - b[j] + 0.05 * normal(rng);
                }
            }
            D.case_sizes = Eigen::VectorXi::Constant(m, 50);
            D.control_sizes = Eigen::VectorXi::Constant(n, 50);
            mats.push_back(std::move(D));
        }
        auto res = ulv::multi_group_test(mats, default_config());
        EXPECT_EQ(res.test.df, 2);
        rejected += res.test.p_value < 0.05;
    }
    const double rate = static_cast<double>(rejected) / total;
    EXPECT_GE(rate, 0.02);
    EXPECT_LE(rate, 0.09);
}

TEST(MultiGroup, DetectsShiftedCondition) {
    std::mt19937_64 rng(15);
    auto A = simulate_matrix(rng, 6, 6, 0.5);
    auto B = simulate_matrix(rng, 6, 6, 0.75);
    B.values.setZero();
    // Share the reference levels with A by reusing its column structure.
    B.values = A.values.array() + 0.25;
    auto res = ulv::multi_group_test({ A, B }, default_config());
    EXPECT_LT(res.test.p_value, 1e-3);
    EXPECT_NEAR(res.test.effect, B.values.mean(), 1e-6);
}
