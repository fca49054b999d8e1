#include <gtest/gtest.h>

#include "ulv/closed_form.hpp"
#include "oracles.hpp"

#include <random>

namespace {

Eigen::MatrixXd worked_example() {
    Eigen::MatrixXd D(2, 2);
    D << 0.6, 0.7, 0.8, 0.9;
    return D;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int m, int n) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd D(m, n);
    for (int i = 0; i < m; ++i) {
        const double a = normal(rng) * 0.1;
        for (int j = 0; j < n; ++j) {
            D(i, j) = 0.5 + a + normal(rng) * 0.05;
        }
    }
    for (int j = 0; j < n; ++j) {
        D.col(j).array() -= normal(rng) * 0.1;
    }
    return D;
}

}

TEST(ClosedForm, WorkedExample) {
    auto res = ulv::closed_form_test(worked_example());
    // t = 0.25 / sqrt(0.02 / 2 + 0.005 / 2); two-sided p from t_2 via F(t) = (1 + t / sqrt(t^2 + 2)) / 2.
    const double t = 0.25 / std::sqrt(0.0125);
    EXPECT_NEAR(res.statistic, t, 1e-12);
    EXPECT_NEAR(res.statistic, 2.23607, 1e-5);
    EXPECT_EQ(res.df, 2);
    EXPECT_NEAR(res.p_value, 1 - t / std::sqrt(t * t + 2), 1e-12);
    EXPECT_NEAR(res.p_value, 0.15485, 1e-5);
    EXPECT_DOUBLE_EQ(res.effect, 0.75);
    EXPECT_EQ(res.method, "ulv-closed-form");
    EXPECT_FALSE(res.degenerate);

    ulv::ClosedFormOptions greater;
    greater.alternative = ulv::Alternative::GREATER;
    EXPECT_NEAR(ulv::closed_form_test(worked_example(), greater).p_value, res.p_value / 2, 1e-12);

    ulv::ClosedFormOptions normal;
    normal.normal_approx = true;
    EXPECT_LT(ulv::closed_form_test(worked_example(), normal).p_value, res.p_value);
}

TEST(ClosedForm, Degenerate) {
    Eigen::MatrixXd D = Eigen::MatrixXd::Constant(3, 4, 0.5);
    auto res = ulv::closed_form_test(D);
    EXPECT_TRUE(res.degenerate);
    EXPECT_EQ(res.p_value, 1);
    EXPECT_EQ(res.statistic, 0);

    D.setConstant(0.7);
    res = ulv::closed_form_test(D);
    EXPECT_TRUE(res.degenerate);
    EXPECT_EQ(res.p_value, 0);
    EXPECT_GT(res.statistic, 0);

    Eigen::MatrixXd tenth = Eigen::MatrixXd::Constant(3, 3, 0.1);
    ulv::ClosedFormOptions opt;
    opt.null_center = 0.1;
    EXPECT_EQ(ulv::closed_form_test(tenth, opt).p_value, 1);

    EXPECT_THROW(ulv::closed_form_test(Eigen::MatrixXd::Constant(1, 3, 0.5)), std::invalid_argument);
}

TEST(ClosedForm, LocationEquivarianceAndPermutationInvariance) {
    std::mt19937_64 rng(99);
    for (int it = 0; it < 50; ++it) {
        Eigen::MatrixXd D = random_matrix(rng, 5, 4);
        auto base = ulv::closed_form_test(D);

        ulv::ClosedFormOptions shifted;
        shifted.null_center = 0.5 + 0.3;
        Eigen::MatrixXd E = D.array() + 0.3;
        EXPECT_NEAR(ulv::closed_form_test(E, shifted).statistic, base.statistic, 1e-9);

        Eigen::PermutationMatrix<Eigen::Dynamic> rows(5), cols(4);
        rows.setIdentity();
        cols.setIdentity();
        std::shuffle(rows.indices().data(), rows.indices().data() + 5, rng);
        std::shuffle(cols.indices().data(), cols.indices().data() + 4, rng);
        Eigen::MatrixXd P = rows * D * cols;
        EXPECT_NEAR(ulv::closed_form_test(P).p_value, base.p_value, 1e-12);
    }
}

TEST(ClosedForm, EqualsTwoSampleTOnLatentLevels) {
    std::mt19937_64 rng(5);
    for (int it = 0; it < 20; ++it) {
        Eigen::MatrixXd D = random_matrix(rng, 6, 4);
        auto lv = ulv::lse_solution(D);
        auto cf = ulv::closed_form_test(D);

        auto var = [](const Eigen::VectorXd& x) { return (x.array() - x.mean()).square().sum() / (x.size() - 1); };
        const double t = (lv.case_levels.mean() - lv.control_levels.mean() - 0.5) /
            std::sqrt(var(lv.case_levels) / 6 + var(lv.control_levels) / 4);
        EXPECT_NEAR(cf.statistic, t, 1e-9);
    }
}

TEST(LeastSquares, WorkedExample) {
    auto lv = ulv::lse_solution(worked_example());
    EXPECT_NEAR(lv.case_levels[0], 0.65, 1e-15);
    EXPECT_NEAR(lv.case_levels[1], 0.85, 1e-15);
    // b_j = d.. - d.j, so that a_i - b_j reproduces d_ij.
    EXPECT_NEAR(lv.control_levels[0], 0.05, 1e-15);
    EXPECT_NEAR(lv.control_levels[1], -0.05, 1e-15);
    EXPECT_NEAR(lv.control_levels.sum(), 0, 1e-15);
    EXPECT_LT(ulv::lse_residuals(worked_example(), lv).cwiseAbs().maxCoeff(), 1e-15);

    Eigen::MatrixXd C = Eigen::MatrixXd::Constant(3, 2, 0.3);
    auto cl = ulv::lse_solution(C);
    EXPECT_TRUE(((cl.case_levels.array() - 0.3).abs() < 1e-15).all());
    EXPECT_TRUE((cl.control_levels.array().abs() < 1e-15).all());
}

TEST(LeastSquares, MinNormMatchesPseudoinverse) {
    std::mt19937_64 rng(17);
    for (auto [m, n] : std::vector<std::pair<int, int>>{ { 2, 2 }, { 3, 2 }, { 4, 5 }, { 1, 3 } }) {
        Eigen::MatrixXd D = random_matrix(rng, m, n);
        auto lv = ulv::lse_solution(D, ulv::LevelConstraint::MIN_NORM);

        const Eigen::MatrixXd design = oracle::latent_design(m, n);
        Eigen::VectorXd d(m * n);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                d[i * n + j] = D(i, j);
            }
        }
        const Eigen::VectorXd expected = oracle::pseudoinverse(design) * d;
        EXPECT_LT((lv.case_levels - expected.head(m)).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((lv.control_levels - expected.tail(n)).cwiseAbs().maxCoeff(), 1e-10);

        auto zm = ulv::lse_solution(D);
        EXPECT_LT((ulv::lse_residuals(D, zm) - ulv::lse_residuals(D, lv)).cwiseAbs().maxCoeff(), 1e-12);
    }
}
