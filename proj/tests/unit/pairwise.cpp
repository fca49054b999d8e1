#include <gtest/gtest.h>

#include "ulv/pairwise.hpp"
#include "oracles.hpp"

#include <random>

namespace {

using Cells = std::vector<Eigen::VectorXd>;

Eigen::VectorXd vec(std::initializer_list<double> x) {
    Eigen::VectorXd output(x.size());
    std::copy(x.begin(), x.end(), output.data());
    return output;
}

Cells random_subjects(std::mt19937_64& rng, int count) {
    std::uniform_int_distribution<int> len(1, 25);
    Cells output;
    for (int s = 0; s < count; ++s) {
        auto x = oracle::tied_sample(rng, len(rng));
        output.emplace_back(Eigen::Map<Eigen::VectorXd>(x.data(), x.size()));
    }
    return output;
}

}

TEST(DifferenceMatrix, IdenticalSubjectsGiveHalf) {
    Cells cases{ vec({ 1, 2, 3 }), vec({ 4, 0, 2 }) };
    auto D = ulv::build_difference_matrix(cases, cases, ulv::DifferenceMetric::PI);
    EXPECT_EQ(D.values(0, 0), 0.5);
    EXPECT_EQ(D.values(1, 1), 0.5);
    EXPECT_EQ(D.null_center, 0.5);
    EXPECT_EQ(D.case_ids[0], "case1");
    EXPECT_EQ(D.control_ids[1], "control2");
    EXPECT_EQ(D.case_sizes[0], 3);

    Cells same{ vec({ 1, 2, 3 }), vec({ 1, 2, 3 }) };
    auto E = ulv::build_difference_matrix(same, same, ulv::DifferenceMetric::PI);
    EXPECT_TRUE((E.values.array() == 0.5).all());
}

TEST(DifferenceMatrix, MeanDifference) {
    Cells cases{ vec({ 2, 4 }), vec({ 5 }) };
    Cells controls{ vec({ 1 }), vec({ 1, 3 }) };
    auto D = ulv::build_difference_matrix(cases, controls, ulv::DifferenceMetric::MEAN_DIFF);
    Eigen::MatrixXd expected(2, 2);
    expected << 2, 1, 4, 3;
    EXPECT_EQ(D.values, expected);
    EXPECT_EQ(D.null_center, 0);
}

TEST(DifferenceMatrix, PIMatchesRanksOracle) {
    Cells cases{ vec({ 3, 5, 7 }), vec({ 3, 5, 7 }) };
    Cells controls{ vec({ 2, 5, 6 }), vec({ 2, 5, 6 }) };
    auto D = ulv::build_difference_matrix(cases, controls, ulv::DifferenceMetric::PI);
    EXPECT_TRUE(((D.values.array() - 11.0 / 18).abs() < 1e-15).all());
    EXPECT_NEAR(ulv::u_cluster(D), 4 * 11.0 / 18, 1e-12);
    EXPECT_NEAR(ulv::pooled_pair_u(D), 4 * 5.5, 1e-12);
}

TEST(DifferenceMatrix, MedianAndIndicator) {
    Cells cases{ vec({ 1, 9, 3, 4 }), vec({ 2, 2, 2 }) };
    Cells controls{ vec({ 3 }), vec({ 0, 10 }) };
    auto med = ulv::build_difference_matrix(cases, controls, ulv::DifferenceMetric::MEDIAN_DIFF);
    // Medians: 3.5, 2 against 3, 5.
    EXPECT_DOUBLE_EQ(med.values(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(med.values(1, 1), -3);

    auto ind = ulv::build_difference_matrix(cases, controls, ulv::DifferenceMetric::MEAN_GREATER_INDICATOR);
    // Means: 4.25, 2 against 3, 5.
    EXPECT_EQ(ind.values(0, 0), 1);
    EXPECT_EQ(ind.values(0, 1), 0);
    EXPECT_EQ(ind.values(1, 0), 0);
    EXPECT_EQ(ind.null_center, 0.5);

    Cells tie_case{ vec({ 3 }), vec({ 1 }) };
    auto tie = ulv::build_difference_matrix(tie_case, controls, ulv::DifferenceMetric::MEAN_GREATER_INDICATOR);
    EXPECT_EQ(tie.values(0, 0), 0.5);
}

TEST(DifferenceMatrix, LogitUsesPairResolution) {
    Cells cases{ vec({ 10, 11 }), vec({ 1, 2 }) };
    Cells controls{ vec({ 1, 2 }), vec({ 1, 2 }) };
    auto D = ulv::build_difference_matrix(cases, controls, ulv::DifferenceMetric::LOGIT_PI);
    EXPECT_NEAR(D.values(0, 0), std::log(7.0), 1e-12); // clamp to 1 - 1/8
    EXPECT_NEAR(D.values(1, 0), 0, 1e-12);
    EXPECT_EQ(D.null_center, 0);
}

TEST(DifferenceMatrix, Errors) {
    Cells one{ vec({ 1 }) };
    Cells two{ vec({ 1 }), vec({ 2 }) };
    EXPECT_THROW(ulv::build_difference_matrix(one, two, ulv::DifferenceMetric::PI), std::invalid_argument);
    EXPECT_THROW(ulv::build_difference_matrix(two, one, ulv::DifferenceMetric::PI), std::invalid_argument);

    Cells empty_cells{ vec({ 1 }), Eigen::VectorXd() };
    try {
        ulv::build_difference_matrix(empty_cells, two, ulv::DifferenceMetric::MEAN_DIFF);
        FAIL();
    } catch (std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("0 cells"), std::string::npos);
    }
    EXPECT_THROW(ulv::build_difference_matrix(two, two, ulv::DifferenceMetric::PI, { "a" }), std::invalid_argument);
}

TEST(DifferenceMatrix, SwapAndSeparabilityProperties) {
    std::mt19937_64 rng(3);
    for (int it = 0; it < 50; ++it) {
        auto cases = random_subjects(rng, 4);
        auto controls = random_subjects(rng, 3);

        auto pi = ulv::build_difference_matrix(cases, controls, ulv::DifferenceMetric::PI);
        auto pi_swapped = ulv::build_difference_matrix(controls, cases, ulv::DifferenceMetric::PI);
        EXPECT_TRUE(((pi.values + pi_swapped.values.transpose()).array() == 1).all());

        auto mean = ulv::build_difference_matrix(cases, controls, ulv::DifferenceMetric::MEAN_DIFF);
        auto mean_swapped = ulv::build_difference_matrix(controls, cases, ulv::DifferenceMetric::MEAN_DIFF);
        EXPECT_TRUE(((mean.values + mean_swapped.values.transpose()).array() == 0).all());

        // Column contrasts are the same for every row.
        for (int i = 1; i < 4; ++i) {
            for (int j = 1; j < 3; ++j) {
                EXPECT_NEAR(mean.values(i, j) - mean.values(i, 0), mean.values(0, j) - mean.values(0, 0), 1e-9);
            }
        }
    }
}

TEST(DifferenceMetric, Names) {
    for (auto m : { ulv::DifferenceMetric::PI, ulv::DifferenceMetric::LOGIT_PI, ulv::DifferenceMetric::MEAN_DIFF,
                    ulv::DifferenceMetric::MEDIAN_DIFF, ulv::DifferenceMetric::MEAN_GREATER_INDICATOR }) {
        EXPECT_EQ(ulv::parse_metric(ulv::to_string(m)), m);
    }
    EXPECT_THROW(ulv::parse_metric("auc"), std::invalid_argument);
    EXPECT_TRUE(ulv::is_separable(ulv::DifferenceMetric::MEDIAN_DIFF));
    EXPECT_FALSE(ulv::is_separable(ulv::DifferenceMetric::PI));
}
