#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int status = 0;
    std::string output;
};

/// Runs the CLI with stdout and stderr merged.
Outcome run_cli(const std::string& args) {
    const std::string command = std::string("\"") + ULV_CLI_PATH + "\" " + args + " 2>&1";
    Outcome out;
    FILE* pipe = popen(command.c_str(), "r");
    std::array<char, 4096> buffer;
    while (fgets(buffer.data(), buffer.size(), pipe)) {
        out.output += buffer.data();
    }
    const int raw = pclose(pipe);
    out.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return out;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::vector<std::vector<std::string>> read_table(const fs::path& path) {
    std::ifstream in(path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) {
            fields.push_back(field);
        }
        rows.push_back(fields);
    }
    return rows;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("ulv-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }

    void TearDown() override {
        fs::remove_all(dir);
    }

    std::string path(const std::string& name) const {
        return "\"" + (dir / name).string() + "\"";
    }

    /// Small two-condition dataset written under the prefix "sim".
    void simulate_small(const std::string& extra = "") {
        auto out = run_cli("simulate --cases 3 --controls 3 --cells 30 --genes 20 --de-genes 5 --fold-change 2 --seed 9 --out " + path("sim") + " " + extra);
        ASSERT_EQ(out.status, 0) << out.output;
    }

    std::string inputs() const {
        return " --counts " + path("sim.counts.tsv") + " --metadata " + path("sim.metadata.tsv");
    }

    fs::path dir;
};

}

TEST_F(Cli, TestDispatchLabels) {
    simulate_small();
    auto method_of = [&](const std::string& flags) -> std::string {
        auto out = run_cli("test" + inputs() + " " + flags + " --out " + path("res.tsv"));
        EXPECT_EQ(out.status, 0) << out.output;
        auto rows = read_table(dir / "res.tsv");
        EXPECT_EQ(rows.size(), 21u);
        EXPECT_EQ(rows[0][7], "method");
        return rows[1][7];
    };
    EXPECT_EQ(method_of(""), "ulv-closed-form");
    EXPECT_EQ(method_of("--covariates x"), "ulv-adj");
    EXPECT_EQ(method_of("--weighted"), "ulv-wt");
    EXPECT_TRUE(fs::exists(dir / "res.tsv.config"));
    EXPECT_NE(slurp(dir / "res.tsv.config").find("weighted=true"), std::string::npos);
}

TEST_F(Cli, UnknownCovariateListsColumns) {
    simulate_small();
    auto out = run_cli("test" + inputs() + " --covariates age,gender --out " + path("res.tsv"));
    EXPECT_NE(out.status, 0);
    EXPECT_NE(out.output.find("error: unknown covariate 'age'; available columns: x"), std::string::npos) << out.output;
}

TEST_F(Cli, InvalidInputsFail) {
    simulate_small();
    EXPECT_NE(run_cli("test --counts " + path("missing.tsv") + " --metadata " + path("sim.metadata.tsv") + " --out " + path("r.tsv")).status, 0);
    EXPECT_NE(run_cli("test" + inputs() + " --metric auc --out " + path("r.tsv")).status, 0);
    EXPECT_NE(run_cli("test" + inputs() + " --pi-band 0.6,0.4 --out " + path("r.tsv")).status, 0);
    EXPECT_NE(run_cli("test" + inputs() + " --metric mean --transform logit --out " + path("r.tsv")).status, 0);
    EXPECT_NE(run_cli("simulate --preset fig9 --out " + path("x")).status, 0);
    EXPECT_NE(run_cli("bogus").status, 0);
}

TEST_F(Cli, MetricsAndBand) {
    simulate_small();
    auto out = run_cli("test" + inputs() + " --metric logit-pi --fdr 0.2 --pi-band 0.4,0.6 --out " + path("res.tsv"));
    ASSERT_EQ(out.status, 0) << out.output;
    auto rows = read_table(dir / "res.tsv");
    for (size_t r = 1; r < rows.size(); ++r) {
        EXPECT_EQ(rows[r][8], "logit-pi");
        const double effect = std::stod(rows[r][1]);
        EXPECT_GT(effect, 0);
        EXPECT_LT(effect, 1);
        if (rows[r][6] == "true") {
            EXPECT_TRUE(effect < 0.4 || effect > 0.6);
            EXPECT_LT(std::stod(rows[r][5]), 0.2);
        }
    }

    out = run_cli("test" + inputs() + " --metric mean --normal-approx --out " + path("mean.tsv"));
    ASSERT_EQ(out.status, 0) << out.output;
    EXPECT_EQ(read_table(dir / "mean.tsv")[1][8], "mean");
}

TEST_F(Cli, Presets) {
    auto out = run_cli("simulate --preset fig3-null --genes 10 --seed 3 --out " + path("null"));
    ASSERT_EQ(out.status, 0) << out.output;
    auto meta = read_table(dir / "null.metadata.tsv");
    EXPECT_EQ(meta.size(), 1u + 10 * 100);
    auto counts = read_table(dir / "null.counts.tsv");
    EXPECT_EQ(counts.size(), 11u);
    EXPECT_EQ(counts[0].size(), 1u + 1000);
    for (size_t r = 1; r < read_table(dir / "null.truth.tsv").size(); ++r) {
        EXPECT_EQ(read_table(dir / "null.truth.tsv")[r][1], "false");
    }

    out = run_cli("simulate --preset fig3-power-r2 --cells 20 --seed 3 --out " + path("power"));
    ASSERT_EQ(out.status, 0) << out.output;
    auto truth = read_table(dir / "power.truth.tsv");
    ASSERT_EQ(truth.size(), 1001u);
    int de = 0;
    for (size_t r = 1; r < truth.size(); ++r) {
        de += truth[r][1] == "true";
    }
    const auto config = slurp(dir / "power.counts.tsv.config");
    ASSERT_NE(config.find("skipped_genes=\n"), std::string::npos);
    EXPECT_EQ(de, 500);
    EXPECT_NE(config.find("fold_change=2"), std::string::npos);
    EXPECT_NE(config.find("cells_per_subject=20,20"), std::string::npos);
}

TEST_F(Cli, SimulateSeedDeterminism) {
    for (const auto* prefix : { "a", "b" }) {
        ASSERT_EQ(run_cli("simulate --genes 15 --cells-range 10,40 --seed 11 --format mtx --out " + path(prefix)).status, 0);
    }
    EXPECT_EQ(slurp(dir / "a.counts.mtx"), slurp(dir / "b.counts.mtx"));
    EXPECT_EQ(slurp(dir / "a.metadata.tsv"), slurp(dir / "b.metadata.tsv"));
    ASSERT_EQ(run_cli("simulate --genes 15 --cells-range 10,40 --seed 12 --format mtx --out " + path("c")).status, 0);
    EXPECT_NE(slurp(dir / "a.counts.mtx"), slurp(dir / "c.counts.mtx"));

    auto out = run_cli("test --counts " + path("a.counts.mtx") + " --format mtx --metadata " + path("a.metadata.tsv") + " --out " + path("a.res"));
    EXPECT_EQ(out.status, 0) << out.output;
}

TEST_F(Cli, CalibrateShape) {
    auto out = run_cli("calibrate --genes 20 --cells 20 --replicates 2 --methods ulv,wilcoxon-sc --seed 4 --svg " + path("cal.svg") + " --out " + path("cal.tsv"));
    ASSERT_EQ(out.status, 0) << out.output;
    auto rows = read_table(dir / "cal.tsv");
    EXPECT_EQ(rows.size(), 1u + 2 * 2 * 4);
    EXPECT_EQ(rows[0], (std::vector<std::string>{ "method", "alpha", "replicate", "rejection_rate", "power" }));
    EXPECT_TRUE(fs::exists(dir / "cal.svg"));
    EXPECT_TRUE(fs::exists(dir / "cal.tsv.config"));
}

TEST_F(Cli, PermuteExhaustiveAndSeeded) {
    simulate_small();
    auto out = run_cli("permute" + inputs() + " --permutations 5 --seed 8 --out " + path("p1.tsv"));
    ASSERT_EQ(out.status, 0) << out.output;
    EXPECT_EQ(out.output.find("notice"), std::string::npos);
    ASSERT_EQ(run_cli("permute" + inputs() + " --permutations 5 --seed 8 --out " + path("p2.tsv")).status, 0);
    EXPECT_EQ(slurp(dir / "p1.tsv.sets"), slurp(dir / "p2.tsv.sets"));
    EXPECT_EQ(slurp(dir / "p1.tsv"), slurp(dir / "p2.tsv"));
    EXPECT_EQ(read_table(dir / "p1.tsv.sets").size(), 6u);

    // One case and one control per group: 3 * 3 = 9 assignments.
    out = run_cli("permute" + inputs() + " --permutations 100 --composition case=1,control=1 --out " + path("all.tsv"));
    ASSERT_EQ(out.status, 0) << out.output;
    EXPECT_NE(out.output.find("notice: requested 100 permutations but only 9"), std::string::npos) << out.output;
    EXPECT_EQ(read_table(dir / "all.tsv.sets").size(), 10u);
}

TEST_F(Cli, Normalize) {
    simulate_small();
    auto out = run_cli("normalize --counts " + path("sim.counts.tsv") + " --out " + path("clr.tsv"));
    ASSERT_EQ(out.status, 0) << out.output;
    auto rows = read_table(dir / "clr.tsv");
    ASSERT_EQ(rows.size(), 21u);
    double column_sum = 0;
    for (size_t r = 1; r < rows.size(); ++r) {
        column_sum += std::stod(rows[r][1]);
    }
    EXPECT_NEAR(column_sum, 0, 1e-9);

    out = run_cli("test --counts " + path("clr.tsv") + " --normalized --metadata " + path("sim.metadata.tsv") + " --out " + path("res.tsv"));
    EXPECT_EQ(out.status, 0) << out.output;
}
