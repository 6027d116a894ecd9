// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "arbfree/jsonutil.hpp"
#include "arbfree/util.hpp"

namespace arbfree {
namespace {

namespace fs = std::filesystem;

std::string cli_binary() {
    const char* env = std::getenv("ARBFREE_BIN");
    if (!env) throw std::runtime_error("ARBFREE_BIN not set");
    return env;
}

int run(const std::string& args) {
    std::string cmd = cli_binary() + " " + args + " >/dev/null 2>/dev/null";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

class CliPipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / "arbfree_cli_test";
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        json cfg = {
            {"seed", 11},
            {"generator",
             {{"start_date", "2019-01-07"},
              {"days", 90},
              {"currencies",
               {{{"name", "USD"},
                 {"base",
                  {{"beta0", 0.03}, {"beta1", -0.012}, {"beta2", 0.004}, {"beta3", -0.001},
                   {"lambda1", 1.8}, {"lambda2", 8.0}}},
                 {"vol", {4e-4, 3e-4, 2e-4, 1e-4}}},
                {{"name", "JPY"},
                 {"base",
                  {{"beta0", 0.004}, {"beta1", -0.0035}, {"beta2", 0.001}, {"beta3", 0.0},
                   {"lambda1", 1.5}, {"lambda2", 7.0}}},
                 {"vol", {2e-4, 2e-4, 1e-4, 1e-4}},
                 {"pinned", true}}}}}},
            {"truncation", {{"window", 20}, {"rho0", 0.9}, {"pi0", 0.9}}},
            {"manifold",
             {{"latent_dim", 2}, {"embed_dim", 4}, {"encoder_widths", {12, 12}},
              {"decoder_widths", {12, 12}}, {"epochs", 4}, {"batch_size", 16}, {"lr", 3e-3}}},
            {"dynamics",
             {{"widths", {10, 10}}, {"epochs", 3}, {"batch_size", 32},
              {"colloc_states", 6}, {"colloc_extra_taus", 2}}},
            {"evaluation",
             {{"oos_fraction", 0.2}, {"stress_horizon", 4}, {"stress_paths", 10},
              {"pca_components", 3}, {"ablation_variants", {"CVAEsT+LS"}}}}};
        std::ofstream os(dir_ / "cfg.json");
        os << cfg.dump(2);
    }

    static fs::path dir_;
};

fs::path CliPipeline::dir_;

TEST_F(CliPipeline, A_FullPipelineSucceeds) {
    auto d = dir_.string();
    ASSERT_EQ(run("synth --config " + d + "/cfg.json --out " + d + "/run"), 0);
    EXPECT_TRUE(fs::exists(dir_ / "run" / "panel.csv"));
    EXPECT_TRUE(fs::exists(dir_ / "run" / "truth.csv"));
    ASSERT_EQ(run("fit-manifold --config " + d + "/cfg.json --panel " + d +
                  "/run/panel.csv --out " + d + "/run"),
              0);
    EXPECT_TRUE(fs::exists(dir_ / "run" / "manifold.json"));
    EXPECT_TRUE(fs::exists(dir_ / "run" / "manifold_log.csv"));
    ASSERT_EQ(run("fit-dynamics --config " + d + "/cfg.json --panel " + d +
                  "/run/panel.csv --manifold " + d + "/run/manifold.json --out " + d + "/run"),
              0);
    ASSERT_EQ(run("evaluate --config " + d + "/cfg.json --panel " + d +
                  "/run/panel.csv --manifold " + d + "/run/manifold.json --dynamics " + d +
                  "/run/dynamics.json --out " + d + "/run"),
              0);
    for (const char* f :
         {"ablation.csv", "latents.csv", "pde_profile.csv", "manifest.json",
          "stress_proposed.csv", "stress_hjm3.csv", "stress_pca_var.csv"})
        EXPECT_TRUE(fs::exists(dir_ / "run" / "report" / f)) << f;
}

TEST_F(CliPipeline, B_RerunIsByteIdentical) {
    auto d = dir_.string();
    ASSERT_EQ(run("evaluate --config " + d + "/cfg.json --panel " + d +
                  "/run/panel.csv --manifold " + d + "/run/manifold.json --dynamics " + d +
                  "/run/dynamics.json --out " + d + "/rerun"),
              0);
    EXPECT_EQ(slurp(dir_ / "run" / "report" / "manifest.json"),
              slurp(dir_ / "rerun" / "report" / "manifest.json"));
    // synth rerun reproduces the panel bytes
    ASSERT_EQ(run("synth --config " + d + "/cfg.json --out " + d + "/resynth"), 0);
    EXPECT_EQ(slurp(dir_ / "run" / "panel.csv"), slurp(dir_ / "resynth" / "panel.csv"));
}

TEST_F(CliPipeline, C_SimulateHorizonZeroEqualsReconstruction) {
    auto d = dir_.string();
    // find an in-panel date for USD from the latents export
    std::string latents = slurp(dir_ / "run" / "report" / "latents.csv");
    std::string date;
    size_t pos = latents.find("\n") + 1;
    while (pos < latents.size()) {
        size_t eol = latents.find('\n', pos);
        std::string line = latents.substr(pos, eol - pos);
        if (line.find(",USD,") != std::string::npos) {
            date = line.substr(0, line.find(','));
            break;
        }
        pos = eol + 1;
    }
    ASSERT_FALSE(date.empty());
    ASSERT_EQ(run("simulate --config " + d + "/cfg.json --panel " + d +
                  "/run/panel.csv --manifold " + d + "/run/manifold.json --dynamics " + d +
                  "/run/dynamics.json --start-date " + date +
                  " --currency USD --horizon 0 --n-paths 3 --measure q --out " + d + "/sim0"),
              0);
    std::string csv = slurp(dir_ / "sim0" / "paths.csv");
    // three identical day-0 rows
    size_t first = csv.find('\n') + 1;
    size_t second = csv.find('\n', first) + 1;
    size_t third = csv.find('\n', second) + 1;
    std::string row0 = csv.substr(first + 2, second - first - 2);
    std::string row1 = csv.substr(second + 2, third - second - 2);
    EXPECT_EQ(row0, row1);
}

TEST_F(CliPipeline, D_ExitCodes) {
    auto d = dir_.string();
    EXPECT_EQ(run("synth --config " + d + "/nonexistent.json --out " + d + "/x"), 2);
    {
        std::ofstream os(dir_ / "bad.json");
        os << "{\"seed\": 1, \"bogus\": true}";
    }
    EXPECT_EQ(run("synth --config " + d + "/bad.json --out " + d + "/x"), 4);
    // different seed changes the config hash -> lineage refusal
    EXPECT_EQ(run("evaluate --config " + d + "/cfg.json --seed 999 --panel " + d +
                  "/run/panel.csv --manifold " + d + "/run/manifold.json --out " + d + "/x"),
              3);
}

TEST_F(CliPipeline, E_BenchWritesAblation) {
    auto d = dir_.string();
    ASSERT_EQ(run("bench --config " + d + "/cfg.json --panel " + d + "/run/panel.csv --out " +
                  d + "/bench"),
              0);
    std::string csv = slurp(dir_ / "bench" / "report" / "ablation.csv");
    EXPECT_NE(csv.find("CVAEsT+LS"), std::string::npos);
    EXPECT_NE(csv.find("PCA+VAR"), std::string::npos);
    EXPECT_NE(csv.find("Mean (All Tenors)"), std::string::npos);
}

}  // namespace
}  // namespace arbfree
