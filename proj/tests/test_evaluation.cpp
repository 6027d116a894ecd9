// SPDX-License-Identifier: Apache-2.0
#include "arbfree/evaluation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "arbfree/checkpoint.hpp"
#include "arbfree/synth.hpp"

namespace arbfree {
namespace {

DensePanel two_by_two_panel() {
    DensePanel p;
    p.grid = TenorGrid::standard12();
    p.currencies = {"AAA", "BBB"};
    p.dates = {{"2020-01-06", "2020-01-07"}, {"2020-01-06", "2020-01-07"}};
    p.rates = {std::vector<double>(24, 0.02), std::vector<double>(24, 0.03)};
    return p;
}

TEST(Rmse, PerfectPrediction) {
    auto panel = two_by_two_panel();
    PredPanel pred = panel.rates;
    for (auto axis : {RmseAxis::Daily, RmseAxis::Tenor, RmseAxis::Currency}) {
        auto s = rmse(panel, pred, axis);
        for (double v : s.values) EXPECT_DOUBLE_EQ(v, 0.0);
    }
}

TEST(Rmse, ConstantOneBpError) {
    auto panel = two_by_two_panel();
    PredPanel pred = panel.rates;
    for (auto& block : pred)
        for (auto& v : block) v += 1e-4;
    for (auto axis : {RmseAxis::Daily, RmseAxis::Tenor, RmseAxis::Currency}) {
        auto s = rmse(panel, pred, axis);
        for (double v : s.values) EXPECT_NEAR(v, 1.0, 1e-10);
    }
}

TEST(Rmse, HandComputedFixture) {
    DensePanel p;
    p.grid = TenorGrid({1.0, 2.0}, {"1Y", "2Y"});
    p.currencies = {"AAA", "BBB"};
    p.dates = {{"2020-01-06", "2020-01-07"}, {"2020-01-06", "2020-01-07"}};
    p.rates = {{0.01, 0.02, 0.01, 0.02}, {0.03, 0.04, 0.03, 0.04}};
    PredPanel pred = p.rates;
    pred[0][0] += 2e-4;  // AAA day1 1Y: +2bp
    pred[1][3] += 4e-4;  // BBB day2 2Y: +4bp
    auto tenor = rmse(p, pred, RmseAxis::Tenor);
    EXPECT_NEAR(tenor.values[0], std::sqrt((2.0 * 2.0) / 4.0), 1e-12);
    EXPECT_NEAR(tenor.values[1], std::sqrt((4.0 * 4.0) / 4.0), 1e-12);
    auto daily = rmse(p, pred, RmseAxis::Daily);
    EXPECT_NEAR(daily.values[0], std::sqrt(4.0 / 4.0), 1e-12);
    EXPECT_NEAR(daily.values[1], std::sqrt(16.0 / 4.0), 1e-12);
    auto ccy = rmse(p, pred, RmseAxis::Currency);
    EXPECT_NEAR(ccy.values[0], std::sqrt(4.0 / 4.0), 1e-12);
    EXPECT_NEAR(ccy.values[1], std::sqrt(16.0 / 4.0), 1e-12);
    PredPanel bad = pred;
    bad[0].pop_back();
    EXPECT_THROW(rmse(p, bad, RmseAxis::Tenor), std::invalid_argument);
}

TEST(Rmse, SymmetricAndTriangleBound) {
    auto panel = two_by_two_panel();
    Rng rng(5);
    PredPanel a = panel.rates, b = panel.rates;
    for (auto& block : a)
        for (auto& v : block) v += 1e-3 * rng.normal();
    for (auto& block : b)
        for (auto& v : block) v += 1e-3 * rng.normal();
    DensePanel pa = panel;
    pa.rates = a;
    auto ab = rmse(pa, b, RmseAxis::Tenor);
    DensePanel pb = panel;
    pb.rates = b;
    auto ba = rmse(pb, a, RmseAxis::Tenor);
    auto at = rmse(panel, a, RmseAxis::Tenor);
    auto bt = rmse(panel, b, RmseAxis::Tenor);
    for (size_t k = 0; k < ab.values.size(); ++k) {
        EXPECT_NEAR(ab.values[k], ba.values[k], 1e-12);
        EXPECT_LE(at.values[k], ab.values[k] + bt.values[k] + 1e-12);
    }
}

TEST(Ablation, ZeroForPerfectModelAndExactMeans) {
    auto panel = two_by_two_panel();
    PredPanel perfect = panel.rates;
    PredPanel noisy = panel.rates;
    Rng rng(3);
    for (auto& block : noisy)
        for (auto& v : block) v += 5e-4 * rng.normal();
    auto table = ablation_table({"perfect", "noisy"}, {perfect, noisy}, panel);
    for (size_t k = 0; k < panel.grid.size(); ++k)
        EXPECT_DOUBLE_EQ(table.cells[k][0], 0.0);
    // grand means equal the mean of their label rows exactly
    double acc = 0.0;
    for (size_t k = 0; k < panel.grid.size(); ++k) acc += table.cells[k][1];
    EXPECT_NEAR(table.cell("Mean (All Tenors)", "noisy"), acc / 12.0, 1e-12);
    double acc2 = 0.0;
    acc2 += table.cell("AAA", "noisy");
    acc2 += table.cell("BBB", "noisy");
    EXPECT_NEAR(table.cell("Mean (All Currencies)", "noisy"), acc2 / 2.0, 1e-12);
    // renders carry every row
    auto csv = table.to_csv();
    EXPECT_NE(csv.find("Mean (All Tenors)"), std::string::npos);
    auto text = table.to_text();
    EXPECT_NE(text.find("noisy"), std::string::npos);
}

TEST(PdeProfile, VasicekStubFlatZero) {
    // analytic decoder stand-in through the BondMap interface
    VasicekBondMap map(0.8, 0.03, 0.01);
    std::vector<double> z{0.02};
    auto f = map.fields_at(z);
    TenorGrid grid = TenorGrid::standard12();
    for (size_t k = 0; k < grid.size(); ++k)
        EXPECT_LT(std::abs(pde_residual(map, f, z, grid.tenors[k])), 1e-8);
}

TEST(SplitPanel, ChronologicalPerCurrency) {
    SynthSpec spec;
    spec.days = 50;
    CurrencySpec c;
    c.name = "USD";
    c.base = NssParams{0.03, -0.01, 0.004, 0.0, 1.8, 8.0};
    c.vol = {3e-4, 2e-4, 1e-4, 1e-4};
    spec.currencies.push_back(c);
    auto res = synth_panel(spec, 3);
    auto dense = truncate_and_densify(res.panel, TruncationConfig{10, 0.9, 0.9});
    auto [train, oos] = split_panel(dense, 0.2);
    EXPECT_EQ(train.rows(0) + oos.rows(0), dense.rows(0));
    EXPECT_EQ(oos.rows(0), dense.rows(0) - static_cast<size_t>(std::ceil(dense.rows(0) * 0.8)));
    EXPECT_LT(train.dates[0].back(), oos.dates[0].front());
}

TEST(Exports, LatentCsvShapeAndDeterminism) {
    SynthSpec spec;
    spec.days = 30;
    CurrencySpec c;
    c.name = "USD";
    c.base = NssParams{0.03, -0.01, 0.004, 0.0, 1.8, 8.0};
    c.vol = {3e-4, 2e-4, 1e-4, 1e-4};
    spec.currencies.push_back(c);
    auto res = synth_panel(spec, 4);
    auto dense = truncate_and_densify(res.panel, TruncationConfig{5, 0.9, 0.9});
    ManifoldConfig mc;
    mc.latent_dim = 2;
    mc.embed_dim = 2;
    mc.encoder_widths = {8, 8};
    mc.decoder_widths = {8, 8};
    mc.epochs = 2;
    mc.batch_size = 8;
    mc.seed = 5;
    auto m = train_manifold(mc, dense);
    auto csv1 = latents_csv(m.model, dense);
    auto csv2 = latents_csv(m.model, dense);
    EXPECT_EQ(csv1, csv2);
    size_t lines = static_cast<size_t>(std::count(csv1.begin(), csv1.end(), '\n'));
    EXPECT_EQ(lines, dense.total_rows() + 1);

    // latent columns reproduce encode() outputs
    auto paths = encode_panel(m.model, dense);
    std::istringstream is(csv1);
    std::string line;
    std::getline(is, line);  // header
    std::getline(is, line);
    auto cells = detail::split_csv_line(line);
    EXPECT_EQ(cells[0], paths[0].dates[0]);
    EXPECT_NEAR(std::stod(cells[2]), paths[0].z[0], 1e-15);
    EXPECT_NEAR(std::stod(cells[3]), paths[0].z[1], 1e-15);
}

TEST(ReportBundle, DigestsAreContentHashes) {
    auto dir = std::filesystem::temp_directory_path() / "arbfree_report_test";
    ReportBundle bundle(dir.string());
    bundle.write("a.csv", "x,y\n1,2\n");
    bundle.finalize(42, "deadbeef");
    EXPECT_EQ(bundle.digests().at("a.csv"), to_hex(fnv1a64("x,y\n1,2\n")));
    auto manifest = detail::read_json_file((dir / "manifest.json").string());
    EXPECT_EQ(manifest.at("seed").get<uint64_t>(), 42u);
    EXPECT_EQ(manifest.at("digests").at("a.csv").get<std::string>(),
              to_hex(fnv1a64("x,y\n1,2\n")));
    std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace arbfree
