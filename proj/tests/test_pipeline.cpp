// SPDX-License-Identifier: Apache-2.0
#include "arbfree/pipeline.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "arbfree/synth.hpp"

namespace arbfree {
namespace {

CurvePanel panel_from_mask_pattern(const std::vector<std::vector<int>>& per_ccy_obs,
                                   double fill = 0.02) {
    // per_ccy_obs[c][d] = number of observed tenors on that day (0..12)
    size_t n_days = per_ccy_obs.at(0).size();
    std::vector<std::string> dates = business_days("2020-01-06", static_cast<int>(n_days));
    std::vector<std::string> ccys;
    for (size_t c = 0; c < per_ccy_obs.size(); ++c) ccys.push_back("C" + std::to_string(c));
    CurvePanel p = CurvePanel::empty(TenorGrid::standard12(), dates, ccys);
    for (size_t c = 0; c < per_ccy_obs.size(); ++c)
        for (size_t d = 0; d < n_days; ++d)
            for (int k = 0; k < per_ccy_obs[c][d]; ++k) {
                p.rates[p.idx(d, c, static_cast<size_t>(k))] =
                    fill + 1e-4 * static_cast<double>(k);
                p.mask[p.idx(d, c, static_cast<size_t>(k))] = 1;
            }
    return p;
}

TEST(Completeness, Ratios) {
    auto p = panel_from_mask_pattern({{12, 6, 0}});
    EXPECT_DOUBLE_EQ(completeness_ratio(p, "C0", p.dates[0]), 1.0);
    EXPECT_DOUBLE_EQ(completeness_ratio(p, "C0", p.dates[1]), 0.5);
    EXPECT_DOUBLE_EQ(completeness_ratio(p, "C0", p.dates[2]), 0.0);
    EXPECT_THROW(completeness_ratio(p, "XXX", p.dates[0]), std::out_of_range);
    EXPECT_THROW(completeness_ratio(p, "C0", "1999-01-01"), std::out_of_range);
}

TEST(StableStart, FullyCompleteHistory) {
    auto p = panel_from_mask_pattern({{12, 12, 12, 12, 12}});
    TruncationConfig cfg{3, 1.0, 1.0};
    auto s = stable_start_date(p, "C0", cfg);
    ASSERT_TRUE(s.has_value());
    EXPECT_EQ(*s, p.dates[0]);
}

TEST(StableStart, HandEnumeratedWindow) {
    // rho pattern 0,0,0,1,1,1,1 with W=3, rho0=1, pi0=1 -> 4th date
    auto p = panel_from_mask_pattern({{0, 0, 0, 12, 12, 12, 12}});
    TruncationConfig cfg{3, 1.0, 1.0};
    auto s = stable_start_date(p, "C0", cfg);
    ASSERT_TRUE(s.has_value());
    EXPECT_EQ(*s, p.dates[3]);
}

TEST(StableStart, NoQualifyingWindow) {
    auto p = panel_from_mask_pattern({{0, 0, 12, 0, 0, 0, 0, 0}});
    TruncationConfig cfg{5, 0.9, 0.9};
    EXPECT_FALSE(stable_start_date(p, "C0", cfg).has_value());
}

TEST(StableStart, MonotoneInStrictness) {
    Rng rng(99);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<int> obs(40);
        for (auto& o : obs) o = static_cast<int>(rng.next_u64() % 13);
        auto p = panel_from_mask_pattern({obs});
        TruncationConfig base{5, 0.5 + 0.3 * rng.uniform(), 0.5 + 0.3 * rng.uniform()};
        TruncationConfig stricter_rho = base;
        stricter_rho.rho0 = std::min(1.0, base.rho0 + 0.2);
        TruncationConfig stricter_pi = base;
        stricter_pi.pi0 = std::min(1.0, base.pi0 + 0.2);
        auto s0 = stable_start_date(p, "C0", base);
        for (const auto& cfg : {stricter_rho, stricter_pi}) {
            auto s1 = stable_start_date(p, "C0", cfg);
            if (s1.has_value()) {
                ASSERT_TRUE(s0.has_value());
                EXPECT_LE(*s0, *s1);
            }
        }
    }
}

TEST(Truncate, FullyCompleteUnchanged) {
    auto p = panel_from_mask_pattern({{12, 12, 12, 12}});
    TruncationConfig cfg{2, 0.9, 0.9};
    auto dense = truncate_and_densify(p, cfg);
    ASSERT_EQ(dense.n_currencies(), 1u);
    EXPECT_EQ(dense.rows(0), 4u);
    for (size_t r = 0; r < dense.rows(0); ++r)
        for (size_t k = 0; k < dense.grid.size(); ++k)
            EXPECT_TRUE(std::isfinite(dense.row(0, r)[k]));
}

TEST(Truncate, StartsAtStableStart) {
    auto p = panel_from_mask_pattern({{3, 2, 0, 12, 12, 12, 12, 12}});
    TruncationConfig cfg{3, 1.0, 1.0};
    auto start = stable_start_date(p, "C0", cfg);
    TruncationReport rep;
    auto dense = truncate_and_densify(p, cfg, &rep);
    ASSERT_TRUE(start.has_value());
    EXPECT_EQ(dense.dates[0].front(), *start);
    EXPECT_EQ(dense.rows(0), 5u);
}

TEST(Truncate, IsolatedMissingRowRemoved) {
    auto p = panel_from_mask_pattern({{12, 12, 11, 12, 12}});
    TruncationConfig cfg{2, 0.5, 0.5};
    TruncationReport rep;
    auto dense = truncate_and_densify(p, cfg, &rep);
    EXPECT_EQ(dense.rows(0), 4u);
    for (const auto& d : dense.dates[0]) EXPECT_NE(d, p.dates[2]);
    EXPECT_EQ(rep.dropped_rows.at(0), 1u);
}

TEST(Truncate, CurrencyWithoutStartExcludedWithWarning) {
    auto p = panel_from_mask_pattern({{12, 12, 12, 12}, {0, 0, 0, 0}});
    TruncationConfig cfg{2, 0.9, 0.9};
    TruncationReport rep;
    auto dense = truncate_and_densify(p, cfg, &rep);
    EXPECT_EQ(dense.n_currencies(), 1u);
    ASSERT_EQ(rep.warnings.size(), 1u);
    EXPECT_NE(rep.warnings[0].find("no_stable_start"), std::string::npos);
    EXPECT_NE(rep.warnings[0].find("C1"), std::string::npos);
}

DensePanel small_dense_panel() {
    SynthSpec spec;
    spec.days = 30;
    CurrencySpec c;
    c.name = "USD";
    c.base = NssParams{0.03, -0.01, 0.005, 0.0, 1.8, 8.0};
    c.vol = {2e-4, 2e-4, 1e-4, 1e-4};
    spec.currencies.push_back(c);
    auto res = synth_panel(spec, 123);
    return truncate_and_densify(res.panel, TruncationConfig{5, 0.9, 0.9});
}

TEST(Decompose, FlatCurve) {
    DensePanel p;
    p.grid = TenorGrid::standard12();
    p.currencies = {"AAA"};
    p.dates = {{"2020-01-06"}};
    p.rates = {std::vector<double>(12, 0.03)};
    auto recs = decompose(p);
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_DOUBLE_EQ(recs[0].level, 0.03);
    for (double s : recs[0].shape) EXPECT_DOUBLE_EQ(s, 0.0);
}

TEST(Decompose, KnownSpreadVector) {
    DensePanel p;
    p.grid = TenorGrid::standard12();
    p.currencies = {"AAA"};
    p.dates = {{"2020-01-06"}};
    std::vector<double> spread{-0.004, -0.003, -0.002, -0.001, 0.0, 0.001,
                               0.003,  0.004,  0.005,  0.006,  0.007, 0.008};
    std::vector<double> row(12);
    for (size_t k = 0; k < 12; ++k) row[k] = 0.025 + spread[k];
    p.rates = {row};
    auto recs = decompose(p);
    EXPECT_DOUBLE_EQ(recs[0].level, 0.025);
    for (size_t k = 0; k < 12; ++k) EXPECT_DOUBLE_EQ(recs[0].shape[k], spread[k]);
    int anchor = p.grid.index_of("1Y");
    EXPECT_DOUBLE_EQ(recs[0].shape[static_cast<size_t>(anchor)], 0.0);
}

TEST(Decompose, RecomposeBitwise) {
    auto dense = small_dense_panel();
    auto recs = decompose(dense);
    size_t i = 0;
    for (size_t c = 0; c < dense.n_currencies(); ++c)
        for (size_t r = 0; r < dense.rows(c); ++r, ++i) {
            auto row = recompose(recs[i]);
            for (size_t k = 0; k < dense.grid.size(); ++k)
                EXPECT_EQ(row[k], dense.row(c, r)[k]);  // bit-for-bit
        }
}

TEST(Decompose, MissingAnchorIsConfigError) {
    DensePanel p;
    p.grid = TenorGrid({1.0, 2.0}, {"12M", "2Y"});
    p.currencies = {"AAA"};
    p.dates = {{"2020-01-06"}};
    p.rates = {{0.01, 0.02}};
    EXPECT_THROW(decompose(p), ConfigError);
}

TEST(Scaler, HandQuartiles) {
    std::vector<std::vector<double>> rows{{1.0}, {2.0}, {3.0}, {4.0}, {5.0}};
    auto s = RobustScaler::fit(rows);
    EXPECT_DOUBLE_EQ(s.median[0], 3.0);
    EXPECT_DOUBLE_EQ(s.iqr[0], 2.0);  // Q1=2, Q3=4 by linear interpolation
    std::vector<double> x{5.0};
    EXPECT_DOUBLE_EQ(s.transform(x)[0], 1.0);
}

TEST(Scaler, ConstantColumnScalesToZero) {
    std::vector<std::vector<double>> rows{{7.5, 1.0}, {7.5, 2.0}, {7.5, 3.0}};
    auto s = RobustScaler::fit(rows);
    EXPECT_DOUBLE_EQ(s.iqr[0], 1.0);
    std::vector<double> x{7.5, 2.0};
    EXPECT_DOUBLE_EQ(s.transform(x)[0], 0.0);
}

TEST(Scaler, InverseRoundTrip) {
    Rng rng(5);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 50; ++i)
        rows.push_back({rng.normal(), 10.0 * rng.normal(), 1e-3 * rng.normal()});
    auto s = RobustScaler::fit(rows);
    for (const auto& row : rows) {
        auto z = s.transform(row);
        auto back = s.inverse(z);
        for (size_t j = 0; j < row.size(); ++j) EXPECT_NEAR(back[j], row[j], 1e-12);
    }
    EXPECT_THROW(RobustScaler::fit({{1.0}}), DataError);
}

TEST(Pca, RankOne) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 10; ++i) {
        double t = static_cast<double>(i);
        rows.push_back({t, 2.0 * t, -t});
    }
    auto res = pca_diagnostic(rows);
    EXPECT_NEAR(res.ratios[0], 1.0, 1e-12);
    EXPECT_NEAR(res.ratios[1], 0.0, 1e-12);
    double sum = 0.0;
    for (double r : res.ratios) sum += r;
    EXPECT_LE(sum, 1.0 + 1e-10);
}

TEST(Pca, IsotropicGaussianSplitsEvenly) {
    Rng rng(2024);
    std::vector<std::vector<double>> rows;
    rows.reserve(100000);
    for (int i = 0; i < 100000; ++i) rows.push_back({rng.normal(), rng.normal()});
    auto res = pca_diagnostic(rows);
    EXPECT_NEAR(res.ratios[0], 0.5, 0.02);
    EXPECT_NEAR(res.ratios[1], 0.5, 0.02);
}

TEST(Pca, SignConventionAndPermutationInvariance) {
    Rng rng(77);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 400; ++i) {
        double a = rng.normal(), b = 0.2 * rng.normal();
        rows.push_back({a + 0.1 * b, -a + b, 0.5 * a});
    }
    auto r1 = pca_diagnostic(rows);
    std::vector<std::vector<double>> shuffled = rows;
    Rng rng2(78);
    rng2.shuffle(shuffled);
    auto r2 = pca_diagnostic(shuffled);
    for (size_t k = 0; k < r1.ratios.size(); ++k) {
        EXPECT_NEAR(r1.ratios[k], r2.ratios[k], 1e-9);
        double mx = 0.0;
        size_t arg = 0;
        for (size_t j = 0; j < r1.components[k].size(); ++j)
            if (std::abs(r1.components[k][j]) > mx) {
                mx = std::abs(r1.components[k][j]);
                arg = j;
            }
        EXPECT_GT(r1.components[k][arg], 0.0);
    }
}

TEST(Pca, RankZeroIsError) {
    std::vector<std::vector<double>> rows{{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}};
    EXPECT_THROW(pca_diagnostic(rows), DataError);
}

TEST(Pca, SyntheticShapesLargelyTwoDimensional) {
    SynthSpec spec;
    spec.days = 400;
    for (int c = 0; c < 3; ++c) {
        CurrencySpec cs;
        cs.name = "C" + std::to_string(c);
        cs.base = NssParams{0.02 + 0.01 * c, -0.01, 0.004, -0.002, 1.5 + 0.3 * c, 8.0};
        cs.vol = {3e-4, 3e-4, 2e-4, 1e-4};
        spec.currencies.push_back(cs);
    }
    auto res = synth_panel(spec, 31);
    auto dense = truncate_and_densify(res.panel, TruncationConfig{10, 0.9, 0.9});
    auto recs = decompose(dense);
    auto scaler = fit_input_scaler(recs);
    std::vector<std::vector<double>> shapes;
    for (const auto& r : recs) {
        auto x = model_input(r, scaler);
        shapes.push_back(std::vector<double>(x.begin(), x.begin() + 12));
    }
    auto pca = pca_diagnostic(shapes);
    EXPECT_GT(pca.ratios[0] + pca.ratios[1], 0.9);
}

TEST(Synth, ZeroVolConstantCurves) {
    SynthSpec spec;
    spec.days = 10;
    CurrencySpec c;
    c.name = "USD";
    c.base = NssParams{0.03, -0.01, 0.0, 0.0, 2.0, 8.0};
    spec.currencies.push_back(c);
    auto res = synth_panel(spec, 1);
    auto base_curve = nss_discount_curve(c.base, res.panel.grid);
    auto quotes = swap_quotes(
        [&](double tau) { return base_curve.loglinear_discount(tau); }, res.panel.grid);
    for (size_t d = 0; d < res.panel.n_dates(); ++d)
        for (size_t k = 0; k < res.panel.n_tenors(); ++k) {
            ASSERT_TRUE(res.panel.observed(d, 0, k));
            EXPECT_DOUBLE_EQ(res.panel.rate(d, 0, k), quotes[k]);
        }
}

TEST(Synth, SeededDeterminism) {
    SynthSpec spec;
    spec.days = 40;
    CurrencySpec c;
    c.name = "GBP";
    c.base = NssParams{0.025, -0.005, 0.002, 0.0, 1.5, 7.0};
    c.vol = {3e-4, 2e-4, 2e-4, 1e-4};
    c.shock_nu = 3;
    c.obs_dist = "student_t";
    c.obs_scale = 1e-4;
    c.missing_head_days = 10;
    c.missing_prob = 0.4;
    spec.currencies.push_back(c);
    auto a = synth_panel(spec, 99);
    auto b = synth_panel(spec, 99);
    EXPECT_EQ(a.panel.mask, b.panel.mask);
    for (size_t i = 0; i < a.panel.rates.size(); ++i)
        if (a.panel.mask[i]) EXPECT_EQ(a.panel.rates[i], b.panel.rates[i]);
}

TEST(Synth, RebootstrapRecoversDiscounts) {
    SynthSpec spec;
    spec.days = 5;
    CurrencySpec c;
    c.name = "CHF";
    c.base = NssParams{0.02, -0.008, 0.004, -0.001, 1.6, 9.0};
    c.vol = {2e-4, 2e-4, 1e-4, 1e-4};
    spec.currencies.push_back(c);
    auto res = synth_panel(spec, 5);
    for (size_t d = 0; d < res.panel.n_dates(); ++d) {
        std::vector<double> quotes(res.panel.n_tenors());
        for (size_t k = 0; k < quotes.size(); ++k) quotes[k] = res.panel.rate(d, 0, k);
        auto curve = bootstrap_discounts(quotes, res.panel.grid);
        const double* f = &res.truth.factors[(d * 1 + 0) * 6];
        NssParams p{f[0], f[1], f[2], f[3], f[4], f[5]};
        for (size_t k = 0; k < quotes.size(); ++k) {
            double tau = res.panel.grid.tenors[k];
            EXPECT_NEAR(curve.discounts[k], zcb_from_yield(nss_yield(p, tau), tau), 1e-8);
        }
    }
}

TEST(Synth, MissingnessDisabledPassesTruncationUnchanged) {
    SynthSpec spec;
    spec.days = 60;
    CurrencySpec c;
    c.name = "AUD";
    c.base = NssParams{0.035, -0.01, 0.005, 0.0, 1.7, 8.5};
    c.vol = {3e-4, 2e-4, 2e-4, 1e-4};
    spec.currencies.push_back(c);
    auto res = synth_panel(spec, 10);
    auto dense = truncate_and_densify(res.panel, TruncationConfig{20, 0.9, 0.95});
    EXPECT_EQ(dense.rows(0), res.panel.n_dates());
}

TEST(Synth, InfeasibleSpecRejected) {
    SynthSpec spec;
    spec.days = 10;
    CurrencySpec c;
    c.name = "BAD";
    c.base = NssParams{0.02, 0.0, 0.0, 0.0, -1.0, 5.0};
    spec.currencies.push_back(c);
    EXPECT_THROW(synth_panel(spec, 1), std::domain_error);

    spec.currencies[0].base.lambda1 = 1.0;
    spec.currencies[0].phi = {1.01, 0.9, 0.9, 0.9};
    EXPECT_THROW(synth_panel(spec, 1), ConfigError);
}

TEST(Csv, SaveLoadRoundTrip) {
    SynthSpec spec;
    spec.days = 15;
    CurrencySpec c;
    c.name = "USD";
    c.base = NssParams{0.03, -0.01, 0.002, 0.0, 2.0, 8.0};
    c.vol = {3e-4, 2e-4, 1e-4, 1e-4};
    c.missing_head_days = 5;
    c.missing_prob = 0.5;
    spec.currencies.push_back(c);
    CurrencySpec c2 = c;
    c2.name = "JPY";
    c2.base.beta0 = 0.005;
    spec.currencies.push_back(c2);
    auto res = synth_panel(spec, 17);

    auto path = std::filesystem::temp_directory_path() / "arbfree_panel_test.csv";
    save_csv(res.panel, path.string());
    auto loaded = load_csv(path.string());
    ASSERT_EQ(loaded.dates, res.panel.dates);
    ASSERT_EQ(loaded.currencies, res.panel.currencies);
    for (size_t i = 0; i < res.panel.rates.size(); ++i) {
        EXPECT_EQ(loaded.mask[i], res.panel.mask[i]);
        if (res.panel.mask[i]) EXPECT_EQ(loaded.rates[i], res.panel.rates[i]);
    }
    std::filesystem::remove(path);
}

TEST(Csv, MissingCellAndParseErrors) {
    auto dir = std::filesystem::temp_directory_path();
    auto path = dir / "arbfree_bad.csv";
    {
        std::ofstream os(path);
        os << "date,currency,1M,2M,3M,6M,1Y,2Y,5Y,7Y,10Y,15Y,20Y,30Y\n";
        os << "2020-01-06,USD,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,\n";
    }
    auto p = load_csv(path.string());
    EXPECT_FALSE(p.observed(0, 0, 11));
    EXPECT_TRUE(p.observed(0, 0, 0));

    {
        std::ofstream os(path);
        os << "date,currency,1M,2M,3M,6M,1Y,2Y,5Y,7Y,10Y,15Y,20Y,30Y\n";
        os << "2020-01-06,USD,abc,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01\n";
    }
    try {
        load_csv(path.string());
        FAIL() << "expected parse error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("1M"), std::string::npos);
    }

    {
        std::ofstream os(path);
        os << "date,currency,1M\n";
    }
    EXPECT_THROW(load_csv(path.string()), DataError);
    std::filesystem::remove(path);
}

}  // namespace
}  // namespace arbfree
