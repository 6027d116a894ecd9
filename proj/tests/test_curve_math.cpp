// SPDX-License-Identifier: Apache-2.0
#include "arbfree/curve_math.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "arbfree/rng.hpp"

namespace arbfree {
namespace {

TEST(ZcbYield, PointValues) {
    EXPECT_DOUBLE_EQ(zcb_from_yield(0.0, 10.0), 1.0);
    EXPECT_NEAR(zcb_from_yield(0.05, 2.0), std::exp(-0.1), 1e-12);
    EXPECT_NEAR(zcb_from_yield(-0.001, 5.0), std::exp(0.005), 1e-12);

    EXPECT_DOUBLE_EQ(yield_from_zcb(1.0, 3.0), 0.0);
    EXPECT_NEAR(yield_from_zcb(0.904837, 2.0), 0.05, 1e-6);
    EXPECT_NEAR(yield_from_zcb(1.005012, 5.0), -0.001, 1e-6);

    EXPECT_THROW(zcb_from_yield(std::nan(""), 1.0), std::domain_error);
    EXPECT_THROW(yield_from_zcb(0.0, 1.0), std::domain_error);
    EXPECT_THROW(yield_from_zcb(0.9, 0.0), std::domain_error);
}

TEST(ZcbYield, RoundTripGrid) {
    for (double y = -0.02; y <= 0.15; y += 0.005) {
        for (double tau : {0.05, 0.5, 1.0, 7.3, 30.0}) {
            double p = zcb_from_yield(y, tau);
            EXPECT_NEAR(yield_from_zcb(p, tau), y, 1e-12);
        }
    }
}

TEST(Forward, FlatCurve) {
    TenorGrid grid = TenorGrid::standard12();
    std::vector<double> ps(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) ps[i] = std::exp(-0.03 * grid.tenors[i]);
    DiscountCurve curve(grid, ps);
    for (double tau : {0.1, 0.5, 1.7, 4.0, 12.0, 25.0})
        EXPECT_NEAR(instantaneous_forward(curve, tau), 0.03, 1e-8);
}

TEST(Forward, UnitDiscounts) {
    TenorGrid grid = TenorGrid::standard12();
    DiscountCurve curve(grid, std::vector<double>(grid.size(), 1.0));
    EXPECT_NEAR(instantaneous_forward(curve, 3.0), 0.0, 1e-14);
}

TEST(Forward, MatchesNssClosedForm) {
    NssParams p{0.04, -0.02, 0.01, 0.0, 2.0, 5.0};
    // monthly grid keeps the interpolant error well under the tolerance
    std::vector<double> taus;
    std::vector<std::string> labels;
    for (int i = 1; i <= 360; ++i) {
        taus.push_back(i / 12.0);
        labels.push_back("m" + std::to_string(i));
    }
    TenorGrid grid(taus, labels);
    std::vector<double> ps(grid.size());
    for (size_t i = 0; i < grid.size(); ++i)
        ps[i] = zcb_from_yield(nss_yield(p, grid.tenors[i]), grid.tenors[i]);
    DiscountCurve curve(grid, ps);
    EXPECT_NEAR(instantaneous_forward(curve, 2.0), nss_forward(p, 2.0), 1e-5);
}

TEST(Forward, RangeErrors) {
    TenorGrid grid = TenorGrid::standard12();
    std::vector<double> ps(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) ps[i] = std::exp(-0.02 * grid.tenors[i]);
    DiscountCurve curve(grid, ps);
    EXPECT_THROW(instantaneous_forward(curve, 0.05), std::out_of_range);
    EXPECT_THROW(instantaneous_forward(curve, 30.0), std::out_of_range);
}

TEST(ParSwap, PointValues) {
    TenorGrid g2({1.0, 2.0}, {"1Y", "2Y"});
    DiscountCurve unit(g2, {1.0, 1.0});
    EXPECT_DOUBLE_EQ(par_swap_rate(unit, 1), 0.0);

    DiscountCurve flat5(g2, {0.951229, 0.904837});
    EXPECT_NEAR(par_swap_rate(flat5, 1), 0.051271, 1e-5);

    TenorGrid g1({1.0}, {"1Y"});
    DiscountCurve c1(g1, {0.99});
    EXPECT_NEAR(par_swap_rate(c1, 0), 0.01 / 0.99, 1e-12);
}

TEST(ParSwap, ForwardStartExposedButUnused) {
    TenorGrid g3({1.0, 2.0, 3.0}, {"1Y", "2Y", "3Y"});
    std::vector<double> ps;
    for (double t : g3.tenors) ps.push_back(std::exp(-0.03 * t));
    DiscountCurve c(g3, ps);
    double fwd = par_swap_rate(c, 2, 0);
    EXPECT_NEAR(fwd, (ps[0] - ps[2]) / (ps[1] + ps[2]), 1e-15);
    EXPECT_THROW(par_swap_rate(c, 1, 1), std::out_of_range);
}

// The quote of an annual-pay swap on a flat curve does not move when the
// discount curve carries extra interpolation nodes.
TEST(ParSwap, QuoteInvariantToRedundantCurveNodes) {
    double y = 0.04;
    auto flat = [&](double tau) { return std::exp(-y * tau); };
    double coarse = swap_quote(flat, 10.0);

    std::vector<double> taus;
    std::vector<std::string> labels;
    for (int i = 1; i <= 40; ++i) {
        taus.push_back(0.25 * i);
        labels.push_back("n" + std::to_string(i));
    }
    TenorGrid fine(taus, labels);
    std::vector<double> ps;
    for (double t : fine.tenors) ps.push_back(flat(t));
    DiscountCurve curve(fine, ps);
    double refined = swap_quote([&](double t) { return curve.loglinear_discount(t); }, 10.0);
    EXPECT_NEAR(coarse, refined, 1e-10);
}

TEST(ParSwap, DegenerateAnnuity) {
    TenorGrid g1({1e-13}, {"tiny"});
    DiscountCurve c(g1, {1.0});
    EXPECT_THROW(par_swap_rate(c, 0), std::domain_error);
}

TEST(Bootstrap, ZeroQuotes) {
    TenorGrid grid = TenorGrid::standard12();
    std::vector<double> zeros(grid.size(), 0.0);
    auto curve = bootstrap_discounts(zeros, grid);
    for (double p : curve.discounts) EXPECT_NEAR(p, 1.0, 1e-12);
}

TEST(Bootstrap, RecoversFlatCurve) {
    TenorGrid grid = TenorGrid::standard12();
    auto flat = [](double tau) { return std::exp(-0.05 * tau); };
    auto quotes = swap_quotes(flat, grid);
    auto curve = bootstrap_discounts(quotes, grid);
    for (size_t i = 0; i < grid.size(); ++i)
        EXPECT_NEAR(curve.discounts[i], flat(grid.tenors[i]), 1e-8);
}

TEST(Bootstrap, RequoteRoundTrip) {
    TenorGrid grid = TenorGrid::standard12();
    Rng rng(42);
    for (int rep = 0; rep < 20; ++rep) {
        NssParams p;
        p.beta0 = 0.01 + 0.05 * rng.uniform();
        p.beta1 = -0.03 + 0.06 * rng.uniform();
        p.beta2 = -0.02 + 0.04 * rng.uniform();
        p.beta3 = -0.02 + 0.04 * rng.uniform();
        p.lambda1 = 0.8 + 2.0 * rng.uniform();
        p.lambda2 = 5.0 + 6.0 * rng.uniform();
        auto quotes = swap_quotes(
            [&](double tau) { return zcb_from_yield(nss_yield(p, tau), tau); }, grid);
        auto curve = bootstrap_discounts(quotes, grid);
        auto back = requote(curve);
        for (size_t i = 0; i < grid.size(); ++i)
            EXPECT_NEAR(back[i], quotes[i], 1e-10) << "tenor " << grid.labels[i];
    }
}

TEST(Bootstrap, InfeasibleQuote) {
    TenorGrid grid = TenorGrid::standard12();
    std::vector<double> quotes(grid.size(), 0.02);
    quotes[0] = -13.0;  // implies P = 1/(1 - 13/12) < 0
    EXPECT_THROW(bootstrap_discounts(quotes, grid), std::domain_error);
}

TEST(Nss, LimitsAndPointValue) {
    NssParams p{0.04, -0.01, 0.0, 0.0, 1.0, 1.0};
    EXPECT_NEAR(nss_yield(p, 0.0), 0.03, 1e-12);
    EXPECT_NEAR(nss_yield(p, 1000.0), 0.04, 1e-4);

    NssParams q{0.03, 0.01, 0.02, -0.01, 1.5, 8.0};
    // independent scalar evaluation of the closed form
    double tau = 5.0;
    double x1 = tau / q.lambda1, x2 = tau / q.lambda2;
    double l1 = (1.0 - std::exp(-x1)) / x1;
    double expected = q.beta0 + q.beta1 * l1 + q.beta2 * (l1 - std::exp(-x1)) +
                      q.beta3 * ((1.0 - std::exp(-x2)) / x2 - std::exp(-x2));
    EXPECT_NEAR(nss_yield(q, tau), expected, 1e-14);

    NssParams bad = q;
    bad.lambda1 = 0.0;
    EXPECT_THROW(nss_yield(bad, 1.0), std::domain_error);
}

TEST(Nss, ForwardLimits) {
    NssParams p{0.035, 0.0, 0.0, 0.0, 2.0, 6.0};
    for (double tau : {0.0, 0.5, 3.0, 30.0}) EXPECT_NEAR(nss_forward(p, tau), 0.035, 1e-14);

    NssParams q{0.03, -0.015, 0.01, 0.005, 1.7, 9.0};
    EXPECT_NEAR(nss_forward(q, 0.0), q.beta0 + q.beta1, 1e-12);
}

TEST(Nss, YieldIsAveragedForward) {
    Rng rng(7);
    GaussLegendre gl(64);
    for (int rep = 0; rep < 100; ++rep) {
        NssParams p;
        p.beta0 = 0.01 + 0.05 * rng.uniform();
        p.beta1 = -0.03 + 0.06 * rng.uniform();
        p.beta2 = -0.03 + 0.06 * rng.uniform();
        p.beta3 = -0.03 + 0.06 * rng.uniform();
        p.lambda1 = 0.5 + 3.0 * rng.uniform();
        p.lambda2 = 4.0 + 8.0 * rng.uniform();
        double tau = 0.5 + 29.0 * rng.uniform();
        double avg = gl.integrate([&](double u) { return nss_forward(p, u); }, 0.0, tau) / tau;
        EXPECT_NEAR(nss_yield(p, tau), avg, 1e-6);
    }
}

TEST(Nss, DybvigMonotoneDiscounts) {
    Rng rng(11);
    TenorGrid grid = TenorGrid::standard12();
    int checked = 0;
    while (checked < 25) {
        NssParams p;
        p.beta0 = 0.01 + 0.05 * rng.uniform();
        p.beta1 = -0.5 * p.beta0 + p.beta0 * rng.uniform();
        p.beta2 = -0.01 + 0.03 * rng.uniform();
        p.beta3 = -0.01 + 0.03 * rng.uniform();
        p.lambda1 = 0.8 + 2.0 * rng.uniform();
        p.lambda2 = 5.0 + 5.0 * rng.uniform();
        bool nonneg = true;
        for (double tau = 0.0; tau <= 30.0; tau += 0.05)
            if (nss_forward(p, tau) < 0.0) nonneg = false;
        if (!nonneg) continue;
        ++checked;
        auto curve = nss_discount_curve(p, grid);
        double prev = 1.0;
        for (double d : curve.discounts) {
            EXPECT_LT(d, prev);
            prev = d;
        }
    }
}

TEST(FitNss, RecoversNoiselessData) {
    NssParams truth{0.035, -0.02, 0.015, -0.005, 1.8, 7.0};
    TenorGrid grid = TenorGrid::standard12();
    std::vector<double> ys(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) ys[i] = nss_yield(truth, grid.tenors[i]);
    NssParams init{0.02, 0.0, 0.0, 0.0, 1.0, 5.0};
    auto fit = fit_nss(grid.tenors, ys, init);
    EXPECT_LT(fit.rmse, 1e-8);
}

TEST(FitNss, FlatData) {
    TenorGrid grid = TenorGrid::standard12();
    std::vector<double> ys(grid.size(), 0.025);
    NssParams init{0.02, 0.01, 0.0, 0.0, 1.5, 6.0};
    auto fit = fit_nss(grid.tenors, ys, init);
    EXPECT_LT(fit.rmse, 1e-8);
    for (size_t i = 0; i < grid.size(); ++i)
        EXPECT_NEAR(nss_yield(fit.params, grid.tenors[i]), 0.025, 1e-7);
}

TEST(FitNss, NoisyDataWithinNoiseFloor) {
    NssParams truth{0.03, -0.015, 0.01, 0.002, 2.0, 8.0};
    TenorGrid grid = TenorGrid::standard12();
    Rng rng(3);
    std::vector<double> ys(grid.size());
    for (size_t i = 0; i < grid.size(); ++i)
        ys[i] = nss_yield(truth, grid.tenors[i]) + 1e-4 * rng.normal();
    auto fit = fit_nss(grid.tenors, ys, truth);
    EXPECT_LE(fit.rmse, 2e-4);
}

TEST(Hjm, ConstantVol) {
    std::vector<VolFn2> sig{[](double, double) { return 0.01; }};
    EXPECT_NEAR(hjm_drift(sig, 0.0, 2.0), 2e-4, 1e-12);
}

TEST(Hjm, VasicekClosedForm) {
    double s0 = 0.012, kappa = 0.4;
    std::vector<VolFn2> sig{
        [=](double t, double T) { return s0 * std::exp(-kappa * (T - t)); }};
    for (double tau : {0.5, 2.0, 10.0}) {
        double expected = s0 * std::exp(-kappa * tau) * s0 *
                          (1.0 - std::exp(-kappa * tau)) / kappa;
        EXPECT_NEAR(hjm_drift(sig, 1.0, 1.0 + tau), expected, 1e-10);
    }
}

TEST(Hjm, TwoFactorAdditivity) {
    VolFn2 a = [](double, double T) { return 0.01 + 0.001 * T; };
    VolFn2 b = [](double t, double T) { return 0.005 * std::exp(-0.2 * (T - t)); };
    std::vector<VolFn2> both{a, b};
    std::vector<VolFn2> va{a}, vb{b};
    double t = 0.3, T = 6.0;
    EXPECT_NEAR(hjm_drift(both, t, T), hjm_drift(va, t, T) + hjm_drift(vb, t, T), 1e-14);
}

TEST(Hjm, QuadratureConverges) {
    double kappa = 1.3, s0 = 0.02;
    std::vector<VolFn2> sig{
        [=](double t, double T) { return s0 * std::exp(-kappa * (T - t)); }};
    double tau = 8.0;
    double exact = s0 * std::exp(-kappa * tau) * s0 * (1.0 - std::exp(-kappa * tau)) / kappa;
    double e2 = std::abs(hjm_drift(sig, 0.0, tau, 2) - exact);
    double e4 = std::abs(hjm_drift(sig, 0.0, tau, 4) - exact);
    EXPECT_LE(e4, e2 / 4.0 + 1e-15);
}

TEST(Musiela, ZeroVolIsSlope) {
    std::vector<VolFn1> none;
    EXPECT_DOUBLE_EQ(musiela_drift(0.0123, none, 4.0), 0.0123);
}

TEST(Musiela, ConstantVolFlatCurve) {
    std::vector<VolFn1> sig{[](double) { return 0.015; }};
    double x = 7.0;
    EXPECT_NEAR(musiela_drift(0.0, sig, x), 0.015 * 0.015 * x, 1e-12);
}

TEST(Musiela, AgreesWithHjmUnderCoordinateShift) {
    double kappa = 0.7, s0 = 0.01;
    std::vector<VolFn1> sx{[=](double x) { return s0 * std::exp(-kappa * x); }};
    std::vector<VolFn2> st{[=](double t, double T) { return s0 * std::exp(-kappa * (T - t)); }};
    for (double x : {0.5, 3.0, 12.0})
        EXPECT_NEAR(musiela_drift(0.0, sx, x), hjm_drift(st, 2.0, 2.0 + x), 1e-12);
}

TEST(MonotoneCubicInterp, PreservesMonotoneData) {
    std::vector<double> xs{0, 1, 2, 4, 8};
    std::vector<double> ys{0, -0.05, -0.08, -0.20, -0.33};
    MonotoneCubic mc(xs, ys);
    double prev = mc(0.0);
    for (double x = 0.01; x <= 8.0; x += 0.01) {
        double v = mc(x);
        EXPECT_LE(v, prev + 1e-12);
        prev = v;
    }
    for (size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(mc(xs[i]), ys[i], 1e-14);
}

}  // namespace
}  // namespace arbfree
