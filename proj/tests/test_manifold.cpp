// SPDX-License-Identifier: Apache-2.0
#include "arbfree/manifold.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "arbfree/checkpoint.hpp"
#include "arbfree/synth.hpp"

namespace arbfree {
namespace {

RobustScaler identity_scaler(size_t dim) {
    RobustScaler s;
    s.median.assign(dim, 0.0);
    s.iqr.assign(dim, 1.0);
    return s;
}

ManifoldModel tiny_model(Likelihood lik = Likelihood::StudentT, bool conditioning = true,
                         bool levelscript = true, uint64_t seed = 11) {
    ManifoldConfig cfg;
    cfg.latent_dim = 3;
    cfg.embed_dim = 2;
    cfg.encoder_widths = {4, 4};
    cfg.decoder_widths = {4, 4};
    cfg.likelihood = lik;
    cfg.conditioning = conditioning;
    cfg.levelscript = levelscript;
    cfg.epochs = 1;
    cfg.seed = seed;
    return make_manifold_model(cfg, TenorGrid::standard12(), {"AAA", "BBB"},
                               identity_scaler(13), identity_scaler(12));
}

TrainRecord sample_record(const ManifoldModel& m, uint64_t seed = 3) {
    Rng rng(seed);
    TrainRecord rec;
    rec.ccy = 1;
    rec.x.resize(13);
    for (auto& v : rec.x) v = 0.5 * rng.normal();
    rec.level_scaled = rec.x.back();
    rec.swaps_raw.resize(12);
    for (auto& v : rec.swaps_raw) v = 0.02 + 0.01 * rng.normal();
    rec.swaps_scaled = m.swap_scaler.transform(rec.swaps_raw);
    return rec;
}

TEST(Encode, DeterministicAndConditioningContract) {
    auto m = tiny_model();
    std::vector<double> x(13, 0.3);
    auto p1 = encode(m, x, 0);
    auto p2 = encode(m, x, 0);
    EXPECT_EQ(p1.mu, p2.mu);
    EXPECT_EQ(p1.logvar, p2.logvar);
    auto p3 = encode(m, x, 1);
    EXPECT_NE(p1.mu, p3.mu);  // conditioning on: currency matters

    auto mu = tiny_model(Likelihood::StudentT, /*conditioning=*/false);
    auto q0 = encode(mu, x, 0);
    auto q1 = encode(mu, x, 1);
    EXPECT_EQ(q0.mu, q1.mu);
    EXPECT_EQ(q0.logvar, q1.logvar);

    EXPECT_THROW(encode(m, x, 7), std::out_of_range);
}

TEST(Encode, MuJacobianMatchesFiniteDifferences) {
    auto m = tiny_model();
    std::vector<double> x(13);
    Rng rng(9);
    for (auto& v : x) v = 0.4 * rng.normal();
    const double h = 1e-6;
    for (size_t i = 0; i < x.size(); ++i) {
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        auto pp = encode(m, xp, 0);
        auto pm = encode(m, xm, 0);
        // analytic via encoder jacobian (mu rows are the first latent_dim outputs)
        std::vector<double> in;
        m.assemble_encoder_input(x, 0, in);
        auto J = input_jacobian(m.encoder, in);
        for (int k = 0; k < m.latent_dim(); ++k) {
            double fd = (pp.mu[static_cast<size_t>(k)] - pm.mu[static_cast<size_t>(k)]) / (2 * h);
            double an = J[static_cast<size_t>(k) * in.size() + i];
            EXPECT_LT(std::abs(an - fd) / std::max(1e-6, std::abs(fd)), 1e-4);
        }
    }
}

TEST(Reparameterize, NoiseZeroAndClampedVariance) {
    PosteriorParams post;
    post.mu = {0.5, -1.0};
    post.logvar = {0.0, -1e9};
    std::vector<double> zero{0.0, 0.0};
    auto z = reparameterize(post, zero);
    EXPECT_DOUBLE_EQ(z[0], 0.5);
    EXPECT_DOUBLE_EQ(z[1], -1.0);
    std::vector<double> one{1.0, 1.0};
    auto z2 = reparameterize(post, one);
    EXPECT_NEAR(z2[1], -1.0, 1e-8);  // clamped log-variance
}

TEST(Reparameterize, MonteCarloMean) {
    PosteriorParams post;
    post.mu = {0.3};
    post.logvar = {std::log(0.04)};
    Rng rng(123);
    double acc = 0.0;
    const int n = 100000;
    std::vector<double> noise(1);
    for (int i = 0; i < n; ++i) {
        noise[0] = rng.normal();
        acc += reparameterize(post, noise)[0];
    }
    double mean = acc / n;
    EXPECT_NEAR(mean, 0.3, 3.0 * 0.2 / std::sqrt(static_cast<double>(n)));
}

TEST(DecodeBond, ZeroedDecoderPureLevelCurve) {
    auto m = tiny_model();
    for (auto& wl : m.decoder.W)
        for (auto& w : wl) w = 0.0;
    for (auto& bl : m.decoder.b)
        for (auto& b : bl) b = 0.0;
    std::vector<double> z{0.1, -0.2, 0.3};
    double level_scaled = 0.05;  // identity scaler: level = 0.05
    for (double tau : {0.5, 2.0, 10.0, 30.0})
        EXPECT_NEAR(decode_bond(m, z, tau, 0, level_scaled), std::exp(-tau * 0.05), 1e-14);
    EXPECT_THROW(decode_bond(m, z, 0.0, 0, level_scaled), std::domain_error);
}

TEST(DecodeBond, PositivityEverywhere) {
    auto m = tiny_model();
    Rng rng(77);
    std::vector<double> z(3);
    for (int i = 0; i < 10000; ++i) {
        for (auto& v : z) v = 3.0 * rng.normal();
        double tau = 0.01 + 30.0 * rng.uniform();
        double lp = -2.0 + 4.0 * rng.uniform();
        EXPECT_GT(decode_bond(m, z, tau, i % 2, lp), 0.0);
    }
}

TEST(Reprice, FlatPseudoYieldMatchesParSwapExample) {
    auto m = tiny_model();
    for (auto& wl : m.decoder.W)
        for (auto& w : wl) w = 0.0;
    for (auto& bl : m.decoder.b)
        for (auto& b : bl) b = 0.0;
    std::vector<double> z{0.0, 0.0, 0.0};
    auto swaps = reprice_swaps(m, z, 0, 0.05);
    int idx_2y = m.grid.index_of("2Y");
    EXPECT_NEAR(swaps[static_cast<size_t>(idx_2y)], 0.051271, 1e-5);
}

TEST(Reprice, ZeroRateDecode) {
    auto m = tiny_model();
    for (auto& wl : m.decoder.W)
        for (auto& w : wl) w = 0.0;
    for (auto& bl : m.decoder.b)
        for (auto& b : bl) b = 0.0;
    std::vector<double> z{0.0, 0.0, 0.0};
    auto swaps = reprice_swaps(m, z, 0, 0.0);
    for (double s : swaps) EXPECT_NEAR(s, 0.0, 1e-14);
}

TEST(Likelihoods, CauchyPointValue) {
    StudentTParams p;
    p.loc = {0.0};
    p.precision = {1.0};
    p.dof = {1.0};
    std::vector<double> x{0.0};
    EXPECT_NEAR(student_t_nll(x, p), std::log(std::numbers::pi), 1e-5);
    EXPECT_NEAR(student_t_nll(x, p), 1.14473, 1e-5);
}

TEST(Likelihoods, LargeDofMatchesGaussian) {
    StudentTParams p;
    p.loc = {0.3};
    p.precision = {4.0};  // sigma^2 = 1/4
    p.dof = {1e6};
    std::vector<double> x{0.8};
    std::vector<double> mu{0.3}, var{0.25};
    EXPECT_NEAR(student_t_nll(x, p), gaussian_nll(x, mu, var), 1e-3);
}

TEST(Likelihoods, GaussianPeak) {
    std::vector<double> x{0.5}, mu{0.5}, var{1.0};
    EXPECT_NEAR(gaussian_nll(x, mu, var), 0.5 * std::log(2.0 * std::numbers::pi), 1e-12);
    std::vector<double> bad{-1.0};
    EXPECT_THROW(gaussian_nll(x, mu, bad), std::domain_error);
    StudentTParams p;
    p.loc = {0.0};
    p.precision = {-1.0};
    p.dof = {3.0};
    EXPECT_THROW(student_t_nll(x, p), std::domain_error);
}

TEST(Likelihoods, KlClosedForms) {
    PosteriorParams post;
    post.mu = {0.0};
    post.logvar = {0.0};
    EXPECT_DOUBLE_EQ(kl_gaussian(post), 0.0);
    post.mu = {1.0};
    EXPECT_DOUBLE_EQ(kl_gaussian(post), 0.5);
    post.mu = {0.0};
    post.logvar = {1.0};
    EXPECT_NEAR(kl_gaussian(post), 0.5 * (std::numbers::e - 2.0), 1e-12);
    EXPECT_NEAR(kl_gaussian(post), 0.359141, 1e-6);
}

TEST(Elbo, PerfectReconstructionGaussianFloor) {
    auto m = tiny_model(Likelihood::Gaussian);
    for (auto& wl : m.decoder.W)
        for (auto& w : wl) w = 0.0;
    for (auto& bl : m.decoder.b)
        for (auto& b : bl) b = 0.0;  // variance head exp(0) = 1
    // encoder zeroed too, so z = 0 and posterior is exactly the prior
    for (auto& wl : m.encoder.W)
        for (auto& w : wl) w = 0.0;
    for (auto& bl : m.encoder.b)
        for (auto& b : bl) b = 0.0;

    TrainRecord rec;
    rec.ccy = 0;
    rec.x.assign(13, 0.0);
    rec.level_scaled = 0.03;
    rec.x[12] = 0.03;
    std::vector<double> z0(3, 0.0);
    rec.swaps_raw = reprice_swaps(m, z0, 0, rec.level_scaled);
    rec.swaps_scaled = m.swap_scaler.transform(rec.swaps_raw);

    std::vector<double> noise(3, 0.0);
    ElboScratch sc;
    auto terms = elbo_record(m, rec, noise, 0.0, nullptr, sc);
    EXPECT_NEAR(terms.loss, 12.0 * 0.5 * std::log(2.0 * std::numbers::pi), 1e-10);
    EXPECT_NEAR(terms.kl, 0.0, 1e-12);
}

void check_elbo_gradients(Likelihood lik, bool conditioning, bool levelscript) {
    auto m = tiny_model(lik, conditioning, levelscript, 21);
    std::vector<TrainRecord> batch{sample_record(m, 5), sample_record(m, 6)};
    batch[1].ccy = 0;
    std::vector<double> noise(2 * 3);
    Rng nr(31);
    for (auto& v : noise) v = nr.normal();
    const double kl_w = 0.7;

    auto [terms, grads] = elbo_loss(m, batch, noise, kl_w);
    auto eval = [&]() { return elbo_loss(m, batch, noise, kl_w).first.loss; };

    const double h = 1e-6;
    auto check = [&](double* param, double analytic, const char* what) {
        double save = *param;
        *param = save + h;
        double fp = eval();
        *param = save - h;
        double fm = eval();
        *param = save;
        double fd = (fp - fm) / (2 * h);
        double denom = std::max(1e-4, std::abs(fd));
        EXPECT_LT(std::abs(analytic - fd) / denom, 1e-3)
            << what << " analytic=" << analytic << " fd=" << fd;
    };

    for (size_t l = 0; l < m.encoder.layer_count(); ++l) {
        for (size_t i = 0; i < m.encoder.W[l].size(); i += 7)
            check(&m.encoder.W[l][i], grads.encoder.gW[l][i], "encW");
        for (size_t i = 0; i < m.encoder.b[l].size(); i += 3)
            check(&m.encoder.b[l][i], grads.encoder.gb[l][i], "encB");
    }
    for (size_t l = 0; l < m.decoder.layer_count(); ++l) {
        for (size_t i = 0; i < m.decoder.W[l].size(); i += 7)
            check(&m.decoder.W[l][i], grads.decoder.gW[l][i], "decW");
        for (size_t i = 0; i < m.decoder.b[l].size(); i += 3)
            check(&m.decoder.b[l][i], grads.decoder.gb[l][i], "decB");
    }
    if (conditioning)
        for (size_t i = 0; i < m.embeddings.size(); ++i)
            check(&m.embeddings[i], grads.embeddings[i], "emb");
}

TEST(Elbo, GradientsMatchFiniteDifferencesStudentT) {
    check_elbo_gradients(Likelihood::StudentT, true, true);
}
TEST(Elbo, GradientsMatchFiniteDifferencesGaussian) {
    check_elbo_gradients(Likelihood::Gaussian, true, true);
}
TEST(Elbo, GradientsMatchFiniteDifferencesNoConditioningNoLevel) {
    check_elbo_gradients(Likelihood::StudentT, false, false);
}

DensePanel zero_vol_panel(int days, double beta0 = 0.03) {
    SynthSpec spec;
    spec.days = days;
    CurrencySpec c;
    c.name = "USD";
    c.base = NssParams{beta0, -0.01, 0.004, 0.0, 1.8, 8.0};
    spec.currencies.push_back(c);
    auto res = synth_panel(spec, 7);
    return truncate_and_densify(res.panel, TruncationConfig{5, 0.9, 0.9});
}

DensePanel wiggly_panel(int days, uint64_t seed) {
    SynthSpec spec;
    spec.days = days;
    CurrencySpec c;
    c.name = "USD";
    c.base = NssParams{0.03, -0.01, 0.004, 0.0, 1.8, 8.0};
    c.vol = {4e-4, 3e-4, 2e-4, 1e-4};
    spec.currencies.push_back(c);
    auto res = synth_panel(spec, seed);
    return truncate_and_densify(res.panel, TruncationConfig{5, 0.9, 0.9});
}

TEST(Train, ZeroVolPanelReachesSubBpInSample) {
    ManifoldConfig cfg;
    cfg.latent_dim = 2;
    cfg.embed_dim = 2;
    cfg.encoder_widths = {16, 16};
    cfg.decoder_widths = {16, 16};
    cfg.likelihood = Likelihood::StudentT;
    cfg.epochs = 200;
    cfg.batch_size = 1;
    cfg.lr = 5e-3;
    cfg.kl.final_weight = 0.1;
    cfg.seed = 42;
    auto panel = zero_vol_panel(40);
    auto res = train_manifold(cfg, panel);
    ASSERT_FALSE(res.diverged);
    EXPECT_LT(res.final_recon_rmse_bps, 1.0);
}

TEST(Train, SeededDeterminism) {
    ManifoldConfig cfg;
    cfg.latent_dim = 2;
    cfg.embed_dim = 2;
    cfg.encoder_widths = {8, 8};
    cfg.decoder_widths = {8, 8};
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 4242;
    auto panel = wiggly_panel(30, 9);
    auto a = train_manifold(cfg, panel);
    auto b = train_manifold(cfg, panel);
    EXPECT_EQ(a.model.encoder.checksum(), b.model.encoder.checksum());
    EXPECT_EQ(a.model.decoder.checksum(), b.model.decoder.checksum());
    EXPECT_EQ(a.model.frozen_checksum, b.model.frozen_checksum);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
}

TEST(Train, LargeKlWeightDrivesPosteriorToPrior) {
    ManifoldConfig cfg;
    cfg.latent_dim = 2;
    cfg.embed_dim = 2;
    cfg.encoder_widths = {8, 8};
    cfg.decoder_widths = {8, 8};
    cfg.kl.final_weight = 1e4;
    cfg.kl.warmup_frac = 0.0;
    cfg.epochs = 300;
    cfg.batch_size = 8;
    cfg.lr = 3e-3;
    cfg.seed = 7;
    auto panel = wiggly_panel(30, 10);
    auto res = train_manifold(cfg, panel);
    ASSERT_FALSE(res.diverged);
    EXPECT_LT(res.log.back().kl, 1e-3);
}

TEST(Train, LevelShiftOnlyMovesLevel) {
    auto panel = wiggly_panel(10, 11);
    auto recs = decompose(panel);
    DensePanel shifted = panel;
    const double c = 0.0123;
    for (auto& block : shifted.rates)
        for (auto& v : block) v += c;
    auto recs2 = decompose(shifted);
    for (size_t i = 0; i < recs.size(); ++i) {
        EXPECT_DOUBLE_EQ(recs2[i].level, recs[i].level + c);
        // shift cancels in the subtraction up to one re-rounding ulp
        for (size_t k = 0; k < recs[i].shape.size(); ++k)
            EXPECT_NEAR(recs2[i].shape[k], recs[i].shape[k], 1e-12);
    }
}

TEST(Checkpoint, SaveLoadRoundTripAndTamperDetection) {
    ManifoldConfig cfg;
    cfg.latent_dim = 2;
    cfg.embed_dim = 2;
    cfg.encoder_widths = {8, 8};
    cfg.decoder_widths = {8, 8};
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 77;
    auto panel = wiggly_panel(20, 12);
    auto res = train_manifold(cfg, panel);
    auto dir = std::filesystem::temp_directory_path();
    auto path = (dir / "arbfree_manifold_test.json").string();
    save_manifold(res.model, path, "deadbeef00000000");

    std::string hash;
    auto loaded = load_manifold(path, &hash);
    EXPECT_EQ(hash, "deadbeef00000000");
    EXPECT_EQ(loaded.decoder.checksum(), res.model.decoder.checksum());
    EXPECT_EQ(loaded.frozen_checksum, res.model.frozen_checksum);

    std::vector<double> x(13, 0.2);
    auto p0 = encode(res.model, x, 0);
    auto p1 = encode(loaded, x, 0);
    for (size_t i = 0; i < p0.mu.size(); ++i) EXPECT_EQ(p0.mu[i], p1.mu[i]);

    // tamper with a decoder blob
    auto j = detail::read_json_file(path);
    auto blob = decode_f64(j["decoder"]["W"][0].get<std::string>());
    blob[0] += 1e-9;
    j["decoder"]["W"][0] = encode_f64(blob);
    detail::write_json_file(j, path);
    EXPECT_THROW(load_manifold(path), LineageError);
    std::filesystem::remove(path);
}

}  // namespace
}  // namespace arbfree
