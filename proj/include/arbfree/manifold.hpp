// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "arbfree/adam.hpp"
#include "arbfree/curve_math.hpp"
#include "arbfree/jsonutil.hpp"
#include "arbfree/mlp.hpp"
#include "arbfree/panel.hpp"
#include "arbfree/pipeline.hpp"
#include "arbfree/rng.hpp"

namespace arbfree {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Likelihood { StudentT, Gaussian };

inline std::string likelihood_name(Likelihood l) {
    return l == Likelihood::StudentT ? "student_t" : "gaussian";
}
inline Likelihood likelihood_from_name(std::string_view s) {
    if (s == "student_t") return Likelihood::StudentT;
    if (s == "gaussian") return Likelihood::Gaussian;
    throw ConfigError("unknown likelihood tag: " + std::string(s));
}

/// Linear KL warm-up from 0 to final_weight across the first warmup_frac
/// share of epochs; avoids early posterior collapse.
struct KlSchedule {
    double warmup_frac = 0.2;
    double final_weight = 1.0;

    double weight(int epoch, int total_epochs) const {
        double ramp = warmup_frac * static_cast<double>(total_epochs);
        if (ramp < 1.0) return final_weight;
        return final_weight * std::min(1.0, static_cast<double>(epoch + 1) / ramp);
    }
};

struct ManifoldConfig {
    int latent_dim = 3;
    int embed_dim = 16;
    std::vector<int> encoder_widths{256, 256};
    std::vector<int> decoder_widths{256, 256};
    Likelihood likelihood = Likelihood::StudentT;
    bool conditioning = true;
    bool levelscript = true;
    KlSchedule kl;
    int epochs = 200;
    int batch_size = 64;
    double lr = 1e-3;
    uint64_t seed = 0;

    void validate() const {
        if (latent_dim < 1) throw ConfigError("manifold: latent_dim >= 1");
        if (embed_dim < 1) throw ConfigError("manifold: embed_dim >= 1");
        if (encoder_widths.empty() || decoder_widths.empty())
            throw ConfigError("manifold: hidden widths must be nonempty");
        if (epochs < 1 || batch_size < 1) throw ConfigError("manifold: epochs/batch_size >= 1");
        if (!(lr > 0.0)) throw ConfigError("manifold: lr > 0");
        if (kl.warmup_frac < 0.0 || kl.warmup_frac > 1.0)
            throw ConfigError("manifold: kl warmup_frac in [0,1]");
    }

    json to_json() const {
        return json{{"latent_dim", latent_dim},
                    {"embed_dim", embed_dim},
                    {"encoder_widths", encoder_widths},
                    {"decoder_widths", decoder_widths},
                    {"likelihood", likelihood_name(likelihood)},
                    {"conditioning", conditioning},
                    {"levelscript", levelscript},
                    {"kl_warmup_frac", kl.warmup_frac},
                    {"kl_weight", kl.final_weight},
                    {"epochs", epochs},
                    {"batch_size", batch_size},
                    {"lr", lr},
                    {"seed", seed}};
    }

    static ManifoldConfig from_json(const json& j) {
        check_keys(j,
                   {"latent_dim", "embed_dim", "encoder_widths", "decoder_widths",
                    "likelihood", "conditioning", "levelscript", "kl_warmup_frac",
                    "kl_weight", "epochs", "batch_size", "lr", "seed"},
                   "manifold config");
        ManifoldConfig c;
        c.latent_dim = get_or<int>(j, "latent_dim", c.latent_dim);
        c.embed_dim = get_or<int>(j, "embed_dim", c.embed_dim);
        c.encoder_widths = get_or<std::vector<int>>(j, "encoder_widths", c.encoder_widths);
        c.decoder_widths = get_or<std::vector<int>>(j, "decoder_widths", c.decoder_widths);
        if (j.contains("likelihood"))
            c.likelihood = likelihood_from_name(j.at("likelihood").get<std::string>());
        c.conditioning = get_or<bool>(j, "conditioning", c.conditioning);
        c.levelscript = get_or<bool>(j, "levelscript", c.levelscript);
        c.kl.warmup_frac = get_or<double>(j, "kl_warmup_frac", c.kl.warmup_frac);
        c.kl.final_weight = get_or<double>(j, "kl_weight", c.kl.final_weight);
        c.epochs = get_or<int>(j, "epochs", c.epochs);
        c.batch_size = get_or<int>(j, "batch_size", c.batch_size);
        c.lr = get_or<double>(j, "lr", c.lr);
        c.seed = get_or<uint64_t>(j, "seed", c.seed);
        c.validate();
        return c;
    }
};

struct PosteriorParams {
    std::vector<double> mu;
    std::vector<double> logvar;
};

/// Per-tenor Student-t likelihood parameters.
struct StudentTParams {
    std::vector<double> loc;
    std::vector<double> precision;  // > 0
    std::vector<double> dof;        // > 2
};

// ---------------------------------------------------------------------------
// Likelihood terms
// ---------------------------------------------------------------------------

namespace detail {
/// Digamma by recurrence into the asymptotic series.
inline double digamma(double x) {
    if (!(x > 0.0)) throw std::domain_error("digamma: x > 0 required");
    double acc = 0.0;
    while (x < 6.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    double inv = 1.0 / x, inv2 = inv * inv;
    return acc + std::log(x) - 0.5 * inv -
           inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 / 252));
}
}  // namespace detail

/// Negative log-likelihood of independent Gaussians, summed over dims.
inline double gaussian_nll(std::span<const double> x, std::span<const double> mu,
                           std::span<const double> var) {
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        if (!(var[i] > 0.0)) throw std::domain_error("gaussian_nll: variance must be > 0");
        double e = x[i] - mu[i];
        acc += 0.5 * (std::log(2.0 * std::numbers::pi * var[i]) + e * e / var[i]);
    }
    return acc;
}

/// Student-t negative log-likelihood, summed over dims. Exact form with
/// log-gamma; log1p keeps the tail term accurate at large dof.
inline double student_t_nll(std::span<const double> x, const StudentTParams& p) {
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double lam = p.precision[i], nu = p.dof[i], mu = p.loc[i];
        if (!(lam > 0.0) || !(nu > 0.0))
            throw std::domain_error("student_t_nll: precision and dof must be > 0");
        double e = x[i] - mu;
        acc += -std::lgamma(0.5 * (nu + 1.0)) + std::lgamma(0.5 * nu) -
               0.5 * std::log(lam / (std::numbers::pi * nu)) +
               0.5 * (nu + 1.0) * std::log1p(lam * e * e / nu);
    }
    return acc;
}

/// KL( N(mu, sigma^2 I) || N(0, I) ) = 1/2 sum(mu^2 + s^2 - log s^2 - 1).
inline double kl_gaussian(const PosteriorParams& post) {
    double acc = 0.0;
    for (size_t i = 0; i < post.mu.size(); ++i) {
        double s2 = std::exp(post.logvar[i]);
        acc += 0.5 * (post.mu[i] * post.mu[i] + s2 - post.logvar[i] - 1.0);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Stage A model: encoder, shared bond-price decoder with likelihood heads,
/// currency embeddings and the fitted scaler state.
struct ManifoldModel {
    ManifoldConfig cfg;
    TenorGrid grid;
    std::vector<std::string> currencies;
    Mlp encoder;
    Mlp decoder;
    std::vector<double> embeddings;  // [currency][embed_dim]
    RobustScaler input_scaler;       // shape dims + level dim
    RobustScaler swap_scaler;        // likelihood space per tenor
    bool frozen = false;
    uint64_t frozen_checksum = 0;

    // decode maturity schedule, derived from the grid
    std::vector<double> sched_taus;   // union of decode maturities
    std::vector<int> tenor_point;     // per tenor: schedule index of its maturity
    std::vector<int> swap_coupons;    // per tenor: annual coupon count (0 = money market)
    std::vector<int> year_point;      // year k -> schedule index (index 0 unused)

    int latent_dim() const { return cfg.latent_dim; }
    int n_currencies() const { return static_cast<int>(currencies.size()); }

    /// Maturity enters the decoder through a fixed feature basis: a linear
    /// ramp plus three exponential decays. A single scaled maturity would
    /// compress the whole money-market end into a sliver of the feature
    /// range and starve it of resolution.
    static constexpr int kMatFeatures = 4;
    static void maturity_features(double tau, double* f) {
        f[0] = tau / 30.0;
        f[1] = std::exp(-tau / 0.5);
        f[2] = std::exp(-tau / 2.0);
        f[3] = std::exp(-tau / 8.0);
    }
    static void maturity_features_dtau(double tau, double* df) {
        df[0] = 1.0 / 30.0;
        df[1] = -std::exp(-tau / 0.5) / 0.5;
        df[2] = -std::exp(-tau / 2.0) / 2.0;
        df[3] = -std::exp(-tau / 8.0) / 8.0;
    }

    int enc_input_dim() const {
        return static_cast<int>(grid.size()) + 1 + (cfg.conditioning ? cfg.embed_dim : 0);
    }
    int dec_input_dim() const {
        return cfg.latent_dim + kMatFeatures + (cfg.conditioning ? cfg.embed_dim : 0) +
               (cfg.levelscript ? 1 : 0);
    }

    const double* embedding(int ccy) const {
        if (ccy < 0 || ccy >= n_currencies())
            throw std::out_of_range("manifold: unknown currency index");
        return embeddings.data() + static_cast<size_t>(ccy) * static_cast<size_t>(cfg.embed_dim);
    }

    /// Level in decimal-rate units from its scaled value.
    double level_decimal(double level_scaled) const {
        size_t li = input_scaler.dim() - 1;
        return level_scaled * input_scaler.iqr[li] + input_scaler.median[li];
    }

    void build_schedule() {
        sched_taus.clear();
        tenor_point.assign(grid.size(), -1);
        swap_coupons.assign(grid.size(), 0);
        int max_year = 0;
        for (size_t j = 0; j < grid.size(); ++j) {
            double tau = grid.tenors[j];
            if (tau >= 1.0) {
                if (!nearly_integer(tau))
                    throw ConfigError("manifold: swap tenors >= 1Y must be whole years");
                max_year = std::max(max_year, static_cast<int>(std::llround(tau)));
            }
        }
        year_point.assign(static_cast<size_t>(max_year) + 1, -1);
        for (size_t j = 0; j < grid.size(); ++j) {
            if (grid.tenors[j] < 1.0) {
                sched_taus.push_back(grid.tenors[j]);
                tenor_point[j] = static_cast<int>(sched_taus.size()) - 1;
            }
        }
        for (int k = 1; k <= max_year; ++k) {
            sched_taus.push_back(static_cast<double>(k));
            year_point[static_cast<size_t>(k)] = static_cast<int>(sched_taus.size()) - 1;
        }
        for (size_t j = 0; j < grid.size(); ++j) {
            if (grid.tenors[j] >= 1.0) {
                int n = static_cast<int>(std::llround(grid.tenors[j]));
                swap_coupons[j] = n;
                tenor_point[j] = year_point[static_cast<size_t>(n)];
            }
        }
    }

    /// Checksum over everything the frozen decode path reads.
    uint64_t decode_checksum() const {
        uint64_t h = decoder.checksum();
        h = fnv1a64(std::span<const double>(embeddings), h);
        h = fnv1a64(std::span<const double>(input_scaler.median), h);
        h = fnv1a64(std::span<const double>(input_scaler.iqr), h);
        return h;
    }

    void assemble_encoder_input(std::span<const double> x, int ccy,
                                std::vector<double>& out) const {
        out.resize(static_cast<size_t>(enc_input_dim()));
        std::copy(x.begin(), x.end(), out.begin());
        if (cfg.conditioning) {
            const double* e = embedding(ccy);
            std::copy(e, e + cfg.embed_dim, out.begin() + static_cast<long>(x.size()));
        }
    }

    void assemble_decoder_input(std::span<const double> z, double tau, int ccy,
                                double level_scaled, std::vector<double>& out) const {
        out.resize(static_cast<size_t>(dec_input_dim()));
        std::copy(z.begin(), z.end(), out.begin());
        size_t pos = z.size();
        maturity_features(tau, out.data() + pos);
        pos += kMatFeatures;
        if (cfg.conditioning) {
            const double* e = embedding(ccy);
            std::copy(e, e + cfg.embed_dim, out.begin() + static_cast<long>(pos));
            pos += static_cast<size_t>(cfg.embed_dim);
        }
        if (cfg.levelscript) out[pos] = level_scaled;
    }
};

// head transforms --------------------------------------------------------

namespace detail {
/// Likelihood scale head: exp with a hard range. The cap stops the
/// precision race on near-degenerate data (the NLL is unbounded below as
/// precision diverges) while leaving plenty of headroom for real panels.
inline double clamped_exp(double raw, double& dout) {
    double c = std::clamp(raw, -20.0, 20.0);
    double v = std::exp(c);
    dout = (raw > -20.0 && raw < 20.0) ? v : 0.0;
    return v;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Inference ops
// ---------------------------------------------------------------------------

inline PosteriorParams encode(const ManifoldModel& m, std::span<const double> x, int ccy) {
    if (static_cast<int>(x.size()) != static_cast<int>(m.grid.size()) + 1)
        throw std::invalid_argument("encode: input must be scaled shape+level");
    std::vector<double> in;
    m.assemble_encoder_input(x, ccy, in);
    auto out = forward(m.encoder, in);
    const int d = m.latent_dim();
    PosteriorParams post;
    post.mu.assign(out.begin(), out.begin() + d);
    post.logvar.assign(out.begin() + d, out.begin() + 2 * d);
    return post;
}

inline std::vector<double> reparameterize(const PosteriorParams& post,
                                          std::span<const double> noise) {
    std::vector<double> z(post.mu.size());
    for (size_t i = 0; i < z.size(); ++i) {
        double lv = std::clamp(post.logvar[i], -40.0, 40.0);
        z[i] = post.mu[i] + std::exp(0.5 * lv) * noise[i];
    }
    return z;
}

/// Zero-coupon bond price from the decoder pseudo-yield head:
/// P = exp(-tau * (level + ytilde)). Positive and smooth by construction;
/// P may exceed 1 in negative-rate regimes.
inline double decode_bond(const ManifoldModel& m, std::span<const double> z, double tau,
                          int ccy, double level_scaled) {
    if (!(tau > 0.0)) throw std::domain_error("decode_bond: tau > 0 required");
    std::vector<double> in;
    m.assemble_decoder_input(z, tau, ccy, level_scaled, in);
    auto out = forward(m.decoder, in);
    double level = m.cfg.levelscript ? m.level_decimal(level_scaled) : 0.0;
    return std::exp(-tau * (level + out[0]));
}

/// Par swaps on the quote grid from decoded bond prices: money-market
/// quotes below 1Y, annual-coupon par swaps at and beyond.
inline std::vector<double> reprice_swaps(const ManifoldModel& m, std::span<const double> z,
                                         int ccy, double level_scaled) {
    std::vector<double> P(m.sched_taus.size());
    for (size_t p = 0; p < m.sched_taus.size(); ++p)
        P[p] = decode_bond(m, z, m.sched_taus[p], ccy, level_scaled);
    std::vector<double> swaps(m.grid.size());
    for (size_t j = 0; j < m.grid.size(); ++j) {
        if (m.swap_coupons[j] == 0) {
            swaps[j] = money_market_rate(P[static_cast<size_t>(m.tenor_point[j])],
                                         m.grid.tenors[j]);
        } else {
            double annuity = 0.0;
            for (int k = 1; k <= m.swap_coupons[j]; ++k)
                annuity += P[static_cast<size_t>(m.year_point[static_cast<size_t>(k)])];
            if (annuity <= 1e-12)
                throw std::domain_error("reprice_swaps: degenerate annuity");
            swaps[j] = (1.0 - P[static_cast<size_t>(m.tenor_point[j])]) / annuity;
        }
    }
    return swaps;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainRecord {
    int ccy = 0;
    std::string date;
    std::vector<double> x;            // scaled shape+level input
    std::vector<double> swaps_raw;    // observed quotes, decimal
    std::vector<double> swaps_scaled; // observed quotes in likelihood space
    double level_scaled = 0.0;
};

inline std::vector<TrainRecord> build_train_records(const DensePanel& panel,
                                                    const RobustScaler& input_scaler,
                                                    const RobustScaler& swap_scaler) {
    auto recs = decompose(panel);
    std::vector<TrainRecord> out;
    out.reserve(recs.size());
    for (const auto& r : recs) {
        TrainRecord t;
        t.ccy = r.currency;
        t.date = r.date;
        t.x = model_input(r, input_scaler);
        t.swaps_raw = recompose(r);
        t.swaps_scaled = swap_scaler.transform(t.swaps_raw);
        t.level_scaled = t.x.back();
        out.push_back(std::move(t));
    }
    return out;
}

struct ManifoldGrads {
    Grads encoder, decoder;
    std::vector<double> embeddings;

    static ManifoldGrads zeros_like(const ManifoldModel& m) {
        ManifoldGrads g;
        g.encoder = Grads::zeros_like(m.encoder);
        g.decoder = Grads::zeros_like(m.decoder);
        g.embeddings.assign(m.embeddings.size(), 0.0);
        return g;
    }
    void zero() {
        encoder.zero();
        decoder.zero();
        std::fill(embeddings.begin(), embeddings.end(), 0.0);
    }
    void scale(double s) {
        encoder.scale(s);
        decoder.scale(s);
        for (auto& v : embeddings) v *= s;
    }
};

struct ElboScratch {
    MlpWorkspace enc_ws;
    std::vector<MlpWorkspace> dec_ws;
    std::vector<double> enc_in, dec_in;
    std::vector<double> z, sigma;
    std::vector<double> P, ytilde, raw_scale, raw_dof;
    std::vector<double> swaps, annuity;
    std::vector<double> dP;  // dLoss/dP per schedule point
    std::vector<double> dxhat, draw_scale, draw_dof, dswap;
    std::vector<double> dz, dec_upstream, dec_in_grad, enc_upstream, enc_in_grad;
};

struct ElboTerms {
    double loss = 0.0;   // nll + kl_weight * kl
    double nll = 0.0;
    double kl = 0.0;
    double sq_err = 0.0;  // sum of squared decimal swap errors
};

/// Forward and (optionally) backward pass of the per-record ELBO. The
/// reconstruction likelihood lives in scaled-swap space; gradients flow
/// into decoder, encoder and embeddings by hand-assembled reverse passes.
inline ElboTerms elbo_record(const ManifoldModel& m, const TrainRecord& rec,
                             std::span<const double> noise, double kl_weight,
                             ManifoldGrads* grads, ElboScratch& sc) {
    const int d = m.latent_dim();
    const size_t n_tenor = m.grid.size();
    const size_t n_sched = m.sched_taus.size();
    const bool student = m.cfg.likelihood == Likelihood::StudentT;

    // encode
    m.assemble_encoder_input(rec.x, rec.ccy, sc.enc_in);
    forward(m.encoder, sc.enc_in, sc.enc_ws);
    const auto& enc_out = sc.enc_ws.a.back();
    std::span<const double> post_mu(enc_out.data(), static_cast<size_t>(d));
    std::span<const double> post_logvar(enc_out.data() + d, static_cast<size_t>(d));

    // reparameterize
    sc.z.resize(static_cast<size_t>(d));
    sc.sigma.resize(static_cast<size_t>(d));
    auto& sigma = sc.sigma;
    for (int i = 0; i < d; ++i) {
        double lv = std::clamp(post_logvar[static_cast<size_t>(i)], -40.0, 40.0);
        sigma[static_cast<size_t>(i)] = std::exp(0.5 * lv);
        sc.z[static_cast<size_t>(i)] =
            post_mu[static_cast<size_t>(i)] + sigma[static_cast<size_t>(i)] * noise[i];
    }

    // decode the whole schedule
    if (sc.dec_ws.size() != n_sched) sc.dec_ws.resize(n_sched);
    sc.P.resize(n_sched);
    sc.ytilde.resize(n_sched);
    sc.raw_scale.resize(n_sched);
    sc.raw_dof.resize(n_sched);
    const double level = m.cfg.levelscript ? m.level_decimal(rec.level_scaled) : 0.0;
    for (size_t p = 0; p < n_sched; ++p) {
        m.assemble_decoder_input(sc.z, m.sched_taus[p], rec.ccy, rec.level_scaled, sc.dec_in);
        forward(m.decoder, sc.dec_in, sc.dec_ws[p]);
        const auto& out = sc.dec_ws[p].a.back();
        sc.ytilde[p] = out[0];
        sc.raw_scale[p] = out[1];
        sc.raw_dof[p] = out[2];
        sc.P[p] = std::exp(-m.sched_taus[p] * (level + sc.ytilde[p]));
    }

    // reprice
    sc.swaps.resize(n_tenor);
    sc.annuity.assign(n_tenor, 0.0);
    for (size_t j = 0; j < n_tenor; ++j) {
        auto tp = static_cast<size_t>(m.tenor_point[j]);
        if (m.swap_coupons[j] == 0) {
            sc.swaps[j] = (1.0 / sc.P[tp] - 1.0) / m.grid.tenors[j];
        } else {
            double annuity = 0.0;
            for (int k = 1; k <= m.swap_coupons[j]; ++k)
                annuity += sc.P[static_cast<size_t>(m.year_point[static_cast<size_t>(k)])];
            sc.annuity[j] = annuity;
            sc.swaps[j] = (1.0 - sc.P[tp]) / annuity;
        }
    }

    ElboTerms terms;
    for (int i = 0; i < d; ++i) {
        double s2 = std::exp(post_logvar[static_cast<size_t>(i)]);
        terms.kl += 0.5 * (post_mu[static_cast<size_t>(i)] * post_mu[static_cast<size_t>(i)] +
                           s2 - post_logvar[static_cast<size_t>(i)] - 1.0);
    }

    // per-tenor likelihood in scaled-swap space
    sc.dxhat.assign(n_tenor, 0.0);
    sc.draw_scale.assign(n_tenor, 0.0);
    sc.draw_dof.assign(n_tenor, 0.0);
    auto& dL_dxhat_scaled = sc.dxhat;
    auto& dL_draw_scale = sc.draw_scale;
    auto& dL_draw_dof = sc.draw_dof;
    for (size_t j = 0; j < n_tenor; ++j) {
        auto tp = static_cast<size_t>(m.tenor_point[j]);
        double xhat_scaled = (sc.swaps[j] - m.swap_scaler.median[j]) / m.swap_scaler.iqr[j];
        double e = rec.swaps_scaled[j] - xhat_scaled;
        double de_raw = sc.swaps[j] - rec.swaps_raw[j];
        terms.sq_err += de_raw * de_raw;
        if (student) {
            double dlam;
            double lam = detail::clamped_exp(sc.raw_scale[tp], dlam);
            double nu = 2.0 + softplus(sc.raw_dof[tp]);
            double u = 1.0 + lam * e * e / nu;
            double c = 0.5 * (nu + 1.0);
            terms.nll += -std::lgamma(c) + std::lgamma(0.5 * nu) -
                         0.5 * std::log(lam / (std::numbers::pi * nu)) + c * std::log1p(lam * e * e / nu);
            if (grads) {
                dL_dxhat_scaled[j] = -(nu + 1.0) * lam * e / (nu * u);
                double dnll_dlam = -0.5 / lam + c * (e * e / nu) / u;
                dL_draw_scale[j] = dnll_dlam * dlam;
                double dnll_dnu = -0.5 * detail::digamma(c) + 0.5 * detail::digamma(0.5 * nu) +
                                  0.5 / nu + 0.5 * std::log1p(lam * e * e / nu) -
                                  c * (lam * e * e / (nu * nu)) / u;
                dL_draw_dof[j] = dnll_dnu * sigmoid(sc.raw_dof[tp]);
            }
        } else {
            double dvar;
            double var = detail::clamped_exp(sc.raw_scale[tp], dvar);
            terms.nll += 0.5 * (std::log(2.0 * std::numbers::pi * var) + e * e / var);
            if (grads) {
                dL_dxhat_scaled[j] = -e / var;
                dL_draw_scale[j] = 0.5 * (1.0 - e * e / var) / var * dvar;
            }
        }
    }
    terms.loss = terms.nll + kl_weight * terms.kl;
    if (!grads) return terms;

    // ---- backward ----
    // swap-space chain: dL/dswap_j
    sc.dswap.resize(n_tenor);
    auto& dL_dswap = sc.dswap;
    for (size_t j = 0; j < n_tenor; ++j) dL_dswap[j] = dL_dxhat_scaled[j] / m.swap_scaler.iqr[j];

    // swaps -> bond prices
    sc.dP.assign(n_sched, 0.0);
    for (size_t j = 0; j < n_tenor; ++j) {
        auto tp = static_cast<size_t>(m.tenor_point[j]);
        if (m.swap_coupons[j] == 0) {
            sc.dP[tp] += dL_dswap[j] * (-1.0 / (sc.P[tp] * sc.P[tp] * m.grid.tenors[j]));
        } else {
            double inv_a = 1.0 / sc.annuity[j];
            for (int k = 1; k <= m.swap_coupons[j]; ++k) {
                auto yp = static_cast<size_t>(m.year_point[static_cast<size_t>(k)]);
                sc.dP[yp] += dL_dswap[j] * (-sc.swaps[j] * inv_a);
            }
            sc.dP[tp] += dL_dswap[j] * (-inv_a);
        }
    }

    // bond prices + heads -> decoder params, z, embedding
    sc.dz.assign(static_cast<size_t>(d), 0.0);
    sc.dec_upstream.assign(3, 0.0);
    sc.dec_in_grad.resize(static_cast<size_t>(m.dec_input_dim()));
    auto& dz = sc.dz;
    auto& upstream = sc.dec_upstream;
    auto& dec_in_grad = sc.dec_in_grad;
    const int emb_off = d + ManifoldModel::kMatFeatures;
    for (size_t p = 0; p < n_sched; ++p) {
        upstream[0] = sc.dP[p] * (-m.sched_taus[p] * sc.P[p]);
        upstream[1] = 0.0;
        upstream[2] = 0.0;
        for (size_t j = 0; j < n_tenor; ++j) {
            if (static_cast<size_t>(m.tenor_point[j]) == p) {
                upstream[1] += dL_draw_scale[j];
                upstream[2] += dL_draw_dof[j];
            }
        }
        if (upstream[0] == 0.0 && upstream[1] == 0.0 && upstream[2] == 0.0) continue;
        backward(m.decoder, sc.dec_ws[p], upstream, &grads->decoder, dec_in_grad);
        for (int i = 0; i < d; ++i) dz[static_cast<size_t>(i)] += dec_in_grad[static_cast<size_t>(i)];
        if (m.cfg.conditioning) {
            double* ge = grads->embeddings.data() +
                         static_cast<size_t>(rec.ccy) * static_cast<size_t>(m.cfg.embed_dim);
            for (int i = 0; i < m.cfg.embed_dim; ++i)
                ge[i] += dec_in_grad[static_cast<size_t>(emb_off + i)];
        }
    }

    // reparameterization + KL -> encoder heads
    sc.enc_upstream.resize(static_cast<size_t>(2 * d));
    auto& enc_upstream = sc.enc_upstream;
    for (int i = 0; i < d; ++i) {
        auto ii = static_cast<size_t>(i);
        double dmu = dz[ii] + kl_weight * post_mu[ii];
        bool clamped = post_logvar[ii] <= -40.0 || post_logvar[ii] >= 40.0;
        double dlv = clamped ? 0.0 : dz[ii] * noise[i] * 0.5 * sigma[ii];
        dlv += kl_weight * 0.5 * (std::exp(post_logvar[ii]) - 1.0);
        enc_upstream[ii] = dmu;
        enc_upstream[static_cast<size_t>(d) + ii] = dlv;
    }
    sc.enc_in_grad.resize(static_cast<size_t>(m.enc_input_dim()));
    auto& enc_in_grad = sc.enc_in_grad;
    backward(m.encoder, sc.enc_ws, enc_upstream, &grads->encoder, enc_in_grad);
    if (m.cfg.conditioning) {
        double* ge = grads->embeddings.data() +
                     static_cast<size_t>(rec.ccy) * static_cast<size_t>(m.cfg.embed_dim);
        size_t off = m.grid.size() + 1;
        for (int i = 0; i < m.cfg.embed_dim; ++i)
            ge[i] += enc_in_grad[off + static_cast<size_t>(i)];
    }
    return terms;
}

/// Mean ELBO loss and gradients over a batch.
inline std::pair<ElboTerms, ManifoldGrads> elbo_loss(const ManifoldModel& m,
                                                     std::span<const TrainRecord> batch,
                                                     std::span<const double> noise,
                                                     double kl_weight) {
    if (batch.empty()) throw TrainError("elbo_loss: empty batch");
    if (noise.size() != batch.size() * static_cast<size_t>(m.latent_dim()))
        throw std::invalid_argument("elbo_loss: noise shape mismatch");
    ManifoldGrads grads = ManifoldGrads::zeros_like(m);
    ElboScratch sc;
    ElboTerms total;
    for (size_t i = 0; i < batch.size(); ++i) {
        auto terms = elbo_record(m, batch[i],
                                 noise.subspan(i * static_cast<size_t>(m.latent_dim()),
                                               static_cast<size_t>(m.latent_dim())),
                                 kl_weight, &grads, sc);
        if (!std::isfinite(terms.loss))
            throw TrainError("elbo_loss: non-finite loss at batch index " + std::to_string(i));
        total.loss += terms.loss;
        total.nll += terms.nll;
        total.kl += terms.kl;
        total.sq_err += terms.sq_err;
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    total.loss *= inv;
    total.nll *= inv;
    total.kl *= inv;
    total.sq_err *= inv;
    grads.scale(inv);
    return {total, grads};
}

struct TrainLogRow {
    int epoch = 0;
    double loss = 0.0;
    double kl = 0.0;
    double recon_rmse_bps = 0.0;
};

namespace detail {
/// Cosine learning-rate decay with a 2% floor; Adam's steady-state step
/// size tracks lr, so decay is what lets late epochs settle below it.
inline double lr_decay(int epoch, int total) {
    double t = total > 1 ? static_cast<double>(epoch) / static_cast<double>(total - 1) : 1.0;
    return std::max(0.002, 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}
}  // namespace detail

struct ManifoldTrainResult {
    ManifoldModel model;
    std::vector<TrainLogRow> log;
    bool diverged = false;
    double final_recon_rmse_bps = 0.0;  // posterior-mean reconstruction
};

/// Deterministic reconstruction RMSE (bps) over a record set: encode to the
/// posterior mean, reprice, compare against observed quotes.
inline double reconstruction_rmse_bps(const ManifoldModel& m,
                                      std::span<const TrainRecord> records) {
    double sq = 0.0;
    size_t n = 0;
    for (const auto& rec : records) {
        auto post = encode(m, rec.x, rec.ccy);
        auto swaps = reprice_swaps(m, post.mu, rec.ccy, rec.level_scaled);
        for (size_t k = 0; k < swaps.size(); ++k) {
            double e = swaps[k] - rec.swaps_raw[k];
            sq += e * e;
            ++n;
        }
    }
    return std::sqrt(sq / static_cast<double>(n)) * 1e4;
}

inline ManifoldModel make_manifold_model(const ManifoldConfig& cfg, const TenorGrid& grid,
                                         std::vector<std::string> currencies,
                                         RobustScaler input_scaler, RobustScaler swap_scaler) {
    cfg.validate();
    ManifoldModel m;
    m.cfg = cfg;
    m.grid = grid;
    m.currencies = std::move(currencies);
    m.input_scaler = std::move(input_scaler);
    m.swap_scaler = std::move(swap_scaler);
    m.build_schedule();

    std::vector<int> enc_widths{m.enc_input_dim()};
    std::vector<Activation> enc_acts;
    for (int w : cfg.encoder_widths) {
        enc_widths.push_back(w);
        enc_acts.push_back(Activation::Tanh);
    }
    enc_widths.push_back(2 * cfg.latent_dim);
    enc_acts.push_back(Activation::Identity);
    m.encoder = Mlp::create(enc_widths, enc_acts);

    std::vector<int> dec_widths{m.dec_input_dim()};
    std::vector<Activation> dec_acts;
    for (int w : cfg.decoder_widths) {
        dec_widths.push_back(w);
        dec_acts.push_back(Activation::Tanh);
    }
    dec_widths.push_back(3);
    dec_acts.push_back(Activation::Identity);
    m.decoder = Mlp::create(dec_widths, dec_acts);

    Rng rng(derive_seed(cfg.seed, "manifold/init"));
    m.encoder.init_xavier(rng);
    m.decoder.init_xavier(rng);
    // Small output layer keeps the initial pseudo-yield near zero; rate-scale
    // targets otherwise start ~10 scaled units away and swamp the optimizer.
    for (auto& w : m.decoder.W.back()) w *= 0.1;
    m.embeddings.resize(m.currencies.size() * static_cast<size_t>(cfg.embed_dim));
    for (auto& e : m.embeddings) e = 0.1 * rng.normal();

    // Head bias priors: start the likelihood scale near the data scale so
    // Adam reaches the optimum in thousands, not millions, of steps.
    m.decoder.b.back()[1] = cfg.likelihood == Likelihood::StudentT ? 4.0 : -4.0;
    m.decoder.b.back()[2] = 2.0;  // dof = 2 + softplus(2) ~ 4.1
    return m;
}

inline ManifoldTrainResult train_manifold(const ManifoldConfig& cfg, const DensePanel& train) {
    cfg.validate();
    auto recs = decompose(train);
    if (recs.size() < 2) throw DataError("train_manifold: need >= 2 records");
    auto input_scaler = fit_input_scaler(recs);
    std::vector<std::vector<double>> swap_rows;
    swap_rows.reserve(recs.size());
    for (const auto& r : recs) swap_rows.push_back(recompose(r));
    auto swap_scaler = RobustScaler::fit(swap_rows);

    ManifoldTrainResult res;
    res.model = make_manifold_model(cfg, train.grid, train.currencies,
                                    std::move(input_scaler), std::move(swap_scaler));
    ManifoldModel& m = res.model;
    auto records = build_train_records(train, m.input_scaler, m.swap_scaler);

    Rng shuffle_rng(derive_seed(cfg.seed, "manifold/shuffle"));
    Rng noise_rng(derive_seed(cfg.seed, "manifold/noise"));
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    auto enc_opt = AdamState::init(m.encoder, acfg);
    auto dec_opt = AdamState::init(m.decoder, acfg);
    auto emb_opt = VecAdamState::init(m.embeddings.size(), acfg);

    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    ManifoldGrads grads = ManifoldGrads::zeros_like(m);
    ElboScratch sc;
    std::vector<double> noise(static_cast<size_t>(m.latent_dim()));

    // last completed-epoch snapshot, restored if the loss goes non-finite
    Mlp enc_snap = m.encoder, dec_snap = m.decoder;
    std::vector<double> emb_snap = m.embeddings;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double kl_w = cfg.kl.weight(epoch, cfg.epochs);
        double lr_e = cfg.lr * detail::lr_decay(epoch, cfg.epochs);
        enc_opt.cfg.lr = lr_e;
        dec_opt.cfg.lr = lr_e;
        emb_opt.cfg.lr = lr_e;
        shuffle_rng.shuffle(order);
        double ep_loss = 0.0, ep_kl = 0.0, ep_sq = 0.0;
        size_t count = 0;
        bool fault = false;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            grads.zero();
            double batch_loss = 0.0;
            for (size_t i = start; i < stop; ++i) {
                noise_rng.fill_normal(noise);
                auto terms =
                    elbo_record(m, records[order[i]], noise, kl_w, &grads, sc);
                batch_loss += terms.loss;
                ep_loss += terms.loss;
                ep_kl += terms.kl;
                ep_sq += terms.sq_err;
                ++count;
            }
            if (!std::isfinite(batch_loss)) {
                fault = true;
                break;
            }
            double inv = 1.0 / static_cast<double>(stop - start);
            grads.scale(inv);
            adam_step(m.encoder, grads.encoder, enc_opt);
            adam_step(m.decoder, grads.decoder, dec_opt);
            adam_step(m.embeddings, grads.embeddings, emb_opt);
        }
        if (fault) {
            m.encoder = enc_snap;
            m.decoder = dec_snap;
            m.embeddings = emb_snap;
            res.diverged = true;
            break;
        }
        enc_snap = m.encoder;
        dec_snap = m.decoder;
        emb_snap = m.embeddings;
        TrainLogRow row;
        row.epoch = epoch;
        row.loss = ep_loss / static_cast<double>(count);
        row.kl = ep_kl / static_cast<double>(count);
        row.recon_rmse_bps =
            std::sqrt(ep_sq / static_cast<double>(count * m.grid.size())) * 1e4;
        res.log.push_back(row);
    }
    m.frozen = true;
    m.frozen_checksum = m.decode_checksum();
    res.final_recon_rmse_bps = reconstruction_rmse_bps(m, records);
    return res;
}

// ---------------------------------------------------------------------------
// Panel encoding (posterior means)
// ---------------------------------------------------------------------------

/// Historical latent path of one currency (posterior means), with the
/// matching scaled levels the decoder needs.
struct LatentPath {
    int ccy = 0;
    std::vector<std::string> dates;
    std::vector<double> z;             // [row][latent_dim]
    std::vector<double> level_scaled;  // per row
    std::vector<double> logvar;        // [row][latent_dim]
};

inline std::vector<LatentPath> encode_panel(const ManifoldModel& m, const DensePanel& panel) {
    if (panel.currencies != m.currencies)
        throw std::out_of_range("encode_panel: panel currencies differ from the model's");
    std::vector<LatentPath> out;
    auto recs = build_train_records(panel, m.input_scaler, m.swap_scaler);
    out.resize(panel.n_currencies());
    for (size_t c = 0; c < panel.n_currencies(); ++c) out[c].ccy = static_cast<int>(c);
    for (const auto& r : recs) {
        auto ci = static_cast<size_t>(r.ccy);
        auto post = encode(m, r.x, r.ccy);
        out[ci].dates.push_back(r.date);
        out[ci].z.insert(out[ci].z.end(), post.mu.begin(), post.mu.end());
        out[ci].logvar.insert(out[ci].logvar.end(), post.logvar.begin(), post.logvar.end());
        out[ci].level_scaled.push_back(r.level_scaled);
    }
    return out;
}

}  // namespace arbfree
