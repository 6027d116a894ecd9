// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "arbfree/adam.hpp"
#include "arbfree/jsonutil.hpp"
#include "arbfree/manifold.hpp"
#include "arbfree/mlp.hpp"
#include "arbfree/rng.hpp"

namespace arbfree {

enum class DiffusionParam { Diagonal, Cholesky };

inline std::string diffusion_name(DiffusionParam p) {
    return p == DiffusionParam::Diagonal ? "diagonal" : "cholesky";
}
inline DiffusionParam diffusion_from_name(std::string_view s) {
    if (s == "diagonal") return DiffusionParam::Diagonal;
    if (s == "cholesky") return DiffusionParam::Cholesky;
    throw ConfigError("unknown diffusion tag: " + std::string(s));
}

struct DynamicsConfig {
    std::vector<int> widths{256, 256, 256};
    double beta = 1.0;    // no-arbitrage penalty weight
    double gamma = 1e-3;  // market-price-of-risk regularizer
    double eps = 1e-8;    // normalizer floor
    int colloc_states = 64;
    int colloc_extra_taus = 8;
    double colloc_jitter = 0.1;
    double dt = 1.0 / 252.0;
    int epochs = 100;
    int batch_size = 128;
    double lr = 1e-3;
    uint64_t seed = 0;
    DiffusionParam diffusion = DiffusionParam::Diagonal;
    bool conditioning = false;

    void validate() const {
        if (widths.empty()) throw ConfigError("dynamics: widths must be nonempty");
        if (beta < 0.0 || gamma < 0.0) throw ConfigError("dynamics: beta, gamma >= 0");
        if (!(eps > 0.0)) throw ConfigError("dynamics: eps > 0");
        if (!(dt > 0.0)) throw ConfigError("dynamics: dt > 0");
        if (colloc_states < 1 || colloc_extra_taus < 0)
            throw ConfigError("dynamics: collocation counts");
        if (epochs < 1 || batch_size < 1) throw ConfigError("dynamics: epochs/batch_size >= 1");
        if (!(lr > 0.0)) throw ConfigError("dynamics: lr > 0");
    }

    json to_json() const {
        return json{{"widths", widths},
                    {"beta", beta},
                    {"gamma", gamma},
                    {"eps", eps},
                    {"colloc_states", colloc_states},
                    {"colloc_extra_taus", colloc_extra_taus},
                    {"colloc_jitter", colloc_jitter},
                    {"dt", dt},
                    {"epochs", epochs},
                    {"batch_size", batch_size},
                    {"lr", lr},
                    {"seed", seed},
                    {"diffusion", diffusion_name(diffusion)},
                    {"conditioning", conditioning}};
    }

    static DynamicsConfig from_json(const json& j) {
        check_keys(j,
                   {"widths", "beta", "gamma", "eps", "colloc_states",
                    "colloc_extra_taus", "colloc_jitter", "dt", "epochs", "batch_size",
                    "lr", "seed", "diffusion", "conditioning"},
                   "dynamics config");
        DynamicsConfig c;
        c.widths = get_or<std::vector<int>>(j, "widths", c.widths);
        c.beta = get_or<double>(j, "beta", c.beta);
        c.gamma = get_or<double>(j, "gamma", c.gamma);
        c.eps = get_or<double>(j, "eps", c.eps);
        c.colloc_states = get_or<int>(j, "colloc_states", c.colloc_states);
        c.colloc_extra_taus = get_or<int>(j, "colloc_extra_taus", c.colloc_extra_taus);
        c.colloc_jitter = get_or<double>(j, "colloc_jitter", c.colloc_jitter);
        c.dt = get_or<double>(j, "dt", c.dt);
        c.epochs = get_or<int>(j, "epochs", c.epochs);
        c.batch_size = get_or<int>(j, "batch_size", c.batch_size);
        c.lr = get_or<double>(j, "lr", c.lr);
        c.seed = get_or<uint64_t>(j, "seed", c.seed);
        if (j.contains("diffusion"))
            c.diffusion = diffusion_from_name(j.at("diffusion").get<std::string>());
        c.conditioning = get_or<bool>(j, "conditioning", c.conditioning);
        c.validate();
        return c;
    }
};

/// Physical drift, diffusion factor (lower-triangular, positive diagonal)
/// and market price of risk at one latent state. The risk-neutral drift is
/// always derived, never stored.
struct SdeFields {
    std::vector<double> mu_p;    // d
    std::vector<double> sigma;   // d x d, row-major lower triangular
    std::vector<double> lambda;  // d

    int dim() const { return static_cast<int>(mu_p.size()); }

    /// mu_q = mu_p - Sigma * lambda (Girsanov shift).
    std::vector<double> mu_q() const {
        const int d = dim();
        std::vector<double> out(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) {
            double acc = mu_p[static_cast<size_t>(i)];
            for (int j = 0; j < d; ++j)
                acc -= sigma[static_cast<size_t>(i * d + j)] * lambda[static_cast<size_t>(j)];
            out[static_cast<size_t>(i)] = acc;
        }
        return out;
    }

    /// Sigma Sigma^T.
    std::vector<double> covariance() const {
        const int d = dim();
        std::vector<double> c(static_cast<size_t>(d) * static_cast<size_t>(d), 0.0);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int k = 0; k < d; ++k)
                    acc += sigma[static_cast<size_t>(i * d + k)] *
                           sigma[static_cast<size_t>(j * d + k)];
                c[static_cast<size_t>(i * d + j)] = acc;
            }
        return c;
    }
};

// ---------------------------------------------------------------------------
// Bond maps: the decoder view used by the PDE, plus an analytic oracle
// ---------------------------------------------------------------------------

struct BondPoint {
    double value = 0.0;
    double dtau = 0.0;
    std::vector<double> grad_z;  // d
    std::vector<double> hess_z;  // d x d
};

/// Differentiable map (z, tau) -> bond price with all derivatives the
/// martingale PDE needs.
class BondMap {
public:
    virtual ~BondMap() = default;
    virtual int dim() const = 0;
    virtual BondPoint eval(std::span<const double> z, double tau) const = 0;
    virtual double short_rate(std::span<const double> z) const = 0;
};

/// Vasicek closed form D = exp(A(tau) - B(tau) z1). With mu_q = kappa(theta
/// - z1), constant sigma and r = z1 the PDE residual vanishes identically,
/// which pins down the residual assembly end to end.
class VasicekBondMap final : public BondMap {
public:
    VasicekBondMap(double kappa, double theta, double sigma, int d = 1)
        : kappa_(kappa), theta_(theta), sigma_(sigma), d_(d) {
        if (!(kappa > 0.0)) throw ConfigError("VasicekBondMap: kappa > 0");
    }

    int dim() const override { return d_; }

    BondPoint eval(std::span<const double> z, double tau) const override {
        double B = (1.0 - std::exp(-kappa_ * tau)) / kappa_;
        double A = (theta_ - sigma_ * sigma_ / (2.0 * kappa_ * kappa_)) * (B - tau) -
                   sigma_ * sigma_ * B * B / (4.0 * kappa_);
        double Aprime = -kappa_ * theta_ * B + 0.5 * sigma_ * sigma_ * B * B;
        double Bprime = 1.0 - kappa_ * B;
        BondPoint p;
        p.value = std::exp(A - B * z[0]);
        p.dtau = (Aprime - Bprime * z[0]) * p.value;
        p.grad_z.assign(static_cast<size_t>(d_), 0.0);
        p.grad_z[0] = -B * p.value;
        p.hess_z.assign(static_cast<size_t>(d_) * static_cast<size_t>(d_), 0.0);
        p.hess_z[0] = B * B * p.value;
        return p;
    }

    double short_rate(std::span<const double> z) const override { return z[0]; }

    /// Matching dynamics for the oracle (lambda = 0, so mu_p = mu_q).
    SdeFields fields_at(std::span<const double> z) const {
        SdeFields f;
        f.mu_p.assign(static_cast<size_t>(d_), 0.0);
        f.mu_p[0] = kappa_ * (theta_ - z[0]);
        f.sigma.assign(static_cast<size_t>(d_) * static_cast<size_t>(d_), 0.0);
        for (int i = 0; i < d_; ++i)
            f.sigma[static_cast<size_t>(i * d_ + i)] = i == 0 ? sigma_ : 1e-8;
        f.lambda.assign(static_cast<size_t>(d_), 0.0);
        return f;
    }

private:
    double kappa_, theta_, sigma_;
    int d_;
};

/// Frozen Stage A decoder as a bond map for one (currency, level) context.
/// Derivatives chain through the exponential pseudo-yield head:
///   D = exp(-tau Y),  Y = level + ytilde(z, tau)
///   dD/dtau = -D (Y + tau dytilde/dtau)
///   grad_z D = -tau D grad_z ytilde
///   hess_z D = D (tau^2 g g^T - tau hess_z ytilde)
class DecoderBondMap final : public BondMap {
public:
    DecoderBondMap(const ManifoldModel& m, int ccy, double level_scaled)
        : m_(&m), ccy_(ccy), level_scaled_(level_scaled) {
        level_ = m.cfg.levelscript ? m.level_decimal(level_scaled) : 0.0;
        if (m.cfg.conditioning) m.embedding(ccy);  // validates the index
    }

    int dim() const override { return m_->latent_dim(); }

    BondPoint eval(std::span<const double> z, double tau) const override {
        if (!(tau > 0.0)) throw std::domain_error("DecoderBondMap: tau > 0 required");
        const int d = m_->latent_dim();
        std::vector<double> in;
        m_->assemble_decoder_input(z, tau, ccy_, level_scaled_, in);
        const auto in_dim = static_cast<size_t>(m_->dec_input_dim());

        double ytilde = forward(m_->decoder, in)[0];
        std::vector<double> grad(in_dim), col(in_dim), dir(in_dim, 0.0);
        std::vector<double> gy(static_cast<size_t>(d));
        std::vector<double> hy(static_cast<size_t>(d) * static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) {
            dir[static_cast<size_t>(i)] = 1.0;
            hvp(m_->decoder, in, 0, dir, grad, col);
            dir[static_cast<size_t>(i)] = 0.0;
            for (int r = 0; r < d; ++r)
                hy[static_cast<size_t>(r * d + i)] = col[static_cast<size_t>(r)];
        }
        for (int i = 0; i < d; ++i) gy[static_cast<size_t>(i)] = grad[static_cast<size_t>(i)];
        // symmetrize the z-block
        for (int r = 0; r < d; ++r)
            for (int c = r + 1; c < d; ++c) {
                double mval = 0.5 * (hy[static_cast<size_t>(r * d + c)] +
                                     hy[static_cast<size_t>(c * d + r)]);
                hy[static_cast<size_t>(r * d + c)] = mval;
                hy[static_cast<size_t>(c * d + r)] = mval;
            }
        double dphi[ManifoldModel::kMatFeatures];
        ManifoldModel::maturity_features_dtau(tau, dphi);
        double dydtau = 0.0;
        for (int f = 0; f < ManifoldModel::kMatFeatures; ++f)
            dydtau += grad[static_cast<size_t>(d + f)] * dphi[f];

        BondPoint p;
        double Y = level_ + ytilde;
        p.value = std::exp(-tau * Y);
        p.dtau = -p.value * (Y + tau * dydtau);
        p.grad_z.resize(static_cast<size_t>(d));
        p.hess_z.resize(static_cast<size_t>(d) * static_cast<size_t>(d));
        for (int i = 0; i < d; ++i)
            p.grad_z[static_cast<size_t>(i)] = -tau * p.value * gy[static_cast<size_t>(i)];
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c)
                p.hess_z[static_cast<size_t>(r * d + c)] =
                    p.value * (tau * tau * gy[static_cast<size_t>(r)] * gy[static_cast<size_t>(c)] -
                               tau * hy[static_cast<size_t>(r * d + c)]);
        return p;
    }

    /// r = -d_tau log D at eps_tau, exact through the pseudo-yield head:
    /// r = level + ytilde + tau * dytilde/dtau evaluated at eps_tau.
    double short_rate(std::span<const double> z) const override {
        const double eps_tau = 1e-4;
        std::vector<double> in;
        m_->assemble_decoder_input(z, eps_tau, ccy_, level_scaled_, in);
        MlpWorkspace ws;
        forward(m_->decoder, in, ws);
        double ytilde = ws.a.back()[0];
        std::vector<double> upstream(3, 0.0);
        upstream[0] = 1.0;
        std::vector<double> in_grad(in.size());
        backward(m_->decoder, ws, upstream, nullptr, in_grad);
        double dphi[ManifoldModel::kMatFeatures];
        ManifoldModel::maturity_features_dtau(eps_tau, dphi);
        double dydtau = 0.0;
        for (int f = 0; f < ManifoldModel::kMatFeatures; ++f)
            dydtau += in_grad[static_cast<size_t>(m_->latent_dim() + f)] * dphi[f];
        return level_ + ytilde + eps_tau * dydtau;
    }

private:
    const ManifoldModel* m_;
    int ccy_;
    double level_scaled_;
    double level_ = 0.0;
};

// ---------------------------------------------------------------------------
// Dynamics model
// ---------------------------------------------------------------------------

struct DynamicsModel {
    DynamicsConfig cfg;
    std::shared_ptr<const ManifoldModel> manifold;
    Mlp paramnet;
    uint64_t manifold_checksum = 0;

    int dim() const { return manifold->latent_dim(); }
    int sigma_param_count() const {
        int d = dim();
        return cfg.diffusion == DiffusionParam::Diagonal ? d : d * (d + 1) / 2;
    }
    int paramnet_out_dim() const { return 2 * dim() + sigma_param_count(); }
    int paramnet_in_dim() const {
        return dim() + (cfg.conditioning ? manifold->cfg.embed_dim : 0);
    }

    void assemble_input(std::span<const double> z, int ccy, std::vector<double>& in) const {
        in.resize(static_cast<size_t>(paramnet_in_dim()));
        std::copy(z.begin(), z.end(), in.begin());
        if (cfg.conditioning) {
            const double* e = manifold->embedding(ccy);
            std::copy(e, e + manifold->cfg.embed_dim, in.begin() + dim());
        }
    }

    void verify_frozen() const {
        if (!manifold || !manifold->frozen)
            throw LineageError("dynamics: manifold decoder is not frozen");
        if (manifold->decode_checksum() != manifold->frozen_checksum)
            throw LineageError("dynamics: frozen decoder checksum mismatch");
    }
};

namespace detail {
/// Maps raw ParamNet outputs to fields; optionally reports the softplus
/// slopes needed to push gradients back through the diagonal.
inline SdeFields fields_from_raw(std::span<const double> raw, int d, DiffusionParam diff,
                                 std::vector<double>* diag_slope = nullptr) {
    SdeFields f;
    f.mu_p.assign(raw.begin(), raw.begin() + d);
    f.sigma.assign(static_cast<size_t>(d) * static_cast<size_t>(d), 0.0);
    if (diag_slope) diag_slope->assign(static_cast<size_t>(d), 0.0);
    size_t pos = static_cast<size_t>(d);
    if (diff == DiffusionParam::Diagonal) {
        for (int i = 0; i < d; ++i) {
            double r = raw[pos++];
            f.sigma[static_cast<size_t>(i * d + i)] = softplus(r);
            if (diag_slope) (*diag_slope)[static_cast<size_t>(i)] = sigmoid(r);
        }
    } else {
        for (int i = 0; i < d; ++i)
            for (int j = 0; j <= i; ++j) {
                double r = raw[pos++];
                if (i == j) {
                    f.sigma[static_cast<size_t>(i * d + j)] = softplus(r);
                    if (diag_slope) (*diag_slope)[static_cast<size_t>(i)] = sigmoid(r);
                } else {
                    f.sigma[static_cast<size_t>(i * d + j)] = r;
                }
            }
    }
    f.lambda.assign(raw.begin() + static_cast<long>(pos),
                    raw.begin() + static_cast<long>(pos) + d);
    return f;
}

/// Chain rule back to raw outputs: upstream gets (dL/dmu, dL/dSigma, dL/dlambda).
inline void raw_upstream_from_fields(std::span<const double> dmu,
                                     std::span<const double> dsigma,  // d x d
                                     std::span<const double> dlambda,
                                     std::span<const double> diag_slope, int d,
                                     DiffusionParam diff, std::vector<double>& upstream) {
    size_t pos = 0;
    for (int i = 0; i < d; ++i) upstream[pos++] = dmu[static_cast<size_t>(i)];
    if (diff == DiffusionParam::Diagonal) {
        for (int i = 0; i < d; ++i)
            upstream[pos++] = dsigma[static_cast<size_t>(i * d + i)] * diag_slope[static_cast<size_t>(i)];
    } else {
        for (int i = 0; i < d; ++i)
            for (int j = 0; j <= i; ++j) {
                double g = dsigma[static_cast<size_t>(i * d + j)];
                upstream[pos++] = i == j ? g * diag_slope[static_cast<size_t>(i)] : g;
            }
    }
    for (int i = 0; i < d; ++i) upstream[pos++] = dlambda[static_cast<size_t>(i)];
}

/// In-place Cholesky of a d x d SPD matrix; returns false when a pivot
/// underflows.
inline bool cholesky(std::vector<double>& a, int d) {
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double acc = a[static_cast<size_t>(i * d + j)];
            for (int k = 0; k < j; ++k)
                acc -= a[static_cast<size_t>(i * d + k)] * a[static_cast<size_t>(j * d + k)];
            if (i == j) {
                if (acc <= 1e-300) return false;
                a[static_cast<size_t>(i * d + i)] = std::sqrt(acc);
            } else {
                a[static_cast<size_t>(i * d + j)] = acc / a[static_cast<size_t>(j * d + j)];
            }
        }
        for (int j = i + 1; j < d; ++j) a[static_cast<size_t>(i * d + j)] = 0.0;
    }
    return true;
}

/// Solves L L^T x = b given the Cholesky factor L.
inline void cholesky_solve(const std::vector<double>& L, int d, std::span<const double> b,
                           std::vector<double>& x) {
    x.assign(b.begin(), b.end());
    for (int i = 0; i < d; ++i) {
        double acc = x[static_cast<size_t>(i)];
        for (int k = 0; k < i; ++k) acc -= L[static_cast<size_t>(i * d + k)] * x[static_cast<size_t>(k)];
        x[static_cast<size_t>(i)] = acc / L[static_cast<size_t>(i * d + i)];
    }
    for (int i = d - 1; i >= 0; --i) {
        double acc = x[static_cast<size_t>(i)];
        for (int k = i + 1; k < d; ++k) acc -= L[static_cast<size_t>(k * d + i)] * x[static_cast<size_t>(k)];
        x[static_cast<size_t>(i)] = acc / L[static_cast<size_t>(i * d + i)];
    }
}
}  // namespace detail

/// ParamNet(z) -> (mu_P, Sigma, lambda).
inline SdeFields eval_fields(const DynamicsModel& model, std::span<const double> z, int ccy = 0) {
    std::vector<double> in;
    model.assemble_input(z, ccy, in);
    auto raw = forward(model.paramnet, in);
    for (double v : raw)
        if (!std::isfinite(v)) throw TrainError("eval_fields: non-finite network output");
    return detail::fields_from_raw(raw, model.dim(), model.cfg.diffusion);
}

inline double short_rate(const DynamicsModel& model, std::span<const double> z, int ccy,
                         double level_scaled) {
    DecoderBondMap map(*model.manifold, ccy, level_scaled);
    return map.short_rate(z);
}

/// Signed martingale-PDE residual in price units per year:
/// R = -d_tau D + grad_z D . mu_Q + 1/2 Tr(Sigma Sigma^T hess_z D) - r D.
inline double pde_residual(const BondMap& map, const SdeFields& fields,
                           std::span<const double> z, double tau) {
    BondPoint p = map.eval(z, tau);
    auto mu_q = fields.mu_q();
    auto cov = fields.covariance();
    const int d = map.dim();
    double drift = 0.0, trace = 0.0;
    for (int i = 0; i < d; ++i) {
        drift += p.grad_z[static_cast<size_t>(i)] * mu_q[static_cast<size_t>(i)];
        for (int j = 0; j < d; ++j)
            trace += cov[static_cast<size_t>(i * d + j)] * p.hess_z[static_cast<size_t>(j * d + i)];
    }
    return -p.dtau + drift + 0.5 * trace - map.short_rate(z) * p.value;
}

inline double pde_residual(const DynamicsModel& model, std::span<const double> z, double tau,
                           int ccy, double level_scaled) {
    DecoderBondMap map(*model.manifold, ccy, level_scaled);
    auto fields = eval_fields(model, z, ccy);
    return pde_residual(map, fields, z, tau);
}

/// One collocation state with the maturities penalized at it.
struct CollocState {
    std::vector<double> z;
    int ccy = 0;
    double level_scaled = 0.0;
    std::vector<double> taus;
};

/// Sharpe-style normalized squared residual, averaged over all (state, tau)
/// pairs: mean (R / sqrt(||grad_z D^T Sigma||^2 + eps))^2. Scale-free in
/// price units.
inline double arb_loss(const DynamicsModel& model, std::span<const CollocState> colloc) {
    if (colloc.empty()) throw std::invalid_argument("arb_loss: empty collocation set");
    const int d = model.dim();
    double acc = 0.0;
    size_t n = 0;
    for (const auto& st : colloc) {
        DecoderBondMap map(*model.manifold, st.ccy, st.level_scaled);
        auto fields = eval_fields(model, st.z, st.ccy);
        double r_short = map.short_rate(st.z);
        auto mu_q = fields.mu_q();
        auto cov = fields.covariance();
        for (double tau : st.taus) {
            BondPoint p = map.eval(st.z, tau);
            double drift = 0.0, trace = 0.0, norm2 = 0.0;
            for (int i = 0; i < d; ++i) {
                drift += p.grad_z[static_cast<size_t>(i)] * mu_q[static_cast<size_t>(i)];
                double vi = 0.0;
                for (int j = 0; j < d; ++j) {
                    trace += cov[static_cast<size_t>(i * d + j)] *
                             p.hess_z[static_cast<size_t>(j * d + i)];
                    vi += p.grad_z[static_cast<size_t>(j)] * fields.sigma[static_cast<size_t>(j * d + i)];
                }
                norm2 += vi * vi;
            }
            double R = -p.dtau + drift + 0.5 * trace - r_short * p.value;
            acc += R * R / (norm2 + model.cfg.eps);
            ++n;
        }
    }
    return acc / static_cast<double>(n);
}

/// Euler-Maruyama Gaussian transition NLL along a latent path, summed over
/// steps: z_{t+dt} ~ N(z_t + mu_P dt, Sigma Sigma^T dt).
inline double transition_nll(const DynamicsModel& model, std::span<const double> path,
                             size_t rows, double dt, int ccy = 0,
                             bool* jitter_warned = nullptr) {
    const int d = model.dim();
    if (rows < 2) throw std::invalid_argument("transition_nll: path length >= 2 required");
    double acc = 0.0;
    std::vector<double> in, w;
    for (size_t t = 0; t + 1 < rows; ++t) {
        std::span<const double> zt(path.data() + t * static_cast<size_t>(d),
                                   static_cast<size_t>(d));
        auto fields = eval_fields(model, zt, ccy);
        auto C = fields.covariance();
        for (auto& c : C) c *= dt;
        std::vector<double> L = C;
        if (!detail::cholesky(L, d)) {
            for (int i = 0; i < d; ++i) C[static_cast<size_t>(i * d + i)] += 1e-10;
            L = C;
            if (!detail::cholesky(L, d))
                throw TrainError("transition_nll: covariance not positive definite");
            if (jitter_warned) *jitter_warned = true;
        }
        std::vector<double> e(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i)
            e[static_cast<size_t>(i)] = path[(t + 1) * static_cast<size_t>(d) + static_cast<size_t>(i)] -
                                        zt[static_cast<size_t>(i)] -
                                        fields.mu_p[static_cast<size_t>(i)] * dt;
        detail::cholesky_solve(L, d, e, w);
        double quad = 0.0, logdet = 0.0;
        for (int i = 0; i < d; ++i) {
            quad += e[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
            logdet += 2.0 * std::log(L[static_cast<size_t>(i * d + i)]);
        }
        acc += 0.5 * (quad + logdet + d * std::log(2.0 * std::numbers::pi));
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Composite loss with hand-assembled gradients (ParamNet only; the decoder
// is frozen so every decoder-derived quantity is a constant coefficient).
// ---------------------------------------------------------------------------

struct CompositeTerms {
    double total = 0.0;
    double data_nll = 0.0;   // summed over transitions
    double arb = 0.0;        // mean normalized squared residual
    double lambda_reg = 0.0; // mean ||lambda||^2 over path states
    size_t transitions = 0;
};

namespace detail {

/// Accumulates the transition-NLL value and ParamNet gradients for one step.
inline double transition_step_grad(const DynamicsModel& model, std::span<const double> zt,
                                   std::span<const double> znext, int ccy, double dt,
                                   double gamma_weight, Grads* grads, double* lambda_reg) {
    const int d = model.dim();
    std::vector<double> in;
    model.assemble_input(zt, ccy, in);
    MlpWorkspace ws;
    forward(model.paramnet, in, ws);
    std::vector<double> diag_slope;
    auto fields = fields_from_raw(ws.a.back(), d, model.cfg.diffusion, &diag_slope);

    auto C = fields.covariance();
    for (auto& c : C) c *= dt;
    std::vector<double> L = C;
    if (!cholesky(L, d)) {
        for (int i = 0; i < d; ++i) C[static_cast<size_t>(i * d + i)] += 1e-10;
        L = C;
        if (!cholesky(L, d)) throw TrainError("dynamics: covariance not positive definite");
    }
    std::vector<double> e(static_cast<size_t>(d)), w;
    for (int i = 0; i < d; ++i)
        e[static_cast<size_t>(i)] =
            znext[static_cast<size_t>(i)] - zt[static_cast<size_t>(i)] -
            fields.mu_p[static_cast<size_t>(i)] * dt;
    cholesky_solve(L, d, e, w);
    double quad = 0.0, logdet = 0.0;
    for (int i = 0; i < d; ++i) {
        quad += e[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
        logdet += 2.0 * std::log(L[static_cast<size_t>(i * d + i)]);
    }
    double nll = 0.5 * (quad + logdet + d * std::log(2.0 * std::numbers::pi));

    double lam2 = 0.0;
    for (int i = 0; i < d; ++i)
        lam2 += fields.lambda[static_cast<size_t>(i)] * fields.lambda[static_cast<size_t>(i)];
    if (lambda_reg) *lambda_reg += lam2;

    if (grads) {
        // dNLL/dmu = -w dt;  dNLL/dC = 1/2 (C^{-1} - w w^T);  dNLL/dSigma = 2 dt S Sigma
        std::vector<double> dmu(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) dmu[static_cast<size_t>(i)] = -w[static_cast<size_t>(i)] * dt;

        std::vector<double> Cinv(static_cast<size_t>(d) * static_cast<size_t>(d));
        std::vector<double> unit(static_cast<size_t>(d), 0.0), sol;
        for (int j = 0; j < d; ++j) {
            unit[static_cast<size_t>(j)] = 1.0;
            cholesky_solve(L, d, unit, sol);
            unit[static_cast<size_t>(j)] = 0.0;
            for (int i = 0; i < d; ++i) Cinv[static_cast<size_t>(i * d + j)] = sol[static_cast<size_t>(i)];
        }
        std::vector<double> S(static_cast<size_t>(d) * static_cast<size_t>(d));
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                S[static_cast<size_t>(i * d + j)] =
                    0.5 * (Cinv[static_cast<size_t>(i * d + j)] -
                           w[static_cast<size_t>(i)] * w[static_cast<size_t>(j)]);
        std::vector<double> dsigma(static_cast<size_t>(d) * static_cast<size_t>(d), 0.0);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int k = 0; k < d; ++k)
                    acc += S[static_cast<size_t>(i * d + k)] * fields.sigma[static_cast<size_t>(k * d + j)];
                dsigma[static_cast<size_t>(i * d + j)] = 2.0 * dt * acc;
            }
        std::vector<double> dlambda(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i)
            dlambda[static_cast<size_t>(i)] = gamma_weight * 2.0 * fields.lambda[static_cast<size_t>(i)];

        std::vector<double> upstream(static_cast<size_t>(model.paramnet_out_dim()));
        raw_upstream_from_fields(dmu, dsigma, dlambda, diag_slope, d, model.cfg.diffusion, upstream);
        backward(model.paramnet, ws, upstream, grads, {});
    }
    return nll;
}

/// Accumulates the normalized-residual loss and ParamNet gradients for one
/// (state, tau) pair; decoder-side coefficients come in via BondPoint.
inline double arb_point_grad(const DynamicsModel& model, const CollocState& st,
                             const BondPoint& p, double r_short, double weight,
                             Grads* grads) {
    const int d = model.dim();
    std::vector<double> in;
    model.assemble_input(st.z, st.ccy, in);
    MlpWorkspace ws;
    forward(model.paramnet, in, ws);
    std::vector<double> diag_slope;
    auto fields = fields_from_raw(ws.a.back(), d, model.cfg.diffusion, &diag_slope);
    auto mu_q = fields.mu_q();
    auto cov = fields.covariance();

    double drift = 0.0, trace = 0.0, norm2 = 0.0;
    std::vector<double> v(static_cast<size_t>(d), 0.0);  // Sigma^T grad_z D
    for (int i = 0; i < d; ++i) {
        drift += p.grad_z[static_cast<size_t>(i)] * mu_q[static_cast<size_t>(i)];
        double vi = 0.0;
        for (int j = 0; j < d; ++j) {
            trace += cov[static_cast<size_t>(i * d + j)] * p.hess_z[static_cast<size_t>(j * d + i)];
            vi += p.grad_z[static_cast<size_t>(j)] * fields.sigma[static_cast<size_t>(j * d + i)];
        }
        v[static_cast<size_t>(i)] = vi;
        norm2 += vi * vi;
    }
    double R = -p.dtau + drift + 0.5 * trace - r_short * p.value;
    double N = norm2 + model.cfg.eps;
    double loss = R * R / N;

    if (grads) {
        double dR = 2.0 * R / N * weight;
        double dN = -R * R / (N * N) * weight;
        std::vector<double> dmu(static_cast<size_t>(d));
        std::vector<double> dlambda(static_cast<size_t>(d), 0.0);
        std::vector<double> dsigma(static_cast<size_t>(d) * static_cast<size_t>(d), 0.0);
        for (int i = 0; i < d; ++i) dmu[static_cast<size_t>(i)] = dR * p.grad_z[static_cast<size_t>(i)];
        // dR/dlambda = -Sigma^T g ; dR/dSigma_ab = -g_a lambda_b + (H Sigma)_ab
        for (int i = 0; i < d; ++i) dlambda[static_cast<size_t>(i)] = -dR * v[static_cast<size_t>(i)];
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) {
                double hs = 0.0;
                for (int k = 0; k < d; ++k)
                    hs += p.hess_z[static_cast<size_t>(a * d + k)] * fields.sigma[static_cast<size_t>(k * d + b)];
                double dr_ds = -p.grad_z[static_cast<size_t>(a)] * fields.lambda[static_cast<size_t>(b)] + hs;
                double dn_ds = 2.0 * v[static_cast<size_t>(b)] * p.grad_z[static_cast<size_t>(a)];
                dsigma[static_cast<size_t>(a * d + b)] = dR * dr_ds + dN * dn_ds;
            }
        // fold dR into dmu through mu_q = mu_p - Sigma lambda
        // (dmu above is already d(loss)/dmu_p since dR/dmu_p = g)
        std::vector<double> upstream(static_cast<size_t>(model.paramnet_out_dim()));
        raw_upstream_from_fields(dmu, dsigma, dlambda, diag_slope, d, model.cfg.diffusion, upstream);
        backward(model.paramnet, ws, upstream, grads, {});
    }
    return loss;
}

}  // namespace detail

/// One latent path (row-major [row][d]) plus its context.
struct PathSlice {
    std::span<const double> z;
    size_t rows = 0;
    int ccy = 0;
};

/// L = L_data + beta * L_arb + gamma * mean ||lambda||^2, with gradients
/// for ParamNet only.
inline std::pair<CompositeTerms, Grads> composite_loss(const DynamicsModel& model,
                                                       std::span<const PathSlice> paths,
                                                       std::span<const CollocState> colloc) {
    const int d = model.dim();
    Grads grads = Grads::zeros_like(model.paramnet);
    CompositeTerms terms;
    size_t n_states = 0;
    for (const auto& ps : paths)
        if (ps.rows >= 2) n_states += ps.rows - 1;
    if (n_states == 0) throw std::invalid_argument("composite_loss: no transitions");
    double gamma_w = model.cfg.gamma / static_cast<double>(n_states);
    double lam_acc = 0.0;
    for (const auto& ps : paths) {
        for (size_t t = 0; t + 1 < ps.rows; ++t) {
            std::span<const double> zt(ps.z.data() + t * static_cast<size_t>(d),
                                       static_cast<size_t>(d));
            std::span<const double> zn(ps.z.data() + (t + 1) * static_cast<size_t>(d),
                                       static_cast<size_t>(d));
            terms.data_nll +=
                detail::transition_step_grad(model, zt, zn, ps.ccy, model.cfg.dt, gamma_w,
                                             &grads, &lam_acc);
            ++terms.transitions;
        }
    }
    terms.lambda_reg = lam_acc / static_cast<double>(n_states);

    size_t n_points = 0;
    for (const auto& st : colloc) n_points += st.taus.size();
    if (model.cfg.beta > 0.0 && n_points > 0) {
        double w = model.cfg.beta / static_cast<double>(n_points);
        double arb_acc = 0.0;
        for (const auto& st : colloc) {
            DecoderBondMap map(*model.manifold, st.ccy, st.level_scaled);
            double r_short = map.short_rate(st.z);
            for (double tau : st.taus) {
                BondPoint p = map.eval(st.z, tau);
                arb_acc += detail::arb_point_grad(model, st, p, r_short, w, &grads);
            }
        }
        terms.arb = arb_acc / static_cast<double>(n_points);
    }
    terms.total = terms.data_nll + model.cfg.beta * terms.arb + model.cfg.gamma * terms.lambda_reg;
    if (!std::isfinite(terms.total)) throw TrainError("composite_loss: non-finite loss");
    return {terms, grads};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct DynamicsLogRow {
    int epoch = 0;
    double data_nll = 0.0;  // mean per transition
    double arb = 0.0;       // mean normalized squared residual
    double lambda_norm = 0.0;
};

struct DynamicsTrainResult {
    DynamicsModel model;
    std::vector<DynamicsLogRow> log;
};

inline DynamicsModel make_dynamics_model(const DynamicsConfig& cfg,
                                         std::shared_ptr<const ManifoldModel> manifold) {
    cfg.validate();
    DynamicsModel model;
    model.cfg = cfg;
    model.manifold = std::move(manifold);
    std::vector<int> widths{model.paramnet_in_dim()};
    std::vector<Activation> acts;
    for (int w : cfg.widths) {
        widths.push_back(w);
        acts.push_back(Activation::Tanh);
    }
    widths.push_back(model.paramnet_out_dim());
    acts.push_back(Activation::Identity);
    model.paramnet = Mlp::create(widths, acts);
    Rng rng(derive_seed(cfg.seed, "dynamics/init"));
    model.paramnet.init_xavier(rng);
    model.manifold_checksum = model.manifold->frozen_checksum;
    return model;
}

/// Trains ParamNet on the given latent paths with the PDE penalty on
/// jittered collocation states drawn from them.
inline DynamicsTrainResult train_dynamics_on_paths(const DynamicsConfig& cfg,
                                                   std::shared_ptr<const ManifoldModel> manifold,
                                                   const std::vector<LatentPath>& paths) {
    cfg.validate();
    DynamicsModel model = make_dynamics_model(cfg, manifold);
    model.verify_frozen();
    const int d = model.dim();

    struct Transition {
        int ccy;
        size_t row;
    };
    std::vector<Transition> transitions;
    std::vector<std::pair<int, size_t>> states;  // all (ccy,row) pairs
    for (const auto& p : paths) {
        for (size_t t = 0; t + 1 < p.dates.size(); ++t)
            transitions.push_back({p.ccy, t});
        for (size_t t = 0; t < p.dates.size(); ++t) states.push_back({p.ccy, t});
    }
    if (transitions.empty()) throw DataError("train_dynamics: no transitions in panel");

    Rng shuffle_rng(derive_seed(cfg.seed, "dynamics/shuffle"));
    Rng colloc_rng(derive_seed(cfg.seed, "dynamics/colloc"));
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    auto opt = AdamState::init(model.paramnet, acfg);
    Grads grads = Grads::zeros_like(model.paramnet);

    std::vector<size_t> order(transitions.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    DynamicsTrainResult res;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.cfg.lr = cfg.lr * detail::lr_decay(epoch, cfg.epochs);
        // per-epoch collocation pool: historical latents + Gaussian jitter,
        // quote-grid maturities plus uniform fillers
        std::vector<CollocState> pool;
        pool.reserve(static_cast<size_t>(cfg.colloc_states));
        for (int s = 0; s < cfg.colloc_states; ++s) {
            auto [ccy, row] = states[static_cast<size_t>(colloc_rng.next_u64() % states.size())];
            const auto& path = paths[static_cast<size_t>(ccy)];
            CollocState st;
            st.ccy = ccy;
            st.level_scaled = path.level_scaled[row];
            st.z.resize(static_cast<size_t>(d));
            for (int i = 0; i < d; ++i)
                st.z[static_cast<size_t>(i)] =
                    path.z[row * static_cast<size_t>(d) + static_cast<size_t>(i)] +
                    cfg.colloc_jitter * colloc_rng.normal();
            st.taus = model.manifold->grid.tenors;
            for (int k = 0; k < cfg.colloc_extra_taus; ++k)
                st.taus.push_back(1.0 / 12.0 + (30.0 - 1.0 / 12.0) * colloc_rng.uniform());
            pool.push_back(std::move(st));
        }

        shuffle_rng.shuffle(order);
        size_t n_batches =
            (order.size() + static_cast<size_t>(cfg.batch_size) - 1) / static_cast<size_t>(cfg.batch_size);
        double ep_nll = 0.0, ep_arb = 0.0, ep_lam = 0.0;
        size_t ep_arb_n = 0, pool_cursor = 0;
        for (size_t bi = 0; bi < n_batches; ++bi) {
            size_t start = bi * static_cast<size_t>(cfg.batch_size);
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            grads.zero();
            double inv_n = 1.0 / static_cast<double>(stop - start);
            double lam_acc = 0.0;
            Grads step_grads = Grads::zeros_like(model.paramnet);
            for (size_t i = start; i < stop; ++i) {
                const auto& tr = transitions[order[i]];
                const auto& path = paths[static_cast<size_t>(tr.ccy)];
                std::span<const double> zt(path.z.data() + tr.row * static_cast<size_t>(d),
                                           static_cast<size_t>(d));
                std::span<const double> zn(path.z.data() + (tr.row + 1) * static_cast<size_t>(d),
                                           static_cast<size_t>(d));
                double nll = detail::transition_step_grad(
                    model, zt, zn, tr.ccy, cfg.dt, cfg.gamma * inv_n, &step_grads, &lam_acc);
                ep_nll += nll;
            }
            step_grads.scale(inv_n);
            grads.add(step_grads);
            ep_lam += lam_acc;

            // one slice of the collocation pool per batch
            if (cfg.beta > 0.0 && !pool.empty()) {
                size_t per_batch = std::max<size_t>(1, pool.size() / n_batches);
                size_t n_points = 0;
                for (size_t k = 0; k < per_batch; ++k) {
                    const auto& st = pool[(pool_cursor + k) % pool.size()];
                    n_points += st.taus.size();
                }
                double w = cfg.beta / static_cast<double>(n_points);
                for (size_t k = 0; k < per_batch; ++k) {
                    const auto& st = pool[(pool_cursor + k) % pool.size()];
                    DecoderBondMap map(*model.manifold, st.ccy, st.level_scaled);
                    double r_short = map.short_rate(st.z);
                    for (double tau : st.taus) {
                        BondPoint p = map.eval(st.z, tau);
                        ep_arb += detail::arb_point_grad(model, st, p, r_short, w, &grads);
                        ++ep_arb_n;
                    }
                }
                pool_cursor = (pool_cursor + per_batch) % pool.size();
            }
            if (!grads.finite()) throw TrainError("train_dynamics: non-finite gradients");
            adam_step(model.paramnet, grads, opt);
        }
        DynamicsLogRow row;
        row.epoch = epoch;
        row.data_nll = ep_nll / static_cast<double>(transitions.size());
        row.arb = ep_arb_n ? ep_arb / static_cast<double>(ep_arb_n) : 0.0;
        row.lambda_norm = std::sqrt(ep_lam / static_cast<double>(transitions.size()));
        res.log.push_back(row);
    }
    res.model = std::move(model);
    return res;
}

/// Trains ParamNet on encoded posterior-mean latent paths of a panel.
inline DynamicsTrainResult train_dynamics(const DynamicsConfig& cfg,
                                          std::shared_ptr<const ManifoldModel> manifold,
                                          const DensePanel& train) {
    auto paths = encode_panel(*manifold, train);
    return train_dynamics_on_paths(cfg, std::move(manifold), paths);
}

// ---------------------------------------------------------------------------
// Simulation and diagnostics
// ---------------------------------------------------------------------------

enum class Measure { P, Q };

/// Euler-Maruyama latent paths with per-path counter-derived noise streams.
/// Output layout: [path][day 0..horizon][d], day 0 = z0.
inline std::vector<double> simulate_paths(const DynamicsModel& model,
                                          std::span<const double> z0, int ccy,
                                          int horizon_days, int n_paths, Measure measure,
                                          uint64_t seed) {
    if (horizon_days <= 0) throw std::invalid_argument("simulate_paths: horizon > 0 required");
    if (n_paths < 1) throw std::invalid_argument("simulate_paths: n_paths >= 1");
    const int d = model.dim();
    const double dt = model.cfg.dt;
    const double sq_dt = std::sqrt(dt);
    std::vector<double> out(static_cast<size_t>(n_paths) *
                            static_cast<size_t>(horizon_days + 1) * static_cast<size_t>(d));
    uint64_t base = derive_seed(seed, "dynamics/simulate");
    std::vector<double> z(static_cast<size_t>(d)), xi(static_cast<size_t>(d));
    for (int p = 0; p < n_paths; ++p) {
        Rng rng(path_seed(base, static_cast<uint64_t>(p)));
        z.assign(z0.begin(), z0.end());
        double* row = out.data() + static_cast<size_t>(p) * static_cast<size_t>(horizon_days + 1) *
                                       static_cast<size_t>(d);
        std::copy(z.begin(), z.end(), row);
        for (int day = 1; day <= horizon_days; ++day) {
            auto fields = eval_fields(model, z, ccy);
            auto mu = measure == Measure::P ? fields.mu_p : fields.mu_q();
            rng.fill_normal(xi);
            for (int i = 0; i < d; ++i) {
                double diff = 0.0;
                for (int j = 0; j < d; ++j)
                    diff += fields.sigma[static_cast<size_t>(i * d + j)] * xi[static_cast<size_t>(j)];
                z[static_cast<size_t>(i)] += mu[static_cast<size_t>(i)] * dt + diff * sq_dt;
            }
            std::copy(z.begin(), z.end(), row + static_cast<size_t>(day) * static_cast<size_t>(d));
        }
    }
    return out;
}

struct RiskPremiumRow {
    std::string date;
    std::string currency;
    std::vector<double> lambda;
};

/// lambda(z_t) along the historical posterior-mean path, per currency.
inline std::vector<RiskPremiumRow> risk_premium_series(const DynamicsModel& model,
                                                       const DensePanel& panel) {
    auto paths = encode_panel(*model.manifold, panel);
    const int d = model.dim();
    std::vector<RiskPremiumRow> rows;
    for (const auto& p : paths) {
        for (size_t t = 0; t < p.dates.size(); ++t) {
            std::span<const double> z(p.z.data() + t * static_cast<size_t>(d),
                                      static_cast<size_t>(d));
            auto fields = eval_fields(model, z, p.ccy);
            RiskPremiumRow row;
            row.date = p.dates[t];
            row.currency = panel.currencies[static_cast<size_t>(p.ccy)];
            row.lambda = fields.lambda;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace arbfree
