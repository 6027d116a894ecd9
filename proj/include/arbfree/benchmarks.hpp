// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "arbfree/curve_math.hpp"
#include "arbfree/manifold.hpp"
#include "arbfree/pipeline.hpp"
#include "arbfree/rng.hpp"

namespace arbfree {

// ---------------------------------------------------------------------------
// VAR(1) in latent or score space
// ---------------------------------------------------------------------------

struct VarModel {
    std::vector<double> alpha;  // d
    std::vector<double> phi;    // d x d
    std::vector<double> cov;    // d x d innovation covariance (MLE)
    double spectral_radius = 0.0;
    bool stationary = true;

    int dim() const { return static_cast<int>(alpha.size()); }
};

/// One score/latent path for VAR fitting (row-major [row][d]).
struct VarPath {
    std::span<const double> z;
    size_t rows = 0;
};

/// OLS per equation of z_{t+h} on [1, z_t]; innovation covariance is the
/// residual MLE. Transitions never cross path boundaries.
inline VarModel fit_var(std::span<const VarPath> paths, int d, int h = 1) {
    if (h < 1) throw std::invalid_argument("fit_var: h >= 1 required");
    size_t n = 0;
    for (const auto& p : paths) n += p.rows > static_cast<size_t>(h) ? p.rows - static_cast<size_t>(h) : 0;
    if (n < static_cast<size_t>(d) + 2) throw DataError("fit_var: not enough transitions");
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), d + 1);
    Eigen::MatrixXd Y(static_cast<Eigen::Index>(n), d);
    Eigen::Index r = 0;
    for (const auto& p : paths) {
        for (size_t t = 0; t + static_cast<size_t>(h) < p.rows; ++t, ++r) {
            X(r, 0) = 1.0;
            for (int j = 0; j < d; ++j) {
                X(r, j + 1) = p.z[t * static_cast<size_t>(d) + static_cast<size_t>(j)];
                Y(r, j) = p.z[(t + static_cast<size_t>(h)) * static_cast<size_t>(d) +
                              static_cast<size_t>(j)];
            }
        }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < d + 1) throw DataError("fit_var: rank-deficient regressors");
    Eigen::MatrixXd B = qr.solve(Y);  // (d+1) x d
    Eigen::MatrixXd E = Y - X * B;
    Eigen::MatrixXd S = E.transpose() * E / static_cast<double>(n);

    VarModel m;
    m.alpha.resize(static_cast<size_t>(d));
    m.phi.resize(static_cast<size_t>(d) * static_cast<size_t>(d));
    m.cov.resize(static_cast<size_t>(d) * static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        m.alpha[static_cast<size_t>(i)] = B(0, i);
        for (int j = 0; j < d; ++j) {
            m.phi[static_cast<size_t>(i * d + j)] = B(j + 1, i);
            m.cov[static_cast<size_t>(i * d + j)] = S(i, j);
        }
    }
    Eigen::MatrixXd Phi(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) Phi(i, j) = m.phi[static_cast<size_t>(i * d + j)];
    Eigen::EigenSolver<Eigen::MatrixXd> es(Phi, false);
    double rad = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
        rad = std::max(rad, std::abs(es.eigenvalues()[i]));
    m.spectral_radius = rad;
    m.stationary = rad < 1.0;
    return m;
}

inline VarModel fit_var(std::span<const double> path, size_t rows, int d, int h = 1) {
    VarPath p{path, rows};
    return fit_var(std::span<const VarPath>(&p, 1), d, h);
}

/// Deterministic h-step-ahead conditional mean.
inline std::vector<double> var_point_forecast(const VarModel& m, std::span<const double> z,
                                              int h) {
    const int d = m.dim();
    std::vector<double> cur(z.begin(), z.end()), next(static_cast<size_t>(d));
    for (int step = 0; step < h; ++step) {
        for (int i = 0; i < d; ++i) {
            double acc = m.alpha[static_cast<size_t>(i)];
            for (int j = 0; j < d; ++j)
                acc += m.phi[static_cast<size_t>(i * d + j)] * cur[static_cast<size_t>(j)];
            next[static_cast<size_t>(i)] = acc;
        }
        cur = next;
    }
    return cur;
}

/// Gaussian h-step draws by iterating the one-step model. Layout: [draw][d].
inline std::vector<double> var_forecast(const VarModel& m, std::span<const double> z, int h,
                                        int n_draws, uint64_t seed) {
    const int d = m.dim();
    std::vector<double> L = m.cov;
    // Cholesky with graceful zero-cov handling
    bool has_noise = false;
    for (double v : m.cov)
        if (v != 0.0) has_noise = true;
    if (has_noise) {
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j <= i; ++j) {
                double acc = m.cov[static_cast<size_t>(i * d + j)];
                for (int k = 0; k < j; ++k)
                    acc -= L[static_cast<size_t>(i * d + k)] * L[static_cast<size_t>(j * d + k)];
                if (i == j)
                    L[static_cast<size_t>(i * d + i)] = std::sqrt(std::max(acc, 0.0));
                else
                    L[static_cast<size_t>(i * d + j)] =
                        L[static_cast<size_t>(j * d + j)] > 0.0
                            ? acc / L[static_cast<size_t>(j * d + j)]
                            : 0.0;
            }
            for (int j = i + 1; j < d; ++j) L[static_cast<size_t>(i * d + j)] = 0.0;
        }
    } else {
        std::fill(L.begin(), L.end(), 0.0);
    }

    std::vector<double> out(static_cast<size_t>(n_draws) * static_cast<size_t>(d));
    uint64_t base = derive_seed(seed, "var/forecast");
    std::vector<double> cur(static_cast<size_t>(d)), nxt(static_cast<size_t>(d)),
        xi(static_cast<size_t>(d));
    for (int dr = 0; dr < n_draws; ++dr) {
        Rng rng(path_seed(base, static_cast<uint64_t>(dr)));
        cur.assign(z.begin(), z.end());
        for (int step = 0; step < h; ++step) {
            rng.fill_normal(xi);
            for (int i = 0; i < d; ++i) {
                double acc = m.alpha[static_cast<size_t>(i)];
                for (int j = 0; j < d; ++j) {
                    acc += m.phi[static_cast<size_t>(i * d + j)] * cur[static_cast<size_t>(j)];
                    acc += L[static_cast<size_t>(i * d + j)] * xi[static_cast<size_t>(j)];
                }
                nxt[static_cast<size_t>(i)] = acc;
            }
            cur = nxt;
        }
        std::copy(cur.begin(), cur.end(),
                  out.begin() + static_cast<size_t>(dr) * static_cast<size_t>(d));
    }
    return out;
}

// ---------------------------------------------------------------------------
// PCA + VAR(1) baseline
// ---------------------------------------------------------------------------

/// PCA on the scaled shape+level inputs, VAR(1) in scores, forecasts decoded
/// back to swap space. Fit on the training panel only; forecasts iterate the
/// score mean from each currency's last training state.
struct PcaVarBaseline {
    RobustScaler scaler;                  // 13-dim input scaler (train fit)
    std::vector<double> mean;             // input-space mean of training x
    std::vector<std::vector<double>> components;  // k x 13
    VarModel var;
    bool var_degenerate = false;  // constant scores: random-walk fallback
    int anchor = 4;               // 1Y index

    int n_components() const { return static_cast<int>(components.size()); }

    std::vector<double> project(std::span<const double> x) const {
        std::vector<double> s(static_cast<size_t>(n_components()), 0.0);
        for (int k = 0; k < n_components(); ++k)
            for (size_t j = 0; j < mean.size(); ++j)
                s[static_cast<size_t>(k)] +=
                    components[static_cast<size_t>(k)][j] * (x[j] - mean[j]);
        return s;
    }

    std::vector<double> reconstruct_x(std::span<const double> s) const {
        std::vector<double> x(mean);
        for (int k = 0; k < n_components(); ++k)
            for (size_t j = 0; j < mean.size(); ++j)
                x[j] += components[static_cast<size_t>(k)][j] * s[static_cast<size_t>(k)];
        return x;
    }

    /// Scores -> swap quotes (inverse scale, add level back to shape).
    std::vector<double> decode_swaps(std::span<const double> s) const {
        auto x = reconstruct_x(s);
        auto raw = scaler.inverse(x);
        double level = raw.back();
        std::vector<double> swaps(raw.size() - 1);
        for (size_t j = 0; j + 1 < raw.size(); ++j) swaps[j] = raw[j] + level;
        swaps[static_cast<size_t>(anchor)] = level;
        return swaps;
    }
};

inline PcaVarBaseline fit_pca_var(const DensePanel& train, int k, int h = 1) {
    auto recs = decompose(train);
    PcaVarBaseline b;
    b.anchor = train.grid.index_of("1Y");
    b.scaler = fit_input_scaler(recs);
    std::vector<std::vector<double>> xs;
    xs.reserve(recs.size());
    for (const auto& r : recs) xs.push_back(model_input(r, b.scaler));
    const size_t dim = xs[0].size();
    b.mean.assign(dim, 0.0);
    for (const auto& x : xs)
        for (size_t j = 0; j < dim; ++j) b.mean[j] += x[j];
    for (auto& v : b.mean) v /= static_cast<double>(xs.size());
    if (k < 1 || k > static_cast<int>(dim))
        throw ConfigError("fit_pca_var: bad component count");
    try {
        auto pca = pca_diagnostic(xs);
        for (int i = 0; i < k; ++i)
            b.components.push_back(pca.components[static_cast<size_t>(i)]);
    } catch (const DataError&) {
        // zero-variation panel: every curve equals the mean; scores are 0
        for (int i = 0; i < k; ++i)
            b.components.push_back(std::vector<double>(dim, 0.0));
    }

    // per-currency score paths in date order
    std::vector<std::vector<double>> score_paths(train.n_currencies());
    size_t idx = 0;
    for (size_t c = 0; c < train.n_currencies(); ++c)
        for (size_t r = 0; r < train.rows(c); ++r, ++idx) {
            auto s = b.project(xs[idx]);
            score_paths[c].insert(score_paths[c].end(), s.begin(), s.end());
        }
    std::vector<VarPath> paths;
    for (size_t c = 0; c < train.n_currencies(); ++c)
        paths.push_back({std::span<const double>(score_paths[c]), train.rows(c)});
    try {
        b.var = fit_var(paths, k, h);
    } catch (const DataError&) {
        // zero-variation panel: fall back to a random walk
        b.var_degenerate = true;
        b.var.alpha.assign(static_cast<size_t>(k), 0.0);
        b.var.phi.assign(static_cast<size_t>(k) * static_cast<size_t>(k), 0.0);
        for (int i = 0; i < k; ++i) b.var.phi[static_cast<size_t>(i * k + i)] = 1.0;
        b.var.cov.assign(static_cast<size_t>(k) * static_cast<size_t>(k), 0.0);
        b.var.spectral_radius = 1.0;
        b.var.stationary = false;
    }
    return b;
}

/// Deterministic forecast curves for each OOS row: iterate the score mean
/// from the end of the training sample. Output aligned with the OOS panel.
inline std::vector<std::vector<double>> pca_var_baseline(const DensePanel& train,
                                                         const DensePanel& oos, int k,
                                                         int h = 1) {
    auto b = fit_pca_var(train, k, h);
    auto train_recs = decompose(train);
    // last training score per currency
    std::vector<std::vector<double>> last_score(train.n_currencies());
    size_t idx = 0;
    for (size_t c = 0; c < train.n_currencies(); ++c)
        for (size_t r = 0; r < train.rows(c); ++r, ++idx)
            if (r + 1 == train.rows(c))
                last_score[c] = b.project(model_input(train_recs[idx], b.scaler));

    std::vector<std::vector<double>> out(oos.n_currencies());
    for (size_t c = 0; c < oos.n_currencies(); ++c) {
        int ci = train.find_currency(oos.currencies[c]);
        if (ci < 0) throw DataError("pca_var_baseline: unknown OOS currency");
        for (size_t r = 0; r < oos.rows(c); ++r) {
            auto s = var_point_forecast(b.var, last_score[static_cast<size_t>(ci)],
                                        static_cast<int>(r + 1) * h);
            auto swaps = b.decode_swaps(s);
            out[c].insert(out[c].end(), swaps.begin(), swaps.end());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Classical 3-factor HJM simulator (Musiela coordinates)
// ---------------------------------------------------------------------------

/// Piecewise-linear vol loading on the maturity grid, flat beyond the ends.
class GridLoading {
public:
    GridLoading(std::vector<double> xs, std::vector<double> ys)
        : xs_(std::move(xs)), ys_(std::move(ys)) {}

    double operator()(double x) const {
        if (x <= xs_.front()) return ys_.front();
        if (x >= xs_.back()) return ys_.back();
        auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
        size_t i = static_cast<size_t>(it - xs_.begin()) - 1;
        double w = (x - xs_[i]) / (xs_[i + 1] - xs_[i]);
        return ys_[i] * (1.0 - w) + ys_[i + 1] * w;
    }

private:
    std::vector<double> xs_, ys_;
};

/// Forward rates at the grid nodes of a bootstrapped curve, from the
/// monotone-cubic log-discount derivative (valid at the end nodes too).
inline std::vector<double> forward_curve_nodes(const DiscountCurve& curve) {
    std::vector<double> f(curve.grid.size());
    for (size_t j = 0; j < curve.grid.size(); ++j)
        f[j] = -curve.log_discount_derivative(curve.grid.tenors[j]);
    return f;
}

/// Musiela-coordinate Euler simulation of the forward curve on a fixed
/// maturity grid:
///   df = (d_x f + sum_i sigma_i(x) int_0^x sigma_i) dt + sum_i sigma_i(x) dW_i
/// The slope uses nonuniform central differences (one-sided at the ends).
/// Output layout: [path][day 0..horizon][node].
inline std::vector<double> hjm3_simulate(std::span<const double> f0,
                                         std::span<const double> xgrid,
                                         std::span<const VolFn1> sigmas, int horizon_days,
                                         int n_paths, uint64_t seed, double dt = 1.0 / 252.0,
                                         int quad_n = 16) {
    const size_t n = xgrid.size();
    if (n < 4) throw ConfigError("hjm3_simulate: need at least 4 maturity nodes");
    if (f0.size() != n) throw std::invalid_argument("hjm3_simulate: f0/grid size mismatch");

    // time-homogeneous loadings: precompute sigma_i(x_j) and the integrals
    GaussLegendre gl(quad_n);
    const size_t nf = sigmas.size();
    std::vector<double> sig_at(nf * n), drift_vol(n, 0.0);
    for (size_t i = 0; i < nf; ++i)
        for (size_t j = 0; j < n; ++j) {
            sig_at[i * n + j] = sigmas[i](xgrid[j]);
            drift_vol[j] += sig_at[i * n + j] *
                            gl.integrate([&](double u) { return sigmas[i](u); }, 0.0, xgrid[j]);
        }

    std::vector<double> out(static_cast<size_t>(n_paths) *
                            static_cast<size_t>(horizon_days + 1) * n);
    uint64_t base = derive_seed(seed, "hjm3/simulate");
    std::vector<double> f(n), fn(n), xi(nf);
    for (int p = 0; p < n_paths; ++p) {
        Rng rng(path_seed(base, static_cast<uint64_t>(p)));
        f.assign(f0.begin(), f0.end());
        double* block = out.data() + static_cast<size_t>(p) *
                                         static_cast<size_t>(horizon_days + 1) * n;
        std::copy(f.begin(), f.end(), block);
        for (int day = 1; day <= horizon_days; ++day) {
            for (auto& v : xi) v = rng.normal();
            for (size_t j = 0; j < n; ++j) {
                double slope;
                if (j == 0)
                    slope = (f[1] - f[0]) / (xgrid[1] - xgrid[0]);
                else if (j + 1 == n)
                    slope = (f[n - 1] - f[n - 2]) / (xgrid[n - 1] - xgrid[n - 2]);
                else
                    slope = (f[j + 1] - f[j - 1]) / (xgrid[j + 1] - xgrid[j - 1]);
                double diff = 0.0;
                for (size_t i = 0; i < nf; ++i) diff += sig_at[i * n + j] * xi[i];
                fn[j] = f[j] + (slope + drift_vol[j]) * dt + diff * std::sqrt(dt);
            }
            f = fn;
            std::copy(f.begin(), f.end(), block + static_cast<size_t>(day) * n);
        }
    }
    return out;
}

/// Loadings from a pool of daily forward-curve increments: first principal
/// components scaled to the sample vols.
inline std::vector<VolFn1> hjm_loadings_from_increments(
    const std::vector<std::vector<double>>& increments, std::span<const double> xgrid,
    int n_factors = 3, double dt = 1.0 / 252.0) {
    if (increments.size() < static_cast<size_t>(n_factors) + 1)
        throw DataError("hjm loadings: not enough increments");
    auto pca = pca_diagnostic(increments);
    // per-step score standard deviations
    std::vector<double> mean_inc(xgrid.size(), 0.0);
    for (const auto& d : increments)
        for (size_t j = 0; j < d.size(); ++j) mean_inc[j] += d[j];
    for (auto& v : mean_inc) v /= static_cast<double>(increments.size());

    std::vector<VolFn1> out;
    for (int k = 0; k < n_factors; ++k) {
        const auto& comp = pca.components[static_cast<size_t>(k)];
        double var = 0.0;
        for (const auto& d : increments) {
            double s = 0.0;
            for (size_t j = 0; j < d.size(); ++j) s += comp[j] * (d[j] - mean_inc[j]);
            var += s * s;
        }
        var /= static_cast<double>(increments.size());
        double scale = std::sqrt(var / dt);
        std::vector<double> ys(comp.size());
        for (size_t j = 0; j < comp.size(); ++j) ys[j] = comp[j] * scale;
        out.push_back(GridLoading(std::vector<double>(xgrid.begin(), xgrid.end()), ys));
    }
    return out;
}

/// Convenience wrapper over one curve history.
inline std::vector<VolFn1> hjm_loadings_from_forwards(
    const std::vector<std::vector<double>>& forward_rows, std::span<const double> xgrid,
    int n_factors = 3, double dt = 1.0 / 252.0) {
    std::vector<std::vector<double>> increments;
    for (size_t t = 0; t + 1 < forward_rows.size(); ++t) {
        std::vector<double> d(forward_rows[t].size());
        for (size_t j = 0; j < d.size(); ++j)
            d[j] = forward_rows[t + 1][j] - forward_rows[t][j];
        increments.push_back(std::move(d));
    }
    return hjm_loadings_from_increments(increments, xgrid, n_factors, dt);
}

// ---------------------------------------------------------------------------
// AEMM: decoder-Jacobian volatility basis with re-encoding projection
// ---------------------------------------------------------------------------

/// Decoder-implied instantaneous forward f(z, tau) = level + ytilde + tau
/// d(ytilde)/dtau, with its latent tangents b_k = df/dz_k and optionally the
/// sensitivity to the scaled level input.
inline void aemm_forward_and_basis(const ManifoldModel& m, std::span<const double> z,
                                   double tau, int ccy, double level_scaled, double& f_out,
                                   std::span<double> basis_out,
                                   double* dlevel_out = nullptr) {
    const int d = m.latent_dim();
    std::vector<double> in;
    m.assemble_decoder_input(z, tau, ccy, level_scaled, in);
    double ytilde = forward(m.decoder, in)[0];

    // direction along maturity: tangent of the feature map
    std::vector<double> dir(in.size(), 0.0);
    double dphi[ManifoldModel::kMatFeatures];
    ManifoldModel::maturity_features_dtau(tau, dphi);
    for (int f = 0; f < ManifoldModel::kMatFeatures; ++f)
        dir[static_cast<size_t>(d + f)] = dphi[f];
    std::vector<double> grad(in.size()), hv(in.size());
    hvp(m.decoder, in, 0, dir, grad, hv);

    double dydtau = 0.0;
    for (int f = 0; f < ManifoldModel::kMatFeatures; ++f)
        dydtau += grad[static_cast<size_t>(d + f)] * dphi[f];
    double level = m.cfg.levelscript ? m.level_decimal(level_scaled) : 0.0;
    f_out = level + ytilde + tau * dydtau;
    if (!basis_out.empty())
        for (int k = 0; k < d; ++k)
            basis_out[static_cast<size_t>(k)] =
                grad[static_cast<size_t>(k)] + tau * hv[static_cast<size_t>(k)];
    if (dlevel_out) {
        if (m.cfg.levelscript) {
            size_t lvl = in.size() - 1;
            *dlevel_out = m.input_scaler.iqr.back() + grad[lvl] + tau * hv[lvl];
        } else {
            *dlevel_out = 0.0;
        }
    }
}

inline std::vector<double> aemm_forward_curve(const ManifoldModel& m,
                                              std::span<const double> z, int ccy,
                                              double level_scaled) {
    std::vector<double> f(m.grid.size());
    for (size_t j = 0; j < m.grid.size(); ++j)
        aemm_forward_and_basis(m, z, m.grid.tenors[j], ccy, level_scaled, f[j], {});
    return f;
}

/// Forward curve on the grid -> swap quotes: integrate the piecewise-linear
/// forward to log-discounts (flat below the first node), requote.
inline std::vector<double> swaps_from_forward_nodes(std::span<const double> f,
                                                    const TenorGrid& grid) {
    std::vector<double> logp(grid.size());
    double acc = -f[0] * grid.tenors[0];  // flat extrapolation to spot
    logp[0] = acc;
    for (size_t j = 1; j < grid.size(); ++j) {
        acc -= 0.5 * (f[j] + f[j - 1]) * (grid.tenors[j] - grid.tenors[j - 1]);
        logp[j] = acc;
    }
    std::vector<double> ps(grid.size());
    for (size_t j = 0; j < grid.size(); ++j) ps[j] = std::exp(logp[j]);
    DiscountCurve curve(grid, ps);
    return requote(curve);
}

/// Manifold coordinates of a projected curve: latent state plus the scaled
/// level the decoder re-injects.
struct AemmState {
    std::vector<double> z;
    double level_scaled = 0.0;
};

namespace detail {
inline AemmState aemm_encode_swaps(const ManifoldModel& m, std::span<const double> swaps,
                                   int ccy) {
    int anchor = m.grid.index_of("1Y");
    double level = swaps[static_cast<size_t>(anchor)];
    std::vector<double> raw(m.grid.size() + 1);
    for (size_t j = 0; j < m.grid.size(); ++j) raw[j] = swaps[j] - level;
    raw.back() = level;
    auto x = m.input_scaler.transform(raw);
    AemmState st;
    st.z = encode(m, x, ccy).mu;
    st.level_scaled = x.back();
    return st;
}
}  // namespace detail

/// Re-encoding projection onto the manifold. The encoder supplies the
/// initial latent guess; a damped Gauss-Newton polish then minimizes
/// ||fhat(z, l) - f|| over the grid. Curves already on the manifold are
/// zero-residual fixed points, so projecting a projected curve is a no-op.
inline AemmState aemm_project(const ManifoldModel& m, std::span<const double> f, int ccy,
                              int max_iter = 60, double tol = 1e-12) {
    const int d = m.latent_dim();
    const size_t n = m.grid.size();
    AemmState st = detail::aemm_encode_swaps(m, swaps_from_forward_nodes(f, m.grid), ccy);

    const int nu = d + (m.cfg.levelscript ? 1 : 0);  // unknowns
    Eigen::MatrixXd J(static_cast<Eigen::Index>(n), nu);
    Eigen::VectorXd r(static_cast<Eigen::Index>(n));
    std::vector<double> b(static_cast<size_t>(d));
    auto residual = [&](const AemmState& s, Eigen::VectorXd& out, Eigen::MatrixXd* jac) {
        double fj, dl;
        for (size_t j = 0; j < n; ++j) {
            aemm_forward_and_basis(m, s.z, m.grid.tenors[j], ccy, s.level_scaled, fj,
                                   jac ? std::span<double>(b) : std::span<double>(),
                                   jac ? &dl : nullptr);
            out[static_cast<Eigen::Index>(j)] = fj - f[j];
            if (jac) {
                for (int k = 0; k < d; ++k) (*jac)(static_cast<Eigen::Index>(j), k) = b[static_cast<size_t>(k)];
                if (m.cfg.levelscript) (*jac)(static_cast<Eigen::Index>(j), d) = dl;
            }
        }
    };

    residual(st, r, nullptr);
    double cost = r.squaredNorm();
    double mu = 1e-6;
    for (int it = 0; it < max_iter && cost > tol * tol; ++it) {
        residual(st, r, &J);
        Eigen::MatrixXd H = J.transpose() * J;
        Eigen::VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() < 1e-15) break;
        Eigen::MatrixXd A = H;
        A.diagonal().array() += mu;
        Eigen::VectorXd step = A.ldlt().solve(g);
        AemmState next = st;
        for (int k = 0; k < d; ++k) next.z[static_cast<size_t>(k)] -= step[k];
        if (m.cfg.levelscript) next.level_scaled -= step[d];
        Eigen::VectorXd rn(static_cast<Eigen::Index>(n));
        residual(next, rn, nullptr);
        double cn = rn.squaredNorm();
        if (cn < cost) {
            st = std::move(next);
            if (cost - cn < 1e-24) {
                cost = cn;
                break;
            }
            cost = cn;
            mu = std::max(mu / 3.0, 1e-12);
        } else {
            mu *= 4.0;
            if (mu > 1e10) break;
        }
    }
    return st;
}

/// One AEMM Euler step: HJM-restricted drift assembled from the decoder
/// tangent basis via the Musiela machinery, then the re-encoding projection.
inline std::vector<double> aemm_step(const ManifoldModel& m, std::span<const double> f_t,
                                     std::span<const double> sigma_k, int ccy, double dt,
                                     std::span<const double> noise, int quad_n = 16) {
    const int d = m.latent_dim();
    if (static_cast<int>(sigma_k.size()) != d || static_cast<int>(noise.size()) != d)
        throw std::invalid_argument("aemm_step: sigma/noise must have latent dimension");
    const auto& grid = m.grid;
    const size_t n = grid.size();

    // tangent basis at the projected current state
    auto st = aemm_project(m, f_t, ccy);
    std::vector<double> basis(static_cast<size_t>(d) * n);
    std::vector<double> fhat(n);
    std::vector<double> b(static_cast<size_t>(d));
    for (size_t j = 0; j < n; ++j) {
        aemm_forward_and_basis(m, st.z, grid.tenors[j], ccy, st.level_scaled, fhat[j], b);
        for (int k = 0; k < d; ++k)
            basis[static_cast<size_t>(k) * n + j] = b[static_cast<size_t>(k)];
    }

    // vol functions sigma_k * b_k(x), piecewise linear in x
    std::vector<GridLoading> loadings;
    for (int k = 0; k < d; ++k) {
        std::vector<double> ys(n);
        for (size_t j = 0; j < n; ++j)
            ys[j] = sigma_k[static_cast<size_t>(k)] * basis[static_cast<size_t>(k) * n + j];
        loadings.emplace_back(grid.tenors, ys);
    }

    // Calendar-maturity evolution on the fixed tenor grid: the drift is the
    // vol-induced HJM restriction alone (no transport term), so zero vol
    // leaves the curve in place.
    GaussLegendre gl(quad_n);
    std::vector<double> f_next(n);
    for (size_t j = 0; j < n; ++j) {
        double drift = 0.0, diff = 0.0;
        for (int k = 0; k < d; ++k) {
            const auto& lk = loadings[static_cast<size_t>(k)];
            drift += lk(grid.tenors[j]) *
                     gl.integrate([&](double u) { return lk(u); }, 0.0, grid.tenors[j]);
            diff += lk(grid.tenors[j]) * noise[static_cast<size_t>(k)];
        }
        f_next[j] = f_t[j] + drift * dt + diff * std::sqrt(dt);
    }

    // projection back onto the manifold
    auto stn = aemm_project(m, f_next, ccy);
    return aemm_forward_curve(m, stn.z, ccy, stn.level_scaled);
}

}  // namespace arbfree
