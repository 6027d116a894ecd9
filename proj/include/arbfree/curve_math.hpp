// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "arbfree/quadrature.hpp"
#include "arbfree/tenor_grid.hpp"
#include "arbfree/util.hpp"

namespace arbfree {

// ---------------------------------------------------------------------------
// Elementary conversions
// ---------------------------------------------------------------------------

/// P = exp(-y * tau), continuously compounded.
inline double zcb_from_yield(double y, double tau) {
    if (!std::isfinite(y) || !std::isfinite(tau) || tau < 0.0)
        throw std::domain_error("zcb_from_yield: need finite y and tau >= 0");
    return std::exp(-y * tau);
}

/// y = -ln(P)/tau, inverse of zcb_from_yield.
inline double yield_from_zcb(double discount, double tau) {
    if (!(discount > 0.0) || !(tau > 0.0))
        throw std::domain_error("yield_from_zcb: need P > 0 and tau > 0");
    return -std::log(discount) / tau;
}

/// Simple money-market rate implied by a single discount: (1/P - 1)/tau.
inline double money_market_rate(double discount, double tau) {
    if (!(discount > 0.0) || !(tau > 0.0))
        throw std::domain_error("money_market_rate: need P > 0 and tau > 0");
    return (1.0 / discount - 1.0) / tau;
}

// ---------------------------------------------------------------------------
// Monotone cubic interpolation (Fritsch-Carlson / PCHIP tangents)
// ---------------------------------------------------------------------------

/// Shape-preserving cubic Hermite interpolant. Used on log-discounts so that
/// finite-difference forwards stay free of spline oscillation.
class MonotoneCubic {
public:
    MonotoneCubic() = default;
    MonotoneCubic(std::vector<double> xs, std::vector<double> ys)
        : x_(std::move(xs)), y_(std::move(ys)) {
        const size_t n = x_.size();
        if (n < 2 || y_.size() != n)
            throw std::domain_error("MonotoneCubic: need >= 2 points");
        for (size_t i = 1; i < n; ++i)
            if (!(x_[i] > x_[i - 1]))
                throw std::domain_error("MonotoneCubic: x must be strictly increasing");
        m_.assign(n, 0.0);
        std::vector<double> h(n - 1), d(n - 1);
        for (size_t i = 0; i + 1 < n; ++i) {
            h[i] = x_[i + 1] - x_[i];
            d[i] = (y_[i + 1] - y_[i]) / h[i];
        }
        if (n == 2) {
            m_[0] = m_[1] = d[0];
            return;
        }
        for (size_t i = 1; i + 1 < n; ++i) {
            if (d[i - 1] * d[i] <= 0.0) {
                m_[i] = 0.0;
            } else {
                double w1 = 2.0 * h[i] + h[i - 1];
                double w2 = h[i] + 2.0 * h[i - 1];
                m_[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        m_[0] = edge_tangent(h[0], h[1], d[0], d[1]);
        m_[n - 1] = edge_tangent(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    }

    double min_x() const { return x_.front(); }
    double max_x() const { return x_.back(); }

    double operator()(double x) const {
        size_t i = locate(x);
        double h = x_[i + 1] - x_[i];
        double t = (x - x_[i]) / h;
        double t2 = t * t, t3 = t2 * t;
        double h00 = 2 * t3 - 3 * t2 + 1;
        double h10 = t3 - 2 * t2 + t;
        double h01 = -2 * t3 + 3 * t2;
        double h11 = t3 - t2;
        return h00 * y_[i] + h10 * h * m_[i] + h01 * y_[i + 1] + h11 * h * m_[i + 1];
    }

    double derivative(double x) const {
        size_t i = locate(x);
        double h = x_[i + 1] - x_[i];
        double t = (x - x_[i]) / h;
        double t2 = t * t;
        double dh00 = (6 * t2 - 6 * t) / h;
        double dh10 = 3 * t2 - 4 * t + 1;
        double dh01 = (-6 * t2 + 6 * t) / h;
        double dh11 = 3 * t2 - 2 * t;
        return dh00 * y_[i] + dh10 * m_[i] + dh01 * y_[i + 1] + dh11 * m_[i + 1];
    }

private:
    static double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

    /// Three-point one-sided estimate with the usual monotonicity clamps.
    static double edge_tangent(double h0, double h1, double d0, double d1) {
        double m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if (sign(m) != sign(d0))
            m = 0.0;
        else if (sign(d0) != sign(d1) && std::abs(m) > 3.0 * std::abs(d0))
            m = 3.0 * d0;
        return m;
    }

    size_t locate(double x) const {
        if (x < x_.front() || x > x_.back())
            throw std::out_of_range("MonotoneCubic: x outside data range");
        auto it = std::upper_bound(x_.begin(), x_.end(), x);
        size_t i = static_cast<size_t>(it - x_.begin());
        if (i > 0) --i;
        if (i + 1 >= x_.size()) i = x_.size() - 2;
        return i;
    }

    std::vector<double> x_, y_, m_;
};

// ---------------------------------------------------------------------------
// Discount curve
// ---------------------------------------------------------------------------

/// Per-tenor discount factors on a grid, with P(0) = 1 by convention.
/// Log-discounts are interpolated by monotone cubic for forward-rate work
/// and by log-linear segments for annuity fills (piecewise-constant
/// forwards), matching the bootstrapper.
struct DiscountCurve {
    TenorGrid grid;
    std::vector<double> discounts;

    DiscountCurve() = default;
    DiscountCurve(TenorGrid g, std::vector<double> ps)
        : grid(std::move(g)), discounts(std::move(ps)) {
        if (discounts.size() != grid.size())
            throw std::domain_error("DiscountCurve: size mismatch");
        for (double p : discounts)
            if (!(p > 0.0) || !std::isfinite(p))
                throw std::domain_error("DiscountCurve: discounts must be finite and > 0");
        std::vector<double> xs(grid.size() + 1), ys(grid.size() + 1);
        xs[0] = 0.0;
        ys[0] = 0.0;
        for (size_t i = 0; i < grid.size(); ++i) {
            xs[i + 1] = grid.tenors[i];
            ys[i + 1] = std::log(discounts[i]);
        }
        interp_ = MonotoneCubic(std::move(xs), std::move(ys));
    }

    double log_discount(double tau) const { return interp_(tau); }
    double discount(double tau) const { return std::exp(interp_(tau)); }

    /// Analytic derivative of the interpolated log-discount (the negative
    /// instantaneous forward), valid on [0, max tenor] including the ends.
    double log_discount_derivative(double tau) const { return interp_.derivative(tau); }

    /// Log-linear discount between grid nodes (node at tau=0 implied).
    double loglinear_discount(double tau) const {
        if (tau < 0.0 || tau > grid.tenors.back() + 1e-12)
            throw std::out_of_range("loglinear_discount: tau outside grid");
        if (tau <= 0.0) return 1.0;
        double x0 = 0.0, y0 = 0.0;
        for (size_t i = 0; i < grid.size(); ++i) {
            double x1 = grid.tenors[i];
            double y1 = std::log(discounts[i]);
            if (tau <= x1 + 1e-12) {
                double w = (tau - x0) / (x1 - x0);
                return std::exp(y0 + w * (y1 - y0));
            }
            x0 = x1;
            y0 = y1;
        }
        return discounts.back();
    }

private:
    MonotoneCubic interp_;
};

/// Instantaneous forward by central difference of the interpolated
/// log-discount: f(tau) = -(ln P(tau+h) - ln P(tau-h)) / (2h).
inline double instantaneous_forward(const DiscountCurve& curve, double tau,
                                    double h = 1e-4) {
    if (!(h > 0.0)) throw std::domain_error("instantaneous_forward: h > 0 required");
    double lo = curve.grid.tenors.front() + h;
    double hi = curve.grid.tenors.back() - h;
    if (tau < lo || tau > hi)
        throw std::out_of_range("instantaneous_forward: tau outside interior range");
    return -(curve.log_discount(tau + h) - curve.log_discount(tau - h)) / (2.0 * h);
}

// ---------------------------------------------------------------------------
// Par swaps
// ---------------------------------------------------------------------------

/// Par rate of a swap paying on every grid tenor up to maturity_index with
/// the grid accruals: S = (P_t0 - P_n) / sum delta_i P_i. Spot start by
/// default; t0_index selects a forward start (unused by the pipeline).
inline double par_swap_rate(const DiscountCurve& curve, int maturity_index,
                            int t0_index = -1) {
    const auto n = static_cast<int>(curve.grid.size());
    if (maturity_index < 0 || maturity_index >= n)
        throw std::out_of_range("par_swap_rate: bad maturity index");
    if (t0_index >= maturity_index)
        throw std::out_of_range("par_swap_rate: start must precede maturity");
    double p0 = t0_index < 0 ? 1.0 : curve.discounts[static_cast<size_t>(t0_index)];
    double annuity = 0.0;
    double prev_tau =
        t0_index < 0 ? 0.0 : curve.grid.tenors[static_cast<size_t>(t0_index)];
    for (int i = t0_index + 1; i <= maturity_index; ++i) {
        double delta = curve.grid.tenors[static_cast<size_t>(i)] - prev_tau;
        annuity += delta * curve.discounts[static_cast<size_t>(i)];
        prev_tau = curve.grid.tenors[static_cast<size_t>(i)];
    }
    if (annuity <= 1e-12)
        throw std::domain_error("par_swap_rate: degenerate annuity");
    return (p0 - curve.discounts[static_cast<size_t>(maturity_index)]) / annuity;
}

/// OIS-style quote from an arbitrary discount function: simple money-market
/// rate below 1Y, annual-coupon par swap at integer maturities >= 1Y.
template <typename DiscountFn>
double swap_quote(DiscountFn&& discount, double tau) {
    if (!(tau > 0.0)) throw std::domain_error("swap_quote: tau > 0 required");
    if (tau < 1.0) return money_market_rate(discount(tau), tau);
    if (!nearly_integer(tau))
        throw std::domain_error("swap_quote: maturities >= 1Y must be whole years");
    int n = static_cast<int>(std::llround(tau));
    double annuity = 0.0;
    for (int k = 1; k <= n; ++k) annuity += discount(static_cast<double>(k));
    if (annuity <= 1e-12) throw std::domain_error("swap_quote: degenerate annuity");
    return (1.0 - discount(tau)) / annuity;
}

/// Quotes on every tenor of a grid from a discount function.
template <typename DiscountFn>
std::vector<double> swap_quotes(DiscountFn&& discount, const TenorGrid& grid) {
    std::vector<double> out(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) out[i] = swap_quote(discount, grid.tenors[i]);
    return out;
}

/// Inverse of swap_quotes on the quote grid. Solves tenor by tenor; the
/// annual coupon dates falling between quoted tenors are filled by
/// log-linear discount interpolation, which makes requoting the
/// bootstrapped curve reproduce the inputs exactly.
inline DiscountCurve bootstrap_discounts(std::span<const double> swaps,
                                         const TenorGrid& grid) {
    if (swaps.size() != grid.size())
        throw std::domain_error("bootstrap_discounts: quote/grid size mismatch");
    for (double s : swaps)
        if (!std::isfinite(s)) throw std::domain_error("bootstrap_discounts: non-finite quote");

    std::vector<double> ps(grid.size());
    double prev_annual_tau = 0.0;   // last solved annual node (0 = spot)
    double prev_annual_logp = 0.0;  // its log discount
    double solved_annuity = 0.0;    // annuity over coupons at or before prev_annual_tau

    for (size_t i = 0; i < grid.size(); ++i) {
        const double tau = grid.tenors[i];
        const double s = swaps[i];
        if (tau < 1.0) {
            double p = 1.0 / (1.0 + s * tau);
            if (!(p > 0.0))
                throw std::domain_error("bootstrap_discounts: infeasible money-market quote");
            ps[i] = p;
            continue;
        }
        if (!nearly_integer(tau))
            throw std::domain_error("bootstrap_discounts: swap tenors must be whole years");
        const int n = static_cast<int>(std::llround(tau));
        const int n_prev = static_cast<int>(std::llround(prev_annual_tau));

        // Annuity of the new coupons as a function of ln P(tau): coupons at
        // years n_prev+1..n interpolate log-linearly between the previous
        // annual node and the unknown.
        auto residual = [&](double logp) {
            double annuity = solved_annuity;
            for (int k = n_prev + 1; k <= n; ++k) {
                double w = (static_cast<double>(k) - prev_annual_tau) / (tau - prev_annual_tau);
                annuity += std::exp(prev_annual_logp + w * (logp - prev_annual_logp));
            }
            return (1.0 - std::exp(logp)) - s * annuity;
        };

        // residual is strictly decreasing in logp; bracket then Newton-bisect.
        double lo = -40.0, hi = 5.0;
        if (residual(lo) < 0.0)
            throw std::domain_error("bootstrap_discounts: infeasible quote (implied P <= 0)");
        if (residual(hi) > 0.0)
            throw std::domain_error("bootstrap_discounts: infeasible quote (annuity sign)");
        double x = std::log(std::max(1e-12, 1.0 / (1.0 + s * tau)));
        x = std::clamp(x, lo, hi);
        for (int it = 0; it < 200; ++it) {
            double f = residual(x);
            if (f > 0.0)
                lo = x;
            else
                hi = x;
            double h = 1e-7;
            double df = (residual(x + h) - residual(x - h)) / (2.0 * h);
            double step = df != 0.0 ? f / df : 0.0;
            double xn = x - step;
            if (!(xn > lo) || !(xn < hi)) xn = 0.5 * (lo + hi);
            if (std::abs(xn - x) < 1e-15) {
                x = xn;
                break;
            }
            x = xn;
        }
        ps[i] = std::exp(x);

        // Fold the newly determined coupons into the solved annuity.
        for (int k = n_prev + 1; k <= n; ++k) {
            double w = (static_cast<double>(k) - prev_annual_tau) / (tau - prev_annual_tau);
            solved_annuity += std::exp(prev_annual_logp + w * (x - prev_annual_logp));
        }
        prev_annual_tau = tau;
        prev_annual_logp = x;
    }
    return DiscountCurve(grid, std::move(ps));
}

/// Requotes a bootstrapped curve with the same annuity fill the solver used.
inline std::vector<double> requote(const DiscountCurve& curve) {
    std::vector<double> out(curve.grid.size());
    for (size_t i = 0; i < curve.grid.size(); ++i) {
        double tau = curve.grid.tenors[i];
        out[i] = swap_quote([&](double t) { return curve.loglinear_discount(t); }, tau);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Nelson-Siegel-Svensson
// ---------------------------------------------------------------------------

struct NssParams {
    double beta0 = 0.0, beta1 = 0.0, beta2 = 0.0, beta3 = 0.0;
    double lambda1 = 1.0, lambda2 = 1.0;

    void validate() const {
        for (double v : {beta0, beta1, beta2, beta3, lambda1, lambda2})
            if (!std::isfinite(v)) throw std::domain_error("NssParams: non-finite value");
        if (!(lambda1 > 0.0) || !(lambda2 > 0.0))
            throw std::domain_error("NssParams: decay scales must be positive");
    }
};

namespace detail {
// (1 - e^{-x})/x with a series branch near 0.
inline double nss_loading(double x) {
    if (std::abs(x) < 1e-6) return 1.0 - x / 2.0 + x * x / 6.0;
    return -std::expm1(-x) / x;
}
inline double nss_loading_dx(double x) {
    if (std::abs(x) < 1e-6) return -0.5 + x / 3.0 - x * x / 8.0;
    return (std::exp(-x) * (1.0 + x) - 1.0) / (x * x);
}
}  // namespace detail

/// Zero-coupon yield of the six-parameter NSS family.
inline double nss_yield(const NssParams& p, double tau) {
    p.validate();
    if (tau < 0.0) throw std::domain_error("nss_yield: tau >= 0 required");
    double x1 = tau / p.lambda1;
    double x2 = tau / p.lambda2;
    double l1 = detail::nss_loading(x1);
    double c1 = l1 - std::exp(-x1);
    double c2 = detail::nss_loading(x2) - std::exp(-x2);
    return p.beta0 + p.beta1 * l1 + p.beta2 * c1 + p.beta3 * c2;
}

/// Instantaneous forward of the NSS family.
inline double nss_forward(const NssParams& p, double tau) {
    p.validate();
    if (tau < 0.0) throw std::domain_error("nss_forward: tau >= 0 required");
    double x1 = tau / p.lambda1;
    double x2 = tau / p.lambda2;
    return p.beta0 + p.beta1 * std::exp(-x1) + p.beta2 * x1 * std::exp(-x1) +
           p.beta3 * x2 * std::exp(-x2);
}

/// Discount curve on a grid implied by NSS yields.
inline DiscountCurve nss_discount_curve(const NssParams& p, const TenorGrid& grid) {
    std::vector<double> ps(grid.size());
    for (size_t i = 0; i < grid.size(); ++i)
        ps[i] = zcb_from_yield(nss_yield(p, grid.tenors[i]), grid.tenors[i]);
    return DiscountCurve(grid, std::move(ps));
}

struct NssFit {
    NssParams params;
    double rmse = 0.0;
    bool converged = false;
    int iterations = 0;
};

/// Levenberg-Marquardt least squares on (beta, log lambda). The log
/// parameterization keeps the decay scales positive without constraints.
inline NssFit fit_nss(std::span<const double> taus, std::span<const double> yields,
                      const NssParams& init, int max_iter = 200) {
    if (taus.size() != yields.size() || taus.size() < 6)
        throw std::domain_error("fit_nss: need >= 6 observations");
    init.validate();

    auto unpack = [](const Eigen::VectorXd& q) {
        NssParams p;
        p.beta0 = q[0];
        p.beta1 = q[1];
        p.beta2 = q[2];
        p.beta3 = q[3];
        p.lambda1 = std::exp(q[4]);
        p.lambda2 = std::exp(q[5]);
        return p;
    };
    Eigen::VectorXd q(6);
    q << init.beta0, init.beta1, init.beta2, init.beta3, std::log(init.lambda1),
        std::log(init.lambda2);

    const auto m = static_cast<Eigen::Index>(taus.size());
    auto residuals = [&](const NssParams& p, Eigen::VectorXd& r) {
        for (Eigen::Index i = 0; i < m; ++i)
            r[i] = nss_yield(p, taus[static_cast<size_t>(i)]) -
                   yields[static_cast<size_t>(i)];
    };
    auto jacobian = [&](const NssParams& p, Eigen::MatrixXd& J) {
        for (Eigen::Index i = 0; i < m; ++i) {
            double tau = taus[static_cast<size_t>(i)];
            double x1 = tau / p.lambda1, x2 = tau / p.lambda2;
            double l1 = detail::nss_loading(x1);
            double c1 = l1 - std::exp(-x1);
            double c2 = detail::nss_loading(x2) - std::exp(-x2);
            J(i, 0) = 1.0;
            J(i, 1) = l1;
            J(i, 2) = c1;
            J(i, 3) = c2;
            // d/dlog(lambda) = d/dx * dx/dlog(lambda) = d/dx * (-x)
            double dl1 = detail::nss_loading_dx(x1);
            double dc1 = dl1 + std::exp(-x1);
            double dc2 = detail::nss_loading_dx(x2) + std::exp(-x2);
            J(i, 4) = (p.beta1 * dl1 + p.beta2 * dc1) * (-x1);
            J(i, 5) = p.beta3 * dc2 * (-x2);
        }
    };

    Eigen::VectorXd r(m);
    Eigen::MatrixXd J(m, 6);
    NssParams cur = unpack(q);
    residuals(cur, r);
    double cost = r.squaredNorm();
    double mu = 1e-3;
    bool converged = false;
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        jacobian(cur, J);
        Eigen::MatrixXd H = J.transpose() * J;
        Eigen::VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() < 1e-14) {
            converged = true;
            break;
        }
        Eigen::MatrixXd A = H;
        A.diagonal().array() += mu;
        Eigen::VectorXd step = A.ldlt().solve(g);
        Eigen::VectorXd qn = q - step;
        NssParams pn = unpack(qn);
        Eigen::VectorXd rn(m);
        residuals(pn, rn);
        double cn = rn.squaredNorm();
        if (cn < cost) {
            q = qn;
            cur = pn;
            r = rn;
            if (cost - cn < 1e-18 * (1.0 + cost)) {
                cost = cn;
                converged = true;
                break;
            }
            cost = cn;
            mu = std::max(mu / 3.0, 1e-12);
        } else {
            mu *= 2.0;
            if (mu > 1e12) break;
        }
    }
    NssFit fit;
    fit.params = cur;
    fit.rmse = std::sqrt(cost / static_cast<double>(m));
    fit.converged = converged;
    fit.iterations = iter;
    return fit;
}

// ---------------------------------------------------------------------------
// HJM / Musiela drifts
// ---------------------------------------------------------------------------

using VolFn2 = std::function<double(double, double)>;  // sigma_i(t, T)
using VolFn1 = std::function<double(double)>;          // sigma_i(x)

/// Risk-neutral HJM drift: sum_i sigma_i(t,T) * int_t^T sigma_i(t,u) du,
/// with Gauss-Legendre quadrature per factor.
inline double hjm_drift(std::span<const VolFn2> sigmas, double t, double T,
                        int quad_n = 32) {
    if (!(T >= t)) throw std::domain_error("hjm_drift: T >= t required");
    GaussLegendre gl(quad_n);
    double acc = 0.0;
    for (const auto& s : sigmas)
        acc += s(t, T) * gl.integrate([&](double u) { return s(t, u); }, t, T);
    return acc;
}

/// Musiela drift in time-to-maturity coordinates:
/// mu(x) = d_x r(x) + sum_i sigma_i(x) * int_0^x sigma_i(u) du.
inline double musiela_drift(double slope_x, std::span<const VolFn1> sigmas, double x,
                            int quad_n = 32) {
    if (!std::isfinite(slope_x)) throw std::domain_error("musiela_drift: non-finite slope");
    GaussLegendre gl(quad_n);
    double acc = slope_x;
    for (const auto& s : sigmas)
        acc += s(x) * gl.integrate([&](double u) { return s(u); }, 0.0, x);
    return acc;
}

/// Same drift against a shared quadrature rule (hot loops in simulators).
inline double musiela_drift(double slope_x, std::span<const VolFn1> sigmas, double x,
                            const GaussLegendre& gl) {
    double acc = slope_x;
    for (const auto& s : sigmas)
        acc += s(x) * gl.integrate([&](double u) { return s(u); }, 0.0, x);
    return acc;
}

}  // namespace arbfree
