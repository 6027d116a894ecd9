// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "arbfree/util.hpp"

namespace arbfree {

/// Gauss-Legendre rule on [-1,1]; nodes found by Newton iteration on the
/// Legendre polynomial. Exact for polynomials up to degree 2n-1.
class GaussLegendre {
public:
    explicit GaussLegendre(int n) {
        if (n < 1) throw ConfigError("GaussLegendre: n >= 1 required");
        nodes_.resize(static_cast<size_t>(n));
        weights_.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            // Chebyshev-based initial guess, then Newton on P_n.
            double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
            double pn = 0.0, pn1 = 0.0;
            for (int it = 0; it < 100; ++it) {
                eval_legendre(x, n, pn, pn1);
                double dp = n * (x * pn - pn1) / (x * x - 1.0);
                double dx = pn / dp;
                x -= dx;
                if (std::abs(dx) < 1e-15) break;
            }
            eval_legendre(x, n, pn, pn1);
            double dp = n * (x * pn - pn1) / (x * x - 1.0);
            nodes_[static_cast<size_t>(i)] = x;
            weights_[static_cast<size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }

    template <typename F>
    double integrate(F&& f, double a, double b) const {
        double mid = 0.5 * (a + b);
        double half = 0.5 * (b - a);
        double acc = 0.0;
        for (size_t i = 0; i < nodes_.size(); ++i)
            acc += weights_[i] * f(mid + half * nodes_[i]);
        return acc * half;
    }

    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& weights() const { return weights_; }

private:
    /// pn = P_n(x), pn1 = P_{n-1}(x) by upward recurrence.
    static void eval_legendre(double x, int n, double& pn, double& pn1) {
        double p1 = 1.0, p2 = 0.0;
        for (int j = 0; j < n; ++j) {
            double p3 = p2;
            p2 = p1;
            p1 = ((2.0 * j + 1.0) * x * p2 - j * p3) / (j + 1.0);
        }
        pn = p1;
        pn1 = p2;
    }

    std::vector<double> nodes_;
    std::vector<double> weights_;
};

}  // namespace arbfree
