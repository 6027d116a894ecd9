// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "arbfree/mlp.hpp"

namespace arbfree {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment buffers for one Mlp.
struct AdamState {
    AdamConfig cfg;
    int64_t step = 0;
    Grads m, v;

    static AdamState init(const Mlp& net, AdamConfig cfg = {}) {
        AdamState st;
        st.cfg = cfg;
        st.m = Grads::zeros_like(net);
        st.v = Grads::zeros_like(net);
        return st;
    }
};

namespace detail {
inline void adam_update(std::span<double> w, std::span<const double> g,
                        std::span<double> m, std::span<double> v,
                        const AdamConfig& cfg, double bc1, double bc2) {
    for (size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        double mh = m[i] / bc1;
        double vh = v[i] / bc2;
        w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
}
}  // namespace detail

/// Standard bias-corrected Adam step, deterministic in index order.
inline void adam_step(Mlp& net, const Grads& g, AdamState& st) {
    ++st.step;
    double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
    for (size_t l = 0; l < net.layer_count(); ++l) {
        detail::adam_update(net.W[l], g.gW[l], st.m.gW[l], st.v.gW[l], st.cfg, bc1, bc2);
        detail::adam_update(net.b[l], g.gb[l], st.m.gb[l], st.v.gb[l], st.cfg, bc1, bc2);
    }
}

/// Adam over a flat parameter block (embedding tables and the like).
struct VecAdamState {
    AdamConfig cfg;
    int64_t step = 0;
    std::vector<double> m, v;

    static VecAdamState init(size_t n, AdamConfig cfg = {}) {
        VecAdamState st;
        st.cfg = cfg;
        st.m.assign(n, 0.0);
        st.v.assign(n, 0.0);
        return st;
    }
};

inline void adam_step(std::vector<double>& w, std::span<const double> g,
                      VecAdamState& st) {
    ++st.step;
    double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
    detail::adam_update(w, g, st.m, st.v, st.cfg, bc1, bc2);
}

}  // namespace arbfree
