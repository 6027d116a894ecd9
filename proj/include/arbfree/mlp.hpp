// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "arbfree/rng.hpp"
#include "arbfree/util.hpp"

namespace arbfree {

/// Activations are restricted to functions with smooth second derivatives:
/// the no-arbitrage penalty differentiates the decoder twice, and
/// piecewise-linear nonlinearities would leave the Hessian trace undefined
/// on a measure-zero set and unstable near it.
enum class Activation { Tanh, Softplus, Identity };

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Softplus: return "softplus";
        case Activation::Identity: return "identity";
    }
    throw ConfigError("unknown activation");
}

inline Activation activation_from_name(std::string_view s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "softplus") return Activation::Softplus;
    if (s == "identity") return Activation::Identity;
    throw ConfigError("unknown activation tag: " + std::string(s));
}

inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

namespace detail {
inline double act(Activation a, double x) {
    switch (a) {
        case Activation::Tanh: return std::tanh(x);
        case Activation::Softplus: return softplus(x);
        case Activation::Identity: return x;
    }
    return x;
}
inline double act_d(Activation a, double x) {
    switch (a) {
        case Activation::Tanh: {
            double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case Activation::Softplus: return sigmoid(x);
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}
inline double act_dd(Activation a, double x) {
    switch (a) {
        case Activation::Tanh: {
            double t = std::tanh(x);
            return -2.0 * t * (1.0 - t * t);
        }
        case Activation::Softplus: {
            double s = sigmoid(x);
            return s * (1.0 - s);
        }
        case Activation::Identity: return 0.0;
    }
    return 0.0;
}
}  // namespace detail

/// Dense multilayer perceptron in 64-bit floats. Weight matrices are
/// row-major [out][in].
struct Mlp {
    std::vector<int> widths;            // layer sizes, first = input dim
    std::vector<Activation> acts;       // one per layer
    std::vector<std::vector<double>> W;
    std::vector<std::vector<double>> b;

    static Mlp create(std::vector<int> widths, std::vector<Activation> acts) {
        if (widths.size() < 2 || acts.size() != widths.size() - 1)
            throw ConfigError("Mlp: widths/activations mismatch");
        for (int w : widths)
            if (w < 1) throw ConfigError("Mlp: widths must be positive");
        Mlp net;
        net.widths = std::move(widths);
        net.acts = std::move(acts);
        size_t L = net.acts.size();
        net.W.resize(L);
        net.b.resize(L);
        for (size_t l = 0; l < L; ++l) {
            net.W[l].assign(static_cast<size_t>(net.widths[l + 1]) *
                                static_cast<size_t>(net.widths[l]),
                            0.0);
            net.b[l].assign(static_cast<size_t>(net.widths[l + 1]), 0.0);
        }
        return net;
    }

    int in_dim() const { return widths.front(); }
    int out_dim() const { return widths.back(); }
    size_t layer_count() const { return acts.size(); }

    size_t param_count() const {
        size_t n = 0;
        for (size_t l = 0; l < layer_count(); ++l) n += W[l].size() + b[l].size();
        return n;
    }

    /// Xavier-uniform init; gain 5/3 on tanh layers, 1 elsewhere.
    void init_xavier(Rng& rng) {
        for (size_t l = 0; l < layer_count(); ++l) {
            double gain = acts[l] == Activation::Tanh ? 5.0 / 3.0 : 1.0;
            double fan_in = widths[l], fan_out = widths[l + 1];
            double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& w : W[l]) w = (2.0 * rng.uniform() - 1.0) * limit;
            for (auto& x : b[l]) x = 0.0;
        }
    }

    uint64_t checksum() const {
        uint64_t h = kFnvOffset;
        for (size_t l = 0; l < layer_count(); ++l) {
            h = fnv1a64(std::span<const double>(W[l]), h);
            h = fnv1a64(std::span<const double>(b[l]), h);
        }
        return h;
    }
};

/// Parameter-shaped gradient accumulator.
struct Grads {
    std::vector<std::vector<double>> gW, gb;

    static Grads zeros_like(const Mlp& net) {
        Grads g;
        g.gW.resize(net.layer_count());
        g.gb.resize(net.layer_count());
        for (size_t l = 0; l < net.layer_count(); ++l) {
            g.gW[l].assign(net.W[l].size(), 0.0);
            g.gb[l].assign(net.b[l].size(), 0.0);
        }
        return g;
    }
    void zero() {
        for (auto& v : gW) std::fill(v.begin(), v.end(), 0.0);
        for (auto& v : gb) std::fill(v.begin(), v.end(), 0.0);
    }
    void scale(double s) {
        for (auto& v : gW)
            for (auto& x : v) x *= s;
        for (auto& v : gb)
            for (auto& x : v) x *= s;
    }
    void add(const Grads& o, double coef = 1.0) {
        for (size_t l = 0; l < gW.size(); ++l) {
            for (size_t i = 0; i < gW[l].size(); ++i) gW[l][i] += coef * o.gW[l][i];
            for (size_t i = 0; i < gb[l].size(); ++i) gb[l][i] += coef * o.gb[l][i];
        }
    }
    bool finite() const {
        for (const auto& v : gW)
            for (double x : v)
                if (!std::isfinite(x)) return false;
        for (const auto& v : gb)
            for (double x : v)
                if (!std::isfinite(x)) return false;
        return true;
    }
};

/// Cached activations from one forward pass, reused by backward.
struct MlpWorkspace {
    std::vector<std::vector<double>> a;  // a[0] = input, a[l+1] = layer output
    std::vector<std::vector<double>> s;  // pre-activations

    void resize(const Mlp& net) {
        a.resize(net.layer_count() + 1);
        s.resize(net.layer_count());
        for (size_t l = 0; l <= net.layer_count(); ++l)
            a[l].resize(static_cast<size_t>(net.widths[l]));
        for (size_t l = 0; l < net.layer_count(); ++l)
            s[l].resize(static_cast<size_t>(net.widths[l + 1]));
    }
};

inline void forward(const Mlp& net, std::span<const double> x, MlpWorkspace& ws) {
    if (static_cast<int>(x.size()) != net.in_dim())
        throw std::invalid_argument("forward: input dimension mismatch");
    ws.resize(net);
    std::copy(x.begin(), x.end(), ws.a[0].begin());
    for (size_t l = 0; l < net.layer_count(); ++l) {
        const int nin = net.widths[l], nout = net.widths[l + 1];
        const double* w = net.W[l].data();
        const double* in = ws.a[l].data();
        for (int o = 0; o < nout; ++o) {
            double acc = net.b[l][static_cast<size_t>(o)];
            const double* wr = w + static_cast<size_t>(o) * static_cast<size_t>(nin);
            for (int i = 0; i < nin; ++i) acc += wr[i] * in[i];
            ws.s[l][static_cast<size_t>(o)] = acc;
            ws.a[l + 1][static_cast<size_t>(o)] = detail::act(net.acts[l], acc);
        }
    }
}

inline std::vector<double> forward(const Mlp& net, std::span<const double> x) {
    MlpWorkspace ws;
    forward(net, x, ws);
    return ws.a.back();
}

/// Reverse sweep for <upstream, f(x)>. Parameter gradients accumulate into
/// `g` when provided; the input gradient lands in `input_grad` when
/// non-empty. Requires the workspace of a prior forward at the same x.
inline void backward(const Mlp& net, const MlpWorkspace& ws,
                     std::span<const double> upstream, Grads* g,
                     std::span<double> input_grad) {
    if (static_cast<int>(upstream.size()) != net.out_dim())
        throw std::invalid_argument("backward: upstream dimension mismatch");
    const size_t L = net.layer_count();
    thread_local std::vector<double> ga, gs;
    ga.assign(upstream.begin(), upstream.end());
    for (size_t li = L; li-- > 0;) {
        const int nin = net.widths[li], nout = net.widths[li + 1];
        gs.resize(static_cast<size_t>(nout));
        for (int o = 0; o < nout; ++o)
            gs[static_cast<size_t>(o)] =
                ga[static_cast<size_t>(o)] *
                detail::act_d(net.acts[li], ws.s[li][static_cast<size_t>(o)]);
        if (g) {
            double* gw = g->gW[li].data();
            const double* in = ws.a[li].data();
            for (int o = 0; o < nout; ++o) {
                double go = gs[static_cast<size_t>(o)];
                double* gwr = gw + static_cast<size_t>(o) * static_cast<size_t>(nin);
                for (int i = 0; i < nin; ++i) gwr[i] += go * in[i];
                g->gb[li][static_cast<size_t>(o)] += go;
            }
        }
        // propagate to previous activations
        thread_local std::vector<double> prev;
        prev.assign(static_cast<size_t>(nin), 0.0);
        const double* w = net.W[li].data();
        for (int o = 0; o < nout; ++o) {
            double go = gs[static_cast<size_t>(o)];
            const double* wr = w + static_cast<size_t>(o) * static_cast<size_t>(nin);
            for (int i = 0; i < nin; ++i) prev[static_cast<size_t>(i)] += go * wr[i];
        }
        ga = prev;
    }
    if (!input_grad.empty()) {
        if (input_grad.size() != static_cast<size_t>(net.in_dim()))
            throw std::invalid_argument("backward: input_grad size mismatch");
        std::copy(ga.begin(), ga.end(), input_grad.begin());
    }
}

/// Exact Jacobian (outputs x inputs, row-major) via one reverse sweep per
/// output.
inline std::vector<double> input_jacobian(const Mlp& net, std::span<const double> x) {
    MlpWorkspace ws;
    forward(net, x, ws);
    const int out = net.out_dim(), in = net.in_dim();
    std::vector<double> J(static_cast<size_t>(out) * static_cast<size_t>(in));
    std::vector<double> upstream(static_cast<size_t>(out), 0.0);
    std::vector<double> row(static_cast<size_t>(in));
    for (int k = 0; k < out; ++k) {
        upstream[static_cast<size_t>(k)] = 1.0;
        backward(net, ws, upstream, nullptr, row);
        upstream[static_cast<size_t>(k)] = 0.0;
        std::copy(row.begin(), row.end(),
                  J.begin() + static_cast<size_t>(k) * static_cast<size_t>(in));
    }
    return J;
}

/// Forward-over-reverse sweep: exact gradient of output k at x together
/// with the Hessian-vector product H v.
inline void hvp(const Mlp& net, std::span<const double> x, int output_index,
                std::span<const double> v, std::span<double> grad_out,
                std::span<double> hv_out) {
    if (static_cast<int>(x.size()) != net.in_dim() ||
        static_cast<int>(v.size()) != net.in_dim())
        throw std::invalid_argument("hvp: dimension mismatch");
    if (output_index < 0 || output_index >= net.out_dim())
        throw std::invalid_argument("hvp: bad output index");
    const size_t L = net.layer_count();

    // forward with tangent
    std::vector<std::vector<double>> a(L + 1), da(L + 1), s(L), ds(L);
    a[0].assign(x.begin(), x.end());
    da[0].assign(v.begin(), v.end());
    for (size_t l = 0; l < L; ++l) {
        const int nin = net.widths[l], nout = net.widths[l + 1];
        a[l + 1].resize(static_cast<size_t>(nout));
        da[l + 1].resize(static_cast<size_t>(nout));
        s[l].resize(static_cast<size_t>(nout));
        ds[l].resize(static_cast<size_t>(nout));
        const double* w = net.W[l].data();
        for (int o = 0; o < nout; ++o) {
            double acc = net.b[l][static_cast<size_t>(o)];
            double dacc = 0.0;
            const double* wr = w + static_cast<size_t>(o) * static_cast<size_t>(nin);
            for (int i = 0; i < nin; ++i) {
                acc += wr[i] * a[l][static_cast<size_t>(i)];
                dacc += wr[i] * da[l][static_cast<size_t>(i)];
            }
            s[l][static_cast<size_t>(o)] = acc;
            ds[l][static_cast<size_t>(o)] = dacc;
            a[l + 1][static_cast<size_t>(o)] = detail::act(net.acts[l], acc);
            da[l + 1][static_cast<size_t>(o)] = detail::act_d(net.acts[l], acc) * dacc;
        }
    }

    // reverse with tangent
    std::vector<double> ga(static_cast<size_t>(net.out_dim()), 0.0);
    std::vector<double> dga(static_cast<size_t>(net.out_dim()), 0.0);
    ga[static_cast<size_t>(output_index)] = 1.0;
    for (size_t li = L; li-- > 0;) {
        const int nin = net.widths[li], nout = net.widths[li + 1];
        std::vector<double> gs(static_cast<size_t>(nout)), dgs(static_cast<size_t>(nout));
        for (int o = 0; o < nout; ++o) {
            double sd = detail::act_d(net.acts[li], s[li][static_cast<size_t>(o)]);
            double sdd = detail::act_dd(net.acts[li], s[li][static_cast<size_t>(o)]);
            gs[static_cast<size_t>(o)] = ga[static_cast<size_t>(o)] * sd;
            dgs[static_cast<size_t>(o)] = dga[static_cast<size_t>(o)] * sd +
                                          ga[static_cast<size_t>(o)] * sdd *
                                              ds[li][static_cast<size_t>(o)];
        }
        std::vector<double> prev(static_cast<size_t>(nin), 0.0);
        std::vector<double> dprev(static_cast<size_t>(nin), 0.0);
        const double* w = net.W[li].data();
        for (int o = 0; o < nout; ++o) {
            const double* wr = w + static_cast<size_t>(o) * static_cast<size_t>(nin);
            double go = gs[static_cast<size_t>(o)], dgo = dgs[static_cast<size_t>(o)];
            for (int i = 0; i < nin; ++i) {
                prev[static_cast<size_t>(i)] += go * wr[i];
                dprev[static_cast<size_t>(i)] += dgo * wr[i];
            }
        }
        ga = std::move(prev);
        dga = std::move(dprev);
    }
    if (!grad_out.empty()) std::copy(ga.begin(), ga.end(), grad_out.begin());
    if (!hv_out.empty()) std::copy(dga.begin(), dga.end(), hv_out.begin());
}

/// Full input Hessian of output k (in x in, symmetrized).
inline std::vector<double> input_hessian(const Mlp& net, std::span<const double> x,
                                         int output_index) {
    const auto in = static_cast<size_t>(net.in_dim());
    std::vector<double> H(in * in, 0.0);
    std::vector<double> v(in, 0.0), grad(in), col(in);
    for (size_t i = 0; i < in; ++i) {
        v[i] = 1.0;
        hvp(net, x, output_index, v, grad, col);
        v[i] = 0.0;
        for (size_t r = 0; r < in; ++r) H[r * in + i] = col[r];
    }
    for (size_t r = 0; r < in; ++r)
        for (size_t c = r + 1; c < in; ++c) {
            double m = 0.5 * (H[r * in + c] + H[c * in + r]);
            H[r * in + c] = m;
            H[c * in + r] = m;
        }
    return H;
}

/// Tr(A * H_k) per output k, H_k the exact input Hessian. A must be
/// symmetric (checked to 1e-10).
inline std::vector<double> weighted_hessian_trace(const Mlp& net,
                                                  std::span<const double> x,
                                                  std::span<const double> A) {
    const auto in = static_cast<size_t>(net.in_dim());
    if (A.size() != in * in)
        throw std::domain_error("weighted_hessian_trace: A must be in x in");
    for (size_t r = 0; r < in; ++r)
        for (size_t c = 0; c < in; ++c)
            if (std::abs(A[r * in + c] - A[c * in + r]) > 1e-10)
                throw std::domain_error("weighted_hessian_trace: A must be symmetric");
    std::vector<double> out(static_cast<size_t>(net.out_dim()), 0.0);
    for (int k = 0; k < net.out_dim(); ++k) {
        auto H = input_hessian(net, x, k);
        double tr = 0.0;
        for (size_t r = 0; r < in; ++r)
            for (size_t c = 0; c < in; ++c) tr += A[r * in + c] * H[c * in + r];
        out[static_cast<size_t>(k)] = tr;
    }
    return out;
}

}  // namespace arbfree
