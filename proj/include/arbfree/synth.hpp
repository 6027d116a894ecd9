// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "arbfree/curve_math.hpp"
#include "arbfree/dates.hpp"
#include "arbfree/jsonutil.hpp"
#include "arbfree/panel.hpp"
#include "arbfree/rng.hpp"

namespace arbfree {

/// One synthetic market: NSS factor AR(1) under the physical measure with
/// optional secular ramp, heavy-tailed shocks, observation noise, a pinned
/// (YCC-like) level regime and an early sparse-history block.
struct CurrencySpec {
    std::string name;
    NssParams base;
    std::array<double, 4> phi{0.999, 0.999, 0.995, 0.995};
    std::array<double, 4> vol{0.0, 0.0, 0.0, 0.0};
    std::array<double, 4> ramp{0.0, 0.0, 0.0, 0.0};   // mean drift up to break_frac
    std::array<double, 4> ramp2{0.0, 0.0, 0.0, 0.0};  // mean drift after break_frac
    double break_frac = 1.0;                          // regime break point in (0,1]
    int shock_nu = 0;                                 // 0 = Gaussian innovations
    std::string obs_dist = "none";                   // none | gaussian | student_t
    double obs_scale = 0.0;
    int obs_nu = 3;
    int missing_head_days = 0;
    double missing_prob = 0.0;
    bool pinned = false;
    double pin_vol_scale = 0.05;  // shrink applied to level-factor vols when pinned
    bool allow_nonstationary = false;

    void validate() const {
        base.validate();
        if (name.empty()) throw ConfigError("currency spec: empty name");
        for (double p : phi)
            if (std::abs(p) >= 1.0 && !allow_nonstationary)
                throw ConfigError("currency " + name + ": |phi| >= 1 requires allow_nonstationary");
        for (double v : vol)
            if (v < 0.0) throw ConfigError("currency " + name + ": negative vol");
        if (shock_nu < 0 || (shock_nu > 0 && shock_nu < 1))
            throw ConfigError("currency " + name + ": bad shock_nu");
        if (obs_dist != "none" && obs_dist != "gaussian" && obs_dist != "student_t")
            throw ConfigError("currency " + name + ": bad obs_dist");
        if (obs_scale < 0.0) throw ConfigError("currency " + name + ": negative obs_scale");
        if (obs_dist == "student_t" && obs_nu < 1)
            throw ConfigError("currency " + name + ": obs_nu >= 1 required");
        if (missing_prob < 0.0 || missing_prob > 1.0)
            throw ConfigError("currency " + name + ": missing_prob in [0,1]");
        if (missing_head_days < 0)
            throw ConfigError("currency " + name + ": missing_head_days >= 0");
        if (!(break_frac > 0.0) || break_frac > 1.0)
            throw ConfigError("currency " + name + ": break_frac in (0,1]");
    }

    /// Two-segment mean path for the AR factors.
    std::array<double, 4> mean_at(double frac) const {
        std::array<double, 4> mean;
        for (size_t k = 0; k < 4; ++k) {
            double base_k = k == 0 ? base.beta0
                           : k == 1 ? base.beta1
                           : k == 2 ? base.beta2
                                    : base.beta3;
            if (frac <= break_frac) {
                mean[k] = base_k + ramp[k] * (frac / break_frac);
            } else {
                mean[k] = base_k + ramp[k] +
                          ramp2[k] * ((frac - break_frac) / (1.0 - break_frac));
            }
        }
        return mean;
    }
};

struct SynthSpec {
    std::string start_date = "2016-01-04";
    int days = 500;
    std::vector<CurrencySpec> currencies;

    void validate() const {
        if (days < 1) throw ConfigError("generator: days >= 1 required");
        parse_iso_date(start_date);
        if (currencies.empty()) throw ConfigError("generator: no currencies");
        for (const auto& c : currencies) c.validate();
        for (size_t i = 0; i < currencies.size(); ++i)
            for (size_t j = i + 1; j < currencies.size(); ++j)
                if (currencies[i].name == currencies[j].name)
                    throw ConfigError("generator: duplicate currency " + currencies[i].name);
    }

    static SynthSpec from_json(const json& j) {
        check_keys(j, {"start_date", "days", "currencies"}, "generator");
        SynthSpec s;
        s.start_date = get_or<std::string>(j, "start_date", s.start_date);
        s.days = get_or<int>(j, "days", s.days);
        if (!j.contains("currencies")) throw ConfigError("generator: currencies required");
        for (const auto& cj : j.at("currencies")) {
            check_keys(cj,
                       {"name", "base", "phi", "vol", "ramp", "ramp2", "break_frac",
                        "shock_nu", "obs_dist", "obs_scale", "obs_nu", "missing_head_days",
                        "missing_prob", "pinned", "pin_vol_scale", "allow_nonstationary"},
                       "generator currency");
            CurrencySpec c;
            c.name = cj.at("name").get<std::string>();
            const auto& bj = cj.at("base");
            check_keys(bj, {"beta0", "beta1", "beta2", "beta3", "lambda1", "lambda2"},
                       "generator base");
            c.base.beta0 = bj.at("beta0").get<double>();
            c.base.beta1 = bj.at("beta1").get<double>();
            c.base.beta2 = get_or<double>(bj, "beta2", 0.0);
            c.base.beta3 = get_or<double>(bj, "beta3", 0.0);
            c.base.lambda1 = bj.at("lambda1").get<double>();
            c.base.lambda2 = bj.at("lambda2").get<double>();
            auto arr4 = [&](const char* key, std::array<double, 4> dflt) {
                if (!cj.contains(key)) return dflt;
                auto v = cj.at(key).get<std::vector<double>>();
                if (v.size() != 4)
                    throw ConfigError(std::string("generator: ") + key + " needs 4 entries");
                return std::array<double, 4>{v[0], v[1], v[2], v[3]};
            };
            c.phi = arr4("phi", c.phi);
            c.vol = arr4("vol", c.vol);
            c.ramp = arr4("ramp", c.ramp);
            c.ramp2 = arr4("ramp2", c.ramp2);
            c.break_frac = get_or<double>(cj, "break_frac", 1.0);
            c.shock_nu = get_or<int>(cj, "shock_nu", 0);
            c.obs_dist = get_or<std::string>(cj, "obs_dist", "none");
            c.obs_scale = get_or<double>(cj, "obs_scale", 0.0);
            c.obs_nu = get_or<int>(cj, "obs_nu", 3);
            c.missing_head_days = get_or<int>(cj, "missing_head_days", 0);
            c.missing_prob = get_or<double>(cj, "missing_prob", 0.0);
            c.pinned = get_or<bool>(cj, "pinned", false);
            c.pin_vol_scale = get_or<double>(cj, "pin_vol_scale", 0.05);
            c.allow_nonstationary = get_or<bool>(cj, "allow_nonstationary", false);
            s.currencies.push_back(std::move(c));
        }
        s.validate();
        return s;
    }
};

/// Generating factor paths, written alongside the panel so recovery tests
/// have an exact target.
struct GroundTruth {
    std::vector<std::string> dates;
    std::vector<std::string> currencies;
    std::vector<double> factors;  // [date][currency][beta0..3, lambda1, lambda2]

    void save_csv(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("ground truth: cannot open " + path);
        os << "date,currency,beta0,beta1,beta2,beta3,lambda1,lambda2\n";
        for (size_t d = 0; d < dates.size(); ++d)
            for (size_t c = 0; c < currencies.size(); ++c) {
                os << dates[d] << "," << currencies[c];
                for (size_t k = 0; k < 6; ++k)
                    os << "," << detail::format_rate(factors[(d * currencies.size() + c) * 6 + k]);
                os << "\n";
            }
    }
};

struct SynthResult {
    CurvePanel panel;
    GroundTruth truth;
};

inline SynthResult synth_panel(const SynthSpec& spec, uint64_t seed) {
    spec.validate();
    auto dates = business_days(spec.start_date, spec.days);

    std::vector<std::string> names;
    for (const auto& c : spec.currencies) names.push_back(c.name);
    std::sort(names.begin(), names.end());

    CurvePanel panel = CurvePanel::empty(TenorGrid::standard12(), dates, names);
    GroundTruth truth;
    truth.dates = dates;
    truth.currencies = names;
    truth.factors.assign(dates.size() * names.size() * 6, 0.0);

    for (const auto& cs : spec.currencies) {
        auto ci = static_cast<size_t>(panel.find_currency(cs.name));
        Rng rng(derive_seed(seed, "synth/" + cs.name));
        std::array<double, 4> vols = cs.vol;
        if (cs.pinned) {
            vols[0] *= cs.pin_vol_scale;
            vols[1] *= cs.pin_vol_scale;
        }
        std::array<double, 4> f{cs.base.beta0, cs.base.beta1, cs.base.beta2, cs.base.beta3};
        const double denom = spec.days > 1 ? static_cast<double>(spec.days - 1) : 1.0;
        for (size_t d = 0; d < dates.size(); ++d) {
            double frac = static_cast<double>(d) / denom;
            auto mean = cs.mean_at(frac);
            if (d > 0) {
                auto mean_prev = cs.mean_at(static_cast<double>(d - 1) / denom);
                for (size_t k = 0; k < 4; ++k) {
                    double shock = cs.shock_nu > 0 ? rng.student_t(cs.shock_nu) : rng.normal();
                    f[k] = mean[k] + cs.phi[k] * (f[k] - mean_prev[k]) + vols[k] * shock;
                }
            } else {
                f = mean;
            }
            NssParams p = cs.base;
            p.beta0 = f[0];
            p.beta1 = f[1];
            p.beta2 = f[2];
            p.beta3 = f[3];
            double* tf = &truth.factors[(d * names.size() + ci) * 6];
            tf[0] = p.beta0;
            tf[1] = p.beta1;
            tf[2] = p.beta2;
            tf[3] = p.beta3;
            tf[4] = p.lambda1;
            tf[5] = p.lambda2;

            // Quote off the grid discount curve with the same log-linear
            // coupon fill the bootstrapper uses, so panels re-bootstrap to
            // the generating discounts exactly.
            auto curve = nss_discount_curve(p, panel.grid);
            auto quotes = swap_quotes(
                [&](double tau) { return curve.loglinear_discount(tau); }, panel.grid);
            for (size_t k = 0; k < panel.n_tenors(); ++k) {
                double q = quotes[k];
                if (cs.obs_dist == "gaussian")
                    q += cs.obs_scale * rng.normal();
                else if (cs.obs_dist == "student_t")
                    q += cs.obs_scale * rng.student_t(cs.obs_nu);
                bool missing = static_cast<int>(d) < cs.missing_head_days &&
                               rng.uniform() < cs.missing_prob;
                if (!missing) {
                    panel.rates[panel.idx(d, ci, k)] = q;
                    panel.mask[panel.idx(d, ci, k)] = 1;
                }
            }
        }
    }
    return {std::move(panel), std::move(truth)};
}

}  // namespace arbfree
