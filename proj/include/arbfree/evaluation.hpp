// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "arbfree/benchmarks.hpp"
#include "arbfree/dynamics.hpp"
#include "arbfree/manifold.hpp"
#include "arbfree/panel.hpp"

namespace arbfree {

/// Predicted quotes aligned with a DensePanel: one row-major matrix per
/// currency, same shape as panel.rates.
using PredPanel = std::vector<std::vector<double>>;

enum class RmseAxis { Daily, Tenor, Currency };

struct LabeledSeries {
    std::vector<std::string> labels;
    std::vector<double> values;
};

namespace detail {
inline void check_aligned(const DensePanel& truth, const PredPanel& pred) {
    if (pred.size() != truth.n_currencies())
        throw std::invalid_argument("rmse: prediction/currency count mismatch");
    for (size_t c = 0; c < pred.size(); ++c)
        if (pred[c].size() != truth.rates[c].size())
            throw std::invalid_argument("rmse: prediction shape mismatch");
}
}  // namespace detail

/// Root-mean-square error across the complementary axes, in basis points.
inline LabeledSeries rmse(const DensePanel& truth, const PredPanel& pred, RmseAxis axis) {
    detail::check_aligned(truth, pred);
    const size_t nt = truth.grid.size();
    LabeledSeries out;
    if (axis == RmseAxis::Daily) {
        std::map<std::string, std::pair<double, size_t>> acc;
        for (size_t c = 0; c < truth.n_currencies(); ++c)
            for (size_t r = 0; r < truth.rows(c); ++r) {
                auto& slot = acc[truth.dates[c][r]];
                for (size_t k = 0; k < nt; ++k) {
                    double e = pred[c][r * nt + k] - truth.rates[c][r * nt + k];
                    slot.first += e * e;
                    slot.second += 1;
                }
            }
        for (const auto& [date, s] : acc) {
            out.labels.push_back(date);
            out.values.push_back(std::sqrt(s.first / static_cast<double>(s.second)) * 1e4);
        }
    } else if (axis == RmseAxis::Tenor) {
        std::vector<double> sq(nt, 0.0);
        size_t rows = 0;
        for (size_t c = 0; c < truth.n_currencies(); ++c) {
            rows += truth.rows(c);
            for (size_t r = 0; r < truth.rows(c); ++r)
                for (size_t k = 0; k < nt; ++k) {
                    double e = pred[c][r * nt + k] - truth.rates[c][r * nt + k];
                    sq[k] += e * e;
                }
        }
        for (size_t k = 0; k < nt; ++k) {
            out.labels.push_back(truth.grid.labels[k]);
            out.values.push_back(std::sqrt(sq[k] / static_cast<double>(rows)) * 1e4);
        }
    } else {
        for (size_t c = 0; c < truth.n_currencies(); ++c) {
            double sq = 0.0;
            size_t n = truth.rows(c) * nt;
            for (size_t i = 0; i < n; ++i) {
                double e = pred[c][i] - truth.rates[c][i];
                sq += e * e;
            }
            out.labels.push_back(truth.currencies[c]);
            out.values.push_back(std::sqrt(sq / static_cast<double>(n)) * 1e4);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ablation table
// ---------------------------------------------------------------------------

struct AblationTable {
    std::vector<std::string> model_names;                  // columns
    std::vector<std::string> row_labels;                   // tenors, mean, currencies, mean
    std::vector<std::vector<double>> cells;                // [row][column], bps

    std::string to_csv() const {
        std::string s = "row";
        for (const auto& n : model_names) s += "," + n;
        s += "\n";
        char buf[64];
        for (size_t r = 0; r < row_labels.size(); ++r) {
            s += row_labels[r];
            for (double v : cells[r]) {
                std::snprintf(buf, sizeof buf, ",%.6f", v);
                s += buf;
            }
            s += "\n";
        }
        return s;
    }

    std::string to_text() const {
        size_t w = 18;
        std::string s(w, ' ');
        char buf[64];
        for (const auto& n : model_names) {
            std::snprintf(buf, sizeof buf, "%14s", n.c_str());
            s += buf;
        }
        s += "\n";
        for (size_t r = 0; r < row_labels.size(); ++r) {
            std::snprintf(buf, sizeof buf, "%-18s", row_labels[r].c_str());
            s += buf;
            for (double v : cells[r]) {
                std::snprintf(buf, sizeof buf, "%14.2f", v);
                s += buf;
            }
            s += "\n";
        }
        return s;
    }

    double cell(std::string_view row, std::string_view model) const {
        for (size_t r = 0; r < row_labels.size(); ++r)
            if (row_labels[r] == row)
                for (size_t c = 0; c < model_names.size(); ++c)
                    if (model_names[c] == model) return cells[r][c];
        throw std::out_of_range("ablation table: unknown row or model");
    }
};

/// Per-tenor and per-currency RMSE rows for each model, plus the two grand
/// means over the per-label entries.
inline AblationTable ablation_table(const std::vector<std::string>& names,
                                    const std::vector<PredPanel>& preds,
                                    const DensePanel& truth) {
    if (names.size() != preds.size())
        throw std::invalid_argument("ablation_table: names/preds mismatch");
    AblationTable t;
    t.model_names = names;
    const size_t nt = truth.grid.size();
    std::vector<LabeledSeries> tenor_series, ccy_series;
    for (const auto& p : preds) {
        tenor_series.push_back(rmse(truth, p, RmseAxis::Tenor));
        ccy_series.push_back(rmse(truth, p, RmseAxis::Currency));
    }
    for (size_t k = 0; k < nt; ++k) {
        t.row_labels.push_back(truth.grid.labels[k]);
        std::vector<double> row;
        for (const auto& s : tenor_series) row.push_back(s.values[k]);
        t.cells.push_back(std::move(row));
    }
    {
        t.row_labels.push_back("Mean (All Tenors)");
        std::vector<double> row;
        for (const auto& s : tenor_series) {
            double acc = 0.0;
            for (double v : s.values) acc += v;
            row.push_back(acc / static_cast<double>(s.values.size()));
        }
        t.cells.push_back(std::move(row));
    }
    for (size_t c = 0; c < truth.n_currencies(); ++c) {
        t.row_labels.push_back(truth.currencies[c]);
        std::vector<double> row;
        for (const auto& s : ccy_series) row.push_back(s.values[c]);
        t.cells.push_back(std::move(row));
    }
    {
        t.row_labels.push_back("Mean (All Currencies)");
        std::vector<double> row;
        for (const auto& s : ccy_series) {
            double acc = 0.0;
            for (double v : s.values) acc += v;
            row.push_back(acc / static_cast<double>(s.values.size()));
        }
        t.cells.push_back(std::move(row));
    }
    return t;
}

/// Posterior-mean reconstruction of a panel through a Stage A model.
inline PredPanel reconstruct_panel(const ManifoldModel& m, const DensePanel& panel) {
    auto paths = encode_panel(m, panel);
    PredPanel pred(panel.n_currencies());
    const int d = m.latent_dim();
    for (size_t c = 0; c < panel.n_currencies(); ++c) {
        const auto& p = paths[c];
        pred[c].reserve(panel.rates[c].size());
        for (size_t r = 0; r < p.dates.size(); ++r) {
            std::span<const double> z(p.z.data() + r * static_cast<size_t>(d),
                                      static_cast<size_t>(d));
            auto swaps = reprice_swaps(m, z, p.ccy, p.level_scaled[r]);
            pred[c].insert(pred[c].end(), swaps.begin(), swaps.end());
        }
    }
    return pred;
}

// ---------------------------------------------------------------------------
// PDE violation profile
// ---------------------------------------------------------------------------

/// RMS of the normalized residual |R| / sqrt(||grad_z D^T Sigma||^2 + eps)
/// per tenor across the states of the given latent paths.
inline LabeledSeries pde_violation_profile(const DynamicsModel& model,
                                           std::span<const LatentPath> paths,
                                           const TenorGrid& grid) {
    const int d = model.dim();
    LabeledSeries out;
    out.labels = grid.labels;
    out.values.assign(grid.size(), 0.0);
    size_t states = 0;
    for (const auto& p : paths) {
        for (size_t r = 0; r < p.dates.size(); ++r) {
            std::span<const double> z(p.z.data() + r * static_cast<size_t>(d),
                                      static_cast<size_t>(d));
            DecoderBondMap map(*model.manifold, p.ccy, p.level_scaled[r]);
            auto fields = eval_fields(model, z, p.ccy);
            auto mu_q = fields.mu_q();
            auto cov = fields.covariance();
            double r_short = map.short_rate(z);
            for (size_t k = 0; k < grid.size(); ++k) {
                auto bp = map.eval(z, grid.tenors[k]);
                double drift = 0.0, trace = 0.0, norm2 = 0.0;
                for (int i = 0; i < d; ++i) {
                    drift += bp.grad_z[static_cast<size_t>(i)] * mu_q[static_cast<size_t>(i)];
                    double vi = 0.0;
                    for (int j = 0; j < d; ++j) {
                        trace += cov[static_cast<size_t>(i * d + j)] *
                                 bp.hess_z[static_cast<size_t>(j * d + i)];
                        vi += bp.grad_z[static_cast<size_t>(j)] *
                              fields.sigma[static_cast<size_t>(j * d + i)];
                    }
                    norm2 += vi * vi;
                }
                double R = -bp.dtau + drift + 0.5 * trace - r_short * bp.value;
                double nres = R / std::sqrt(norm2 + model.cfg.eps);
                out.values[k] += nres * nres;
            }
            ++states;
        }
    }
    for (auto& v : out.values) v = std::sqrt(v / static_cast<double>(states));
    return out;
}

// ---------------------------------------------------------------------------
// Forward stress test
// ---------------------------------------------------------------------------

/// Swap-path simulator interface shared by the proposed model and every
/// benchmark so the harness treats them interchangeably.
class SwapPathSimulator {
public:
    virtual ~SwapPathSimulator() = default;
    virtual std::string name() const = 0;
    /// [path][day 0..horizon][tenor] swap quotes.
    virtual std::vector<double> simulate(size_t ccy, size_t row, int horizon, int n_paths,
                                         uint64_t seed) const = 0;
};

/// Stage B latent simulation decoded through the frozen Stage A model; the
/// level is held at its last observed value.
class DynamicsSimulator final : public SwapPathSimulator {
public:
    DynamicsSimulator(std::string name, const DynamicsModel& model,
                      std::span<const LatentPath> paths)
        : name_(std::move(name)), model_(&model),
          paths_(paths.begin(), paths.end()) {}

    std::string name() const override { return name_; }

    std::vector<double> simulate(size_t ccy, size_t row, int horizon, int n_paths,
                                 uint64_t seed) const override {
        const auto& p = paths_.at(ccy);
        const int d = model_->dim();
        std::span<const double> z0(p.z.data() + row * static_cast<size_t>(d),
                                   static_cast<size_t>(d));
        double level = p.level_scaled.at(row);
        auto zpaths = simulate_paths(*model_, z0, p.ccy, horizon, n_paths, Measure::P, seed);
        const auto& m = *model_->manifold;
        const size_t nt = m.grid.size();
        std::vector<double> out(static_cast<size_t>(n_paths) *
                                static_cast<size_t>(horizon + 1) * nt);
        for (int pid = 0; pid < n_paths; ++pid)
            for (int day = 0; day <= horizon; ++day) {
                std::span<const double> z(
                    zpaths.data() + (static_cast<size_t>(pid) * (static_cast<size_t>(horizon) + 1) +
                                     static_cast<size_t>(day)) *
                                        static_cast<size_t>(d),
                    static_cast<size_t>(d));
                auto swaps = reprice_swaps(m, z, p.ccy, level);
                std::copy(swaps.begin(), swaps.end(),
                          out.begin() +
                              (static_cast<size_t>(pid) * (static_cast<size_t>(horizon) + 1) +
                               static_cast<size_t>(day)) *
                                  nt);
            }
        return out;
    }

private:
    std::string name_;
    const DynamicsModel* model_;
    std::vector<LatentPath> paths_;
};

/// Classical 3-factor HJM benchmark: one global loading set from the
/// pooled training forward-rate increments (linear factors with no level
/// anchor, as in the reference comparison), initial curve bootstrapped
/// from the start row.
class HjmSimulator final : public SwapPathSimulator {
public:
    HjmSimulator(std::string name, const DensePanel& train, const DensePanel& oos,
                 double dt = 1.0 / 252.0)
        : name_(std::move(name)), oos_(&oos), dt_(dt) {
        grid_ = train.grid;
        std::vector<std::vector<double>> increments;
        for (size_t c = 0; c < train.n_currencies(); ++c) {
            std::vector<std::vector<double>> fwds;
            for (size_t r = 0; r < train.rows(c); ++r) {
                std::vector<double> quotes(train.row(c, r), train.row(c, r) + grid_.size());
                fwds.push_back(forward_curve_nodes(bootstrap_discounts(quotes, grid_)));
            }
            for (size_t t = 0; t + 1 < fwds.size(); ++t) {
                std::vector<double> d(grid_.size());
                for (size_t j = 0; j < d.size(); ++j) d[j] = fwds[t + 1][j] - fwds[t][j];
                increments.push_back(std::move(d));
            }
        }
        loadings_ = hjm_loadings_from_increments(increments, grid_.tenors, 3, dt_);
    }

    std::string name() const override { return name_; }

    std::vector<double> simulate(size_t ccy, size_t row, int horizon, int n_paths,
                                 uint64_t seed) const override {
        std::vector<double> quotes(oos_->row(ccy, row), oos_->row(ccy, row) + grid_.size());
        auto f0 = forward_curve_nodes(bootstrap_discounts(quotes, grid_));
        auto fpaths = hjm3_simulate(f0, grid_.tenors, loadings_, horizon, n_paths,
                                    seed, dt_);
        const size_t nt = grid_.size();
        std::vector<double> out(fpaths.size());
        for (int pid = 0; pid < n_paths; ++pid)
            for (int day = 0; day <= horizon; ++day) {
                const double* f = fpaths.data() +
                                  (static_cast<size_t>(pid) * (static_cast<size_t>(horizon) + 1) +
                                   static_cast<size_t>(day)) *
                                      nt;
                auto swaps = swaps_from_forward_nodes(std::span<const double>(f, nt), grid_);
                std::copy(swaps.begin(), swaps.end(),
                          out.begin() +
                              (static_cast<size_t>(pid) * (static_cast<size_t>(horizon) + 1) +
                               static_cast<size_t>(day)) *
                                  nt);
            }
        return out;
    }

private:
    std::string name_;
    const DensePanel* oos_;
    double dt_;
    TenorGrid grid_;
    std::vector<VolFn1> loadings_;
};

/// PCA+VAR benchmark: score-space VAR draws decoded back to swap space.
class PcaVarSimulator final : public SwapPathSimulator {
public:
    PcaVarSimulator(std::string name, const DensePanel& train, const DensePanel& oos, int k)
        : name_(std::move(name)), oos_(&oos), baseline_(fit_pca_var(train, k)) {}

    std::string name() const override { return name_; }

    std::vector<double> simulate(size_t ccy, size_t row, int horizon, int n_paths,
                                 uint64_t seed) const override {
        const auto& grid = oos_->grid;
        const size_t nt = grid.size();
        auto recs = decompose(*oos_);
        // locate the record for (ccy,row)
        size_t idx = 0;
        for (size_t c = 0; c < ccy; ++c) idx += oos_->rows(c);
        idx += row;
        auto x = model_input(recs[idx], baseline_.scaler);
        auto s0 = baseline_.project(x);
        const int k = baseline_.n_components();

        std::vector<double> out(static_cast<size_t>(n_paths) *
                                static_cast<size_t>(horizon + 1) * nt);
        uint64_t base = derive_seed(seed, "pcavar/simulate");
        // innovation Cholesky
        std::vector<double> L = baseline_.var.cov;
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j <= i; ++j) {
                double acc = baseline_.var.cov[static_cast<size_t>(i * k + j)];
                for (int t = 0; t < j; ++t)
                    acc -= L[static_cast<size_t>(i * k + t)] * L[static_cast<size_t>(j * k + t)];
                if (i == j)
                    L[static_cast<size_t>(i * k + i)] = std::sqrt(std::max(acc, 0.0));
                else
                    L[static_cast<size_t>(i * k + j)] =
                        L[static_cast<size_t>(j * k + j)] > 0.0
                            ? acc / L[static_cast<size_t>(j * k + j)]
                            : 0.0;
            }
            for (int j = i + 1; j < k; ++j) L[static_cast<size_t>(i * k + j)] = 0.0;
        }
        std::vector<double> s(static_cast<size_t>(k)), xi(static_cast<size_t>(k)),
            nxt(static_cast<size_t>(k));
        for (int pid = 0; pid < n_paths; ++pid) {
            Rng rng(path_seed(base, static_cast<uint64_t>(pid)));
            s = s0;
            auto swaps = baseline_.decode_swaps(s);
            std::copy(swaps.begin(), swaps.end(),
                      out.begin() + static_cast<size_t>(pid) * (static_cast<size_t>(horizon) + 1) * nt);
            for (int day = 1; day <= horizon; ++day) {
                rng.fill_normal(xi);
                for (int i = 0; i < k; ++i) {
                    double acc = baseline_.var.alpha[static_cast<size_t>(i)];
                    for (int j = 0; j < k; ++j) {
                        acc += baseline_.var.phi[static_cast<size_t>(i * k + j)] * s[static_cast<size_t>(j)];
                        acc += L[static_cast<size_t>(i * k + j)] * xi[static_cast<size_t>(j)];
                    }
                    nxt[static_cast<size_t>(i)] = acc;
                }
                s = nxt;
                swaps = baseline_.decode_swaps(s);
                std::copy(swaps.begin(), swaps.end(),
                          out.begin() + (static_cast<size_t>(pid) * (static_cast<size_t>(horizon) + 1) +
                                         static_cast<size_t>(day)) *
                                            nt);
            }
        }
        return out;
    }

private:
    std::string name_;
    const DensePanel* oos_;
    PcaVarBaseline baseline_;
};

struct StressResult {
    std::string model;
    std::string currency;
    std::string start_date;
    double terminal_rmse_bps = 0.0;
    double breach_fraction = 0.0;          // share of path-days below the floor
    std::vector<double> mean_path;         // [day][tenor]
    int horizon = 0;
};

/// 30-day simulations from each start row; terminal RMSE against the
/// realized panel and zero-lower-bound breach accounting.
inline std::vector<StressResult> forward_stress_test(
    const std::vector<const SwapPathSimulator*>& models, const DensePanel& oos,
    const std::vector<std::pair<size_t, size_t>>& starts,  // (ccy, row)
    int horizon, int n_paths, uint64_t seed, double floor = 0.0) {
    const size_t nt = oos.grid.size();
    std::vector<StressResult> results;
    for (const auto* model : models) {
        for (auto [ccy, row] : starts) {
            if (row + static_cast<size_t>(horizon) >= oos.rows(ccy))
                throw std::invalid_argument("forward_stress_test: horizon exceeds panel");
            auto paths = model->simulate(ccy, row, horizon, n_paths,
                                         derive_seed(seed, model->name()));
            StressResult res;
            res.model = model->name();
            res.currency = oos.currencies[ccy];
            res.start_date = oos.dates[ccy][row];
            res.horizon = horizon;
            res.mean_path.assign(static_cast<size_t>(horizon + 1) * nt, 0.0);
            size_t breach = 0, total = 0;
            for (int pid = 0; pid < n_paths; ++pid) {
                for (int day = 0; day <= horizon; ++day) {
                    const double* sw =
                        paths.data() + (static_cast<size_t>(pid) * (static_cast<size_t>(horizon) + 1) +
                                        static_cast<size_t>(day)) *
                                           nt;
                    bool below = false;
                    for (size_t k = 0; k < nt; ++k) {
                        res.mean_path[static_cast<size_t>(day) * nt + k] += sw[k];
                        if (sw[k] < floor) below = true;
                    }
                    if (day > 0) {
                        breach += below ? 1 : 0;
                        ++total;
                    }
                }
            }
            for (auto& v : res.mean_path) v /= static_cast<double>(n_paths);
            res.breach_fraction = static_cast<double>(breach) / static_cast<double>(total);
            const double* realized = oos.row(ccy, row + static_cast<size_t>(horizon));
            double sq = 0.0;
            for (size_t k = 0; k < nt; ++k) {
                double e = res.mean_path[static_cast<size_t>(horizon) * nt + k] - realized[k];
                sq += e * e;
            }
            res.terminal_rmse_bps = std::sqrt(sq / static_cast<double>(nt)) * 1e4;
            results.push_back(std::move(res));
        }
    }
    return results;
}

// ---------------------------------------------------------------------------
// Exports and the report bundle
// ---------------------------------------------------------------------------

inline std::string latents_csv(const ManifoldModel& m, const DensePanel& panel) {
    auto paths = encode_panel(m, panel);
    const int d = m.latent_dim();
    std::string s = "date,currency";
    for (int i = 1; i <= d; ++i) s += ",z" + std::to_string(i);
    s += ",level\n";
    char buf[64];
    for (const auto& p : paths) {
        for (size_t r = 0; r < p.dates.size(); ++r) {
            s += p.dates[r] + "," + panel.currencies[static_cast<size_t>(p.ccy)];
            for (int i = 0; i < d; ++i) {
                std::snprintf(buf, sizeof buf, ",%.17g",
                              p.z[r * static_cast<size_t>(d) + static_cast<size_t>(i)]);
                s += buf;
            }
            double level = m.level_decimal(p.level_scaled[r]);
            std::snprintf(buf, sizeof buf, ",%.17g", level);
            s += buf;
            s += "\n";
        }
    }
    return s;
}

inline std::string risk_premium_csv(const std::vector<RiskPremiumRow>& rows) {
    if (rows.empty()) return "date,currency\n";
    std::string s = "date,currency";
    for (size_t i = 1; i <= rows[0].lambda.size(); ++i) s += ",lambda" + std::to_string(i);
    s += "\n";
    char buf[64];
    for (const auto& r : rows) {
        s += r.date + "," + r.currency;
        for (double v : r.lambda) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            s += buf;
        }
        s += "\n";
    }
    return s;
}

inline std::string series_csv(const LabeledSeries& series, const std::string& label_name,
                              const std::string& value_name) {
    std::string s = label_name + "," + value_name + "\n";
    char buf[64];
    for (size_t i = 0; i < series.labels.size(); ++i) {
        std::snprintf(buf, sizeof buf, ",%.17g\n", series.values[i]);
        s += series.labels[i] + buf;
    }
    return s;
}

inline std::string stress_csv(const std::vector<StressResult>& results,
                              const TenorGrid& grid) {
    std::string s = "model,currency,start_date,day";
    for (const auto& lab : grid.labels) s += "," + lab;
    s += ",terminal_rmse_bps,breach_fraction\n";
    char buf[64];
    for (const auto& r : results) {
        for (int day = 0; day <= r.horizon; ++day) {
            s += r.model + "," + r.currency + "," + r.start_date + "," + std::to_string(day);
            for (size_t k = 0; k < grid.size(); ++k) {
                std::snprintf(buf, sizeof buf, ",%.17g",
                              r.mean_path[static_cast<size_t>(day) * grid.size() + k]);
                s += buf;
            }
            if (day == r.horizon) {
                std::snprintf(buf, sizeof buf, ",%.17g", r.terminal_rmse_bps);
                s += buf;
                std::snprintf(buf, sizeof buf, ",%.17g", r.breach_fraction);
                s += buf;
            } else {
                s += ",,";
            }
            s += "\n";
        }
    }
    return s;
}

/// Writes one file of the report bundle and records its content digest.
class ReportBundle {
public:
    explicit ReportBundle(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    void write(const std::string& name, const std::string& content) {
        auto path = std::filesystem::path(dir_) / name;
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("report: cannot open " + path.string());
        os << content;
        digests_[name] = to_hex(fnv1a64(content));
    }

    /// manifest.json with seeds, config hashes and per-file content digests.
    void finalize(uint64_t seed, const std::string& config_hash) const {
        json j;
        j["seed"] = seed;
        j["config_hash"] = config_hash;
        json files = json::object();
        for (const auto& [name, digest] : digests_) files[name] = digest;
        j["digests"] = files;
        auto path = std::filesystem::path(dir_) / "manifest.json";
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("report: cannot open " + path.string());
        os << j.dump(2) << "\n";
    }

    const std::map<std::string, std::string>& digests() const { return digests_; }

private:
    std::string dir_;
    std::map<std::string, std::string> digests_;
};

/// Chronological per-currency split: the final `oos_fraction` of rows is
/// out-of-sample.
inline std::pair<DensePanel, DensePanel> split_panel(const DensePanel& panel,
                                                     double oos_fraction) {
    if (!(oos_fraction >= 0.0) || oos_fraction >= 1.0)
        throw ConfigError("split_panel: oos_fraction in [0,1)");
    DensePanel train, oos;
    train.grid = panel.grid;
    oos.grid = panel.grid;
    train.currencies = panel.currencies;
    oos.currencies = panel.currencies;
    const size_t nt = panel.grid.size();
    for (size_t c = 0; c < panel.n_currencies(); ++c) {
        size_t rows = panel.rows(c);
        auto cut = static_cast<size_t>(std::ceil(static_cast<double>(rows) * (1.0 - oos_fraction)));
        cut = std::min(rows, std::max<size_t>(1, cut));
        train.dates.push_back(std::vector<std::string>(panel.dates[c].begin(),
                                                       panel.dates[c].begin() + static_cast<long>(cut)));
        train.rates.push_back(std::vector<double>(panel.rates[c].begin(),
                                                  panel.rates[c].begin() + static_cast<long>(cut * nt)));
        oos.dates.push_back(std::vector<std::string>(panel.dates[c].begin() + static_cast<long>(cut),
                                                     panel.dates[c].end()));
        oos.rates.push_back(std::vector<double>(panel.rates[c].begin() + static_cast<long>(cut * nt),
                                                panel.rates[c].end()));
    }
    return {std::move(train), std::move(oos)};
}

}  // namespace arbfree
