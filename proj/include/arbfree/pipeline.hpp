// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "arbfree/panel.hpp"
#include "arbfree/util.hpp"

namespace arbfree {

/// Stable-coverage truncation thresholds (window W, completeness rho0,
/// window pass fraction pi0).
struct TruncationConfig {
    int window = 60;
    double rho0 = 0.9;
    double pi0 = 0.95;

    void validate() const {
        if (window < 1) throw ConfigError("TruncationConfig: window >= 1 required");
        if (!(rho0 > 0.0 && rho0 <= 1.0) || !(pi0 > 0.0 && pi0 <= 1.0))
            throw ConfigError("TruncationConfig: thresholds must lie in (0,1]");
    }
};

/// Observed-tenor fraction for one (currency, date) row.
inline double completeness_ratio(const CurvePanel& panel, std::string_view currency,
                                 std::string_view date) {
    int c = panel.find_currency(currency);
    int d = panel.find_date(date);
    if (c < 0) throw std::out_of_range("completeness_ratio: unknown currency");
    if (d < 0) throw std::out_of_range("completeness_ratio: unknown date");
    size_t obs = 0;
    for (size_t k = 0; k < panel.n_tenors(); ++k)
        if (panel.observed(static_cast<size_t>(d), static_cast<size_t>(c), k)) ++obs;
    return static_cast<double>(obs) / static_cast<double>(panel.n_tenors());
}

namespace detail {
inline std::vector<double> completeness_series(const CurvePanel& panel, size_t c) {
    std::vector<double> rho(panel.n_dates());
    for (size_t d = 0; d < panel.n_dates(); ++d) {
        size_t obs = 0;
        for (size_t k = 0; k < panel.n_tenors(); ++k)
            if (panel.observed(d, c, k)) ++obs;
        rho[d] = static_cast<double>(obs) / static_cast<double>(panel.n_tenors());
    }
    return rho;
}
}  // namespace detail

/// Earliest date whose forward window of W rows has at least a pi0 fraction
/// of rows with completeness >= rho0. Dates with fewer than W rows left
/// cannot anchor a window.
inline std::optional<std::string> stable_start_date(const CurvePanel& panel,
                                                    std::string_view currency,
                                                    const TruncationConfig& cfg) {
    cfg.validate();
    int ci = panel.find_currency(currency);
    if (ci < 0) throw std::out_of_range("stable_start_date: unknown currency");
    auto rho = detail::completeness_series(panel, static_cast<size_t>(ci));
    const auto n = static_cast<int>(rho.size());
    const int W = cfg.window;
    if (n < W) return std::nullopt;
    // rolling count of qualifying rows
    int count = 0;
    for (int s = 0; s < W; ++s) count += rho[static_cast<size_t>(s)] >= cfg.rho0;
    for (int t = 0; t + W <= n; ++t) {
        if (static_cast<double>(count) / W >= cfg.pi0) return panel.dates[static_cast<size_t>(t)];
        if (t + W < n) {
            count -= rho[static_cast<size_t>(t)] >= cfg.rho0;
            count += rho[static_cast<size_t>(t + W)] >= cfg.rho0;
        }
    }
    return std::nullopt;
}

struct TruncationReport {
    std::vector<std::string> warnings;  // JSON lines
    std::vector<std::string> start_dates;
    std::vector<size_t> kept_rows;
    std::vector<size_t> dropped_rows;
};

/// Per currency: drop rows before the stable start, then keep only fully
/// observed rows. Currencies with no stable start are excluded with a
/// warning record.
inline DensePanel truncate_and_densify(const CurvePanel& panel,
                                       const TruncationConfig& cfg,
                                       TruncationReport* report = nullptr) {
    cfg.validate();
    DensePanel out;
    out.grid = panel.grid;
    for (size_t c = 0; c < panel.n_currencies(); ++c) {
        auto start = stable_start_date(panel, panel.currencies[c], cfg);
        if (!start) {
            if (report)
                report->warnings.push_back("{\"warning\":\"no_stable_start\",\"currency\":\"" +
                                           panel.currencies[c] + "\"}");
            continue;
        }
        auto rho = detail::completeness_series(panel, c);
        size_t d0 = static_cast<size_t>(panel.find_date(*start));
        std::vector<std::string> kept_dates;
        std::vector<double> kept_rates;
        size_t dropped = 0;
        for (size_t d = d0; d < panel.n_dates(); ++d) {
            if (rho[d] >= 1.0) {
                kept_dates.push_back(panel.dates[d]);
                for (size_t k = 0; k < panel.n_tenors(); ++k)
                    kept_rates.push_back(panel.rate(d, c, k));
            } else {
                ++dropped;
            }
        }
        if (report) {
            report->start_dates.push_back(*start);
            report->kept_rows.push_back(kept_dates.size());
            report->dropped_rows.push_back(dropped);
            if (dropped > 0)
                report->warnings.push_back(
                    "{\"warning\":\"rows_dropped\",\"currency\":\"" + panel.currencies[c] +
                    "\",\"count\":" + std::to_string(dropped) + "}");
        }
        out.currencies.push_back(panel.currencies[c]);
        out.dates.push_back(std::move(kept_dates));
        out.rates.push_back(std::move(kept_rates));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape / level decomposition
// ---------------------------------------------------------------------------

/// One curve split into its 1Y level anchor and the shape relative to it.
struct ShapeLevelRecord {
    std::string date;
    int currency = 0;
    double level = 0.0;
    std::vector<double> shape;  // one per tenor; exactly 0 at the 1Y slot
};

inline std::vector<ShapeLevelRecord> decompose(const DensePanel& panel) {
    int anchor = panel.grid.index_of("1Y");
    if (anchor < 0) throw ConfigError("decompose: grid lacks a 1Y tenor");
    std::vector<ShapeLevelRecord> out;
    out.reserve(panel.total_rows());
    for (size_t c = 0; c < panel.n_currencies(); ++c) {
        for (size_t r = 0; r < panel.rows(c); ++r) {
            const double* row = panel.row(c, r);
            ShapeLevelRecord rec;
            rec.date = panel.dates[c][r];
            rec.currency = static_cast<int>(c);
            rec.level = row[anchor];
            rec.shape.resize(panel.grid.size());
            for (size_t k = 0; k < panel.grid.size(); ++k) rec.shape[k] = row[k] - rec.level;
            out.push_back(std::move(rec));
        }
    }
    return out;
}

/// Inverse of decompose for a single record.
inline std::vector<double> recompose(const ShapeLevelRecord& rec) {
    std::vector<double> row(rec.shape.size());
    for (size_t k = 0; k < rec.shape.size(); ++k) row[k] = rec.shape[k] + rec.level;
    return row;
}

// ---------------------------------------------------------------------------
// Robust scaling
// ---------------------------------------------------------------------------

/// Median/IQR scaler. IQR uses linear interpolation between order
/// statistics; a constant column falls back to IQR = 1 so it scales to 0.
struct RobustScaler {
    std::vector<double> median;
    std::vector<double> iqr;

    size_t dim() const { return median.size(); }

    static RobustScaler fit(const std::vector<std::vector<double>>& rows) {
        if (rows.size() < 2) throw DataError("RobustScaler: need >= 2 rows to fit");
        size_t d = rows[0].size();
        RobustScaler s;
        s.median.resize(d);
        s.iqr.resize(d);
        std::vector<double> col(rows.size());
        for (size_t j = 0; j < d; ++j) {
            for (size_t i = 0; i < rows.size(); ++i) col[i] = rows[i][j];
            std::sort(col.begin(), col.end());
            s.median[j] = quantile_sorted(col, 0.5);
            double q1 = quantile_sorted(col, 0.25);
            double q3 = quantile_sorted(col, 0.75);
            double iqr = q3 - q1;
            s.iqr[j] = iqr < 1e-12 ? 1.0 : iqr;
        }
        return s;
    }

    void transform(std::span<const double> x, std::span<double> out) const {
        for (size_t j = 0; j < dim(); ++j) out[j] = (x[j] - median[j]) / iqr[j];
    }
    void inverse(std::span<const double> x, std::span<double> out) const {
        for (size_t j = 0; j < dim(); ++j) out[j] = x[j] * iqr[j] + median[j];
    }
    std::vector<double> transform(std::span<const double> x) const {
        std::vector<double> out(dim());
        transform(x, out);
        return out;
    }
    std::vector<double> inverse(std::span<const double> x) const {
        std::vector<double> out(dim());
        inverse(x, out);
        return out;
    }
};

/// Model input for one record: scaled shape (12 dims) then scaled level.
inline std::vector<double> model_input(const ShapeLevelRecord& rec,
                                       const RobustScaler& scaler) {
    std::vector<double> raw(rec.shape.size() + 1);
    std::copy(rec.shape.begin(), rec.shape.end(), raw.begin());
    raw.back() = rec.level;
    return scaler.transform(raw);
}

/// Fits the 13-dim input scaler over pooled records.
inline RobustScaler fit_input_scaler(const std::vector<ShapeLevelRecord>& records) {
    std::vector<std::vector<double>> rows;
    rows.reserve(records.size());
    for (const auto& r : records) {
        std::vector<double> row(r.shape.size() + 1);
        std::copy(r.shape.begin(), r.shape.end(), row.begin());
        row.back() = r.level;
        rows.push_back(std::move(row));
    }
    return RobustScaler::fit(rows);
}

// ---------------------------------------------------------------------------
// PCA diagnostic
// ---------------------------------------------------------------------------

struct PcaResult {
    std::vector<double> ratios;              // descending, sums to ~1
    std::vector<std::vector<double>> components;  // row k = k-th component
};

/// Eigendecomposition of the sample covariance of the input rows.
/// Component signs are fixed so the largest-magnitude entry is positive.
inline PcaResult pca_diagnostic(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 2) throw DataError("pca_diagnostic: need >= 2 rows");
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = static_cast<Eigen::Index>(rows[0].size());
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            X(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;
    Eigen::MatrixXd cov = X.transpose() * X / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd evals = es.eigenvalues();
    Eigen::MatrixXd evecs = es.eigenvectors();
    double total = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) total += std::max(0.0, evals[i]);
    if (total <= 0.0) throw DataError("pca_diagnostic: rank-0 input");

    std::vector<Eigen::Index> order(static_cast<size_t>(d));
    for (Eigen::Index i = 0; i < d; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return evals[a] > evals[b]; });

    PcaResult res;
    for (Eigen::Index rank = 0; rank < d; ++rank) {
        Eigen::Index i = order[static_cast<size_t>(rank)];
        res.ratios.push_back(std::max(0.0, evals[i]) / total);
        Eigen::VectorXd v = evecs.col(i);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        res.components.emplace_back(v.data(), v.data() + d);
    }
    return res;
}

}  // namespace arbfree
