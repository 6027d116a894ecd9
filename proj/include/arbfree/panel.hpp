// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "arbfree/dates.hpp"
#include "arbfree/tenor_grid.hpp"
#include "arbfree/util.hpp"

namespace arbfree {

/// Dated, per-currency matrix of swap quotes on the tenor grid, with a
/// missingness mask. Masked-out slots hold NaN and must never be read as
/// numbers.
struct CurvePanel {
    TenorGrid grid;
    std::vector<std::string> dates;       // strictly increasing ISO-8601
    std::vector<std::string> currencies;  // unique
    std::vector<double> rates;            // [date][currency][tenor]
    std::vector<uint8_t> mask;            // same shape

    size_t n_dates() const { return dates.size(); }
    size_t n_currencies() const { return currencies.size(); }
    size_t n_tenors() const { return grid.size(); }

    size_t idx(size_t d, size_t c, size_t k) const {
        return (d * currencies.size() + c) * grid.size() + k;
    }
    double rate(size_t d, size_t c, size_t k) const { return rates[idx(d, c, k)]; }
    bool observed(size_t d, size_t c, size_t k) const { return mask[idx(d, c, k)] != 0; }

    int find_currency(std::string_view name) const {
        for (size_t i = 0; i < currencies.size(); ++i)
            if (currencies[i] == name) return static_cast<int>(i);
        return -1;
    }
    int find_date(std::string_view date) const {
        auto it = std::lower_bound(dates.begin(), dates.end(), date);
        if (it == dates.end() || *it != date) return -1;
        return static_cast<int>(it - dates.begin());
    }

    static CurvePanel empty(TenorGrid grid, std::vector<std::string> dates,
                            std::vector<std::string> currencies) {
        CurvePanel p;
        p.grid = std::move(grid);
        p.dates = std::move(dates);
        p.currencies = std::move(currencies);
        size_t n = p.dates.size() * p.currencies.size() * p.grid.size();
        p.rates.assign(n, std::numeric_limits<double>::quiet_NaN());
        p.mask.assign(n, 0);
        p.validate_keys();
        return p;
    }

    void validate_keys() const {
        for (size_t i = 1; i < dates.size(); ++i)
            if (!(dates[i - 1] < dates[i]))
                throw DataError("CurvePanel: dates must be strictly increasing");
        std::set<std::string> seen(currencies.begin(), currencies.end());
        if (seen.size() != currencies.size())
            throw DataError("CurvePanel: duplicate currency");
    }
};

/// Fully observed panel: one date/rate matrix per currency. Produced by
/// truncate_and_densify; has no mask because no entry can be missing.
struct DensePanel {
    TenorGrid grid;
    std::vector<std::string> currencies;
    std::vector<std::vector<std::string>> dates;  // per currency
    std::vector<std::vector<double>> rates;       // per currency, [row][tenor]

    size_t n_currencies() const { return currencies.size(); }
    size_t rows(size_t c) const { return dates[c].size(); }
    size_t total_rows() const {
        size_t n = 0;
        for (const auto& d : dates) n += d.size();
        return n;
    }
    const double* row(size_t c, size_t r) const {
        return rates[c].data() + r * grid.size();
    }
    double* row(size_t c, size_t r) { return rates[c].data() + r * grid.size(); }

    int find_currency(std::string_view name) const {
        for (size_t i = 0; i < currencies.size(); ++i)
            if (currencies[i] == name) return static_cast<int>(i);
        return -1;
    }
};

namespace detail {

inline std::string format_rate(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string expected_header(const TenorGrid& grid) {
    std::string h = "date,currency";
    for (const auto& lab : grid.labels) h += "," + lab;
    return h;
}

}  // namespace detail

/// Writes the long-form panel CSV: `date,currency,1M,...,30Y`, empty cell
/// for missing, decimal rates, rows sorted by (date, currency).
inline void save_csv(const CurvePanel& panel, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_csv: cannot open " + path);
    os << detail::expected_header(panel.grid) << "\n";
    for (size_t d = 0; d < panel.n_dates(); ++d) {
        for (size_t c = 0; c < panel.n_currencies(); ++c) {
            bool any = false;
            for (size_t k = 0; k < panel.n_tenors(); ++k)
                if (panel.observed(d, c, k)) any = true;
            if (!any) continue;
            os << panel.dates[d] << "," << panel.currencies[c];
            for (size_t k = 0; k < panel.n_tenors(); ++k) {
                os << ",";
                if (panel.observed(d, c, k)) os << detail::format_rate(panel.rate(d, c, k));
            }
            os << "\n";
        }
    }
}

inline void save_csv(const DensePanel& panel, const std::string& path) {
    // rows sorted by (date, currency) for byte-stable output
    std::vector<std::pair<std::string, std::pair<size_t, size_t>>> order;
    for (size_t c = 0; c < panel.n_currencies(); ++c)
        for (size_t r = 0; r < panel.rows(c); ++r)
            order.push_back({panel.dates[c][r] + "\x01" + panel.currencies[c], {c, r}});
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_csv: cannot open " + path);
    os << detail::expected_header(panel.grid) << "\n";
    for (const auto& [key, rc] : order) {
        auto [c, r] = rc;
        os << panel.dates[c][r] << "," << panel.currencies[c];
        const double* row = panel.row(c, r);
        for (size_t k = 0; k < panel.grid.size(); ++k)
            os << "," << detail::format_rate(row[k]);
        os << "\n";
    }
}

/// Parses the panel CSV. Unseen (date, currency) rows stay fully masked;
/// empty cells are missing; anything malformed reports its line number.
inline CurvePanel load_csv(const std::string& path,
                           const TenorGrid& grid = TenorGrid::standard12()) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("load_csv: empty file " + path);
    std::string want = detail::expected_header(grid);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != want)
        throw DataError("load_csv: line 1: bad header, expected '" + want + "'");

    struct Row {
        std::string date, ccy;
        std::vector<double> vals;
        std::vector<uint8_t> obs;
    };
    std::vector<Row> rows;
    std::set<std::string> date_set;
    std::vector<std::string> ccys;
    size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != grid.size() + 2)
            throw DataError("load_csv: line " + std::to_string(lineno) +
                            ": expected " + std::to_string(grid.size() + 2) + " cells");
        Row row;
        row.date = cells[0];
        parse_iso_date(row.date);  // validates format
        row.ccy = cells[1];
        if (row.ccy.empty())
            throw DataError("load_csv: line " + std::to_string(lineno) + ": empty currency");
        row.vals.resize(grid.size());
        row.obs.resize(grid.size());
        for (size_t k = 0; k < grid.size(); ++k) {
            const std::string& cell = cells[k + 2];
            if (cell.empty()) {
                row.vals[k] = std::numeric_limits<double>::quiet_NaN();
                row.obs[k] = 0;
                continue;
            }
            char* end = nullptr;
            double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0' || !std::isfinite(v))
                throw DataError("load_csv: line " + std::to_string(lineno) + ", column " +
                                grid.labels[k] + ": not a number: '" + cell + "'");
            row.vals[k] = v;
            row.obs[k] = 1;
        }
        date_set.insert(row.date);
        if (std::find(ccys.begin(), ccys.end(), row.ccy) == ccys.end())
            ccys.push_back(row.ccy);
        rows.push_back(std::move(row));
    }
    std::sort(ccys.begin(), ccys.end());
    CurvePanel panel = CurvePanel::empty(
        grid, std::vector<std::string>(date_set.begin(), date_set.end()), ccys);
    for (const auto& row : rows) {
        auto d = static_cast<size_t>(panel.find_date(row.date));
        auto c = static_cast<size_t>(panel.find_currency(row.ccy));
        for (size_t k = 0; k < grid.size(); ++k) {
            panel.rates[panel.idx(d, c, k)] = row.vals[k];
            panel.mask[panel.idx(d, c, k)] = row.obs[k];
        }
    }
    return panel;
}

}  // namespace arbfree
