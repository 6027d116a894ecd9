// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "arbfree/util.hpp"

namespace arbfree {

/// Canonical maturity grid. Accruals are the year-fraction gaps between
/// consecutive payment dates (first gap measured from spot).
struct TenorGrid {
    std::vector<double> tenors;
    std::vector<double> accruals;
    std::vector<std::string> labels;

    TenorGrid() = default;
    TenorGrid(std::vector<double> taus, std::vector<std::string> labs)
        : tenors(std::move(taus)), labels(std::move(labs)) {
        accruals.resize(tenors.size());
        double prev = 0.0;
        for (size_t i = 0; i < tenors.size(); ++i) {
            accruals[i] = tenors[i] - prev;
            prev = tenors[i];
        }
        validate();
    }

    /// The 12-tenor OIS quote grid: 1M..30Y.
    static TenorGrid standard12() {
        return TenorGrid(
            {1.0 / 12, 2.0 / 12, 3.0 / 12, 6.0 / 12, 1, 2, 5, 7, 10, 15, 20, 30},
            {"1M", "2M", "3M", "6M", "1Y", "2Y", "5Y", "7Y", "10Y", "15Y", "20Y", "30Y"});
    }

    size_t size() const { return tenors.size(); }

    int index_of(std::string_view label) const {
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == label) return static_cast<int>(i);
        return -1;
    }

    void validate() const {
        if (tenors.empty()) throw ConfigError("TenorGrid: empty");
        if (labels.size() != tenors.size())
            throw ConfigError("TenorGrid: label/tenor size mismatch");
        double prev = 0.0;
        for (size_t i = 0; i < tenors.size(); ++i) {
            if (!(tenors[i] > prev))
                throw ConfigError("TenorGrid: tenors must be strictly increasing and > 0");
            if (!(accruals[i] > 0) ||
                std::abs(accruals[i] - (tenors[i] - prev)) > 1e-12)
                throw ConfigError("TenorGrid: accruals inconsistent with tenor gaps");
            prev = tenors[i];
        }
    }
};

}  // namespace arbfree
