// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "arbfree/util.hpp"

namespace arbfree {

using json = nlohmann::json;

/// Strict-config guard: any key outside the allowed set is an error, so
/// typos never silently change a run.
inline void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                       const std::string& context) {
    if (!obj.is_object()) throw ConfigError(context + ": expected a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (auto a : allowed)
            if (it.key() == a) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(context + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

inline uint64_t json_hash(const json& j) {
    // nlohmann objects serialize with sorted keys, so dump() is canonical.
    return fnv1a64(j.dump());
}

}  // namespace arbfree
