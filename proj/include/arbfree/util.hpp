// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace arbfree {

/// Configuration/input errors that map to distinct CLI exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LineageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t fnv1a64(std::span<const double> xs, uint64_t h = kFnvOffset) {
    for (double x : xs) {
        uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        h = fnv1a64(&bits, sizeof bits, h);
    }
    return h;
}

inline std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

// --- base64 (RFC 4648, standard alphabet, '=' padding) ---

inline std::string base64_encode(std::span<const unsigned char> in) {
    static const char* tbl =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= in.size(); i += 3) {
        uint32_t v = (uint32_t(in[i]) << 16) | (uint32_t(in[i + 1]) << 8) | in[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
    }
    if (i + 1 == in.size()) {
        uint32_t v = uint32_t(in[i]) << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.append("==");
    } else if (i + 2 == in.size()) {
        uint32_t v = (uint32_t(in[i]) << 16) | (uint32_t(in[i + 1]) << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view in) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        if (c == '=') return -1;
        throw DataError("base64: invalid character");
    };
    if (in.size() % 4 != 0) throw DataError("base64: length not a multiple of 4");
    std::vector<unsigned char> out;
    out.reserve(in.size() / 4 * 3);
    for (size_t i = 0; i < in.size(); i += 4) {
        int a = val(in[i]), b = val(in[i + 1]), c = val(in[i + 2]), d = val(in[i + 3]);
        if (a < 0 || b < 0) throw DataError("base64: malformed padding");
        uint32_t v = (uint32_t(a) << 18) | (uint32_t(b) << 12);
        out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
        if (c >= 0) {
            v |= uint32_t(c) << 6;
            out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
            if (d >= 0) {
                v |= uint32_t(d);
                out.push_back(static_cast<unsigned char>(v & 0xff));
            }
        } else if (d >= 0) {
            throw DataError("base64: malformed padding");
        }
    }
    return out;
}

/// Little-endian 64-bit float blob <-> base64 text, used by checkpoints.
inline std::string encode_f64(std::span<const double> xs) {
    std::vector<unsigned char> bytes(xs.size() * 8);
    for (size_t i = 0; i < xs.size(); ++i) {
        uint64_t bits;
        std::memcpy(&bits, &xs[i], 8);
        for (int k = 0; k < 8; ++k)
            bytes[i * 8 + static_cast<size_t>(k)] =
                static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
    }
    return base64_encode(bytes);
}

inline std::vector<double> decode_f64(std::string_view b64) {
    auto bytes = base64_decode(b64);
    if (bytes.size() % 8 != 0) throw DataError("f64 blob: size not a multiple of 8");
    std::vector<double> xs(bytes.size() / 8);
    for (size_t i = 0; i < xs.size(); ++i) {
        uint64_t bits = 0;
        for (int k = 7; k >= 0; --k)
            bits = (bits << 8) | bytes[i * 8 + static_cast<size_t>(k)];
        std::memcpy(&xs[i], &bits, 8);
    }
    return xs;
}

/// Quantile by linear interpolation between order statistics at position
/// (n-1)*p. Input must be sorted ascending.
inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw DataError("quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    double pos = p * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<size_t>(std::floor(pos));
    auto hi = static_cast<size_t>(std::ceil(pos));
    double w = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - w) + sorted[hi] * w;
}

inline bool nearly_integer(double x, double tol = 1e-9) {
    return std::abs(x - std::round(x)) < tol;
}

}  // namespace arbfree
