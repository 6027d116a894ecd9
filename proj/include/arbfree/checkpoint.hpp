// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <memory>
#include <string>

#include "arbfree/dynamics.hpp"
#include "arbfree/jsonutil.hpp"
#include "arbfree/manifold.hpp"
#include "arbfree/mlp.hpp"

namespace arbfree {

namespace detail {

inline json mlp_to_json(const Mlp& net) {
    json j;
    j["widths"] = net.widths;
    std::vector<std::string> acts;
    for (auto a : net.acts) acts.push_back(activation_name(a));
    j["activations"] = acts;
    std::vector<std::string> w, b;
    for (size_t l = 0; l < net.layer_count(); ++l) {
        w.push_back(encode_f64(net.W[l]));
        b.push_back(encode_f64(net.b[l]));
    }
    j["W"] = w;
    j["b"] = b;
    return j;
}

inline Mlp mlp_from_json(const json& j) {
    auto widths = j.at("widths").get<std::vector<int>>();
    std::vector<Activation> acts;
    for (const auto& s : j.at("activations")) acts.push_back(activation_from_name(s.get<std::string>()));
    Mlp net = Mlp::create(widths, acts);
    auto ws = j.at("W").get<std::vector<std::string>>();
    auto bs = j.at("b").get<std::vector<std::string>>();
    if (ws.size() != net.layer_count() || bs.size() != net.layer_count())
        throw DataError("checkpoint: layer blob count mismatch");
    for (size_t l = 0; l < net.layer_count(); ++l) {
        auto wv = decode_f64(ws[l]);
        auto bv = decode_f64(bs[l]);
        if (wv.size() != net.W[l].size() || bv.size() != net.b[l].size())
            throw DataError("checkpoint: layer blob size mismatch");
        net.W[l] = std::move(wv);
        net.b[l] = std::move(bv);
    }
    return net;
}

inline json scaler_to_json(const RobustScaler& s) {
    return json{{"median", s.median}, {"iqr", s.iqr}};
}
inline RobustScaler scaler_from_json(const json& j) {
    RobustScaler s;
    s.median = j.at("median").get<std::vector<double>>();
    s.iqr = j.at("iqr").get<std::vector<double>>();
    if (s.median.size() != s.iqr.size()) throw DataError("checkpoint: scaler size mismatch");
    return s;
}

inline json grid_to_json(const TenorGrid& g) {
    return json{{"tenors", g.tenors}, {"labels", g.labels}};
}
inline TenorGrid grid_from_json(const json& j) {
    return TenorGrid(j.at("tenors").get<std::vector<double>>(),
                     j.at("labels").get<std::vector<std::string>>());
}

inline void write_json_file(const json& j, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open " + path);
    os << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    return json::parse(is);
}

}  // namespace detail

inline void save_manifold(const ManifoldModel& m, const std::string& path,
                          const std::string& config_hash) {
    json j;
    j["format"] = "arbfree-manifold-v1";
    j["config_hash"] = config_hash;
    j["manifold_config"] = m.cfg.to_json();
    j["grid"] = detail::grid_to_json(m.grid);
    j["currencies"] = m.currencies;
    j["encoder"] = detail::mlp_to_json(m.encoder);
    j["decoder"] = detail::mlp_to_json(m.decoder);
    j["embeddings"] = encode_f64(m.embeddings);
    j["input_scaler"] = detail::scaler_to_json(m.input_scaler);
    j["swap_scaler"] = detail::scaler_to_json(m.swap_scaler);
    j["frozen"] = m.frozen;
    j["decode_checksum"] = to_hex(m.frozen ? m.frozen_checksum : m.decode_checksum());
    detail::write_json_file(j, path);
}

/// Loads a Stage A checkpoint; the frozen decoder is re-checksummed and
/// must match the stored digest.
inline ManifoldModel load_manifold(const std::string& path,
                                   std::string* config_hash = nullptr) {
    json j = detail::read_json_file(path);
    if (get_or<std::string>(j, "format", "") != "arbfree-manifold-v1")
        throw DataError("load_manifold: unrecognized checkpoint format");
    ManifoldModel m;
    m.cfg = ManifoldConfig::from_json(j.at("manifold_config"));
    m.grid = detail::grid_from_json(j.at("grid"));
    m.currencies = j.at("currencies").get<std::vector<std::string>>();
    m.encoder = detail::mlp_from_json(j.at("encoder"));
    m.decoder = detail::mlp_from_json(j.at("decoder"));
    m.embeddings = decode_f64(j.at("embeddings").get<std::string>());
    m.input_scaler = detail::scaler_from_json(j.at("input_scaler"));
    m.swap_scaler = detail::scaler_from_json(j.at("swap_scaler"));
    m.frozen = get_or<bool>(j, "frozen", false);
    m.build_schedule();
    uint64_t stored = std::stoull(j.at("decode_checksum").get<std::string>(), nullptr, 16);
    if (m.frozen) {
        m.frozen_checksum = stored;
        if (m.decode_checksum() != stored)
            throw LineageError("load_manifold: frozen decoder checksum mismatch");
    }
    if (config_hash) *config_hash = j.at("config_hash").get<std::string>();
    return m;
}

inline void save_dynamics(const DynamicsModel& model, const std::string& path,
                          const std::string& config_hash) {
    json j;
    j["format"] = "arbfree-dynamics-v1";
    j["config_hash"] = config_hash;
    j["dynamics_config"] = model.cfg.to_json();
    j["paramnet"] = detail::mlp_to_json(model.paramnet);
    j["manifold_checksum"] = to_hex(model.manifold_checksum);
    detail::write_json_file(j, path);
}

/// Loads a Stage B checkpoint against an already-loaded manifold; refuses
/// lineage mismatches.
inline DynamicsModel load_dynamics(const std::string& path,
                                   std::shared_ptr<const ManifoldModel> manifold,
                                   std::string* config_hash = nullptr) {
    json j = detail::read_json_file(path);
    if (get_or<std::string>(j, "format", "") != "arbfree-dynamics-v1")
        throw DataError("load_dynamics: unrecognized checkpoint format");
    DynamicsModel model;
    model.cfg = DynamicsConfig::from_json(j.at("dynamics_config"));
    model.manifold = std::move(manifold);
    model.paramnet = detail::mlp_from_json(j.at("paramnet"));
    model.manifold_checksum = std::stoull(j.at("manifold_checksum").get<std::string>(), nullptr, 16);
    if (!model.manifold || model.manifold->frozen_checksum != model.manifold_checksum)
        throw LineageError("load_dynamics: manifold checksum mismatch");
    if (config_hash) *config_hash = j.at("config_hash").get<std::string>();
    return model;
}

}  // namespace arbfree
