// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "arbfree/dynamics.hpp"
#include "arbfree/jsonutil.hpp"
#include "arbfree/manifold.hpp"
#include "arbfree/pipeline.hpp"
#include "arbfree/synth.hpp"

namespace arbfree {

struct EvalOptions {
    double oos_fraction = 0.2;
    std::vector<std::string> ablation_variants{"VAE", "CVAE", "CVAEsT", "CVAEsT+LS"};
    int stress_horizon = 30;
    int stress_paths = 200;
    int stress_starts = 1;  // start dates per currency
    double floor = 0.0;
    int pca_components = 3;
    bool beta_ablation = false;

    void validate() const {
        if (!(oos_fraction > 0.0) || oos_fraction >= 1.0)
            throw ConfigError("evaluation: oos_fraction in (0,1)");
        if (stress_horizon < 0 || stress_paths < 1 || stress_starts < 1)
            throw ConfigError("evaluation: stress options must be positive");
        if (pca_components < 1) throw ConfigError("evaluation: pca_components >= 1");
    }

    static EvalOptions from_json(const json& j) {
        check_keys(j,
                   {"oos_fraction", "ablation_variants", "stress_horizon", "stress_paths",
                    "stress_starts", "floor", "pca_components", "beta_ablation"},
                   "evaluation config");
        EvalOptions o;
        o.oos_fraction = get_or<double>(j, "oos_fraction", o.oos_fraction);
        o.ablation_variants =
            get_or<std::vector<std::string>>(j, "ablation_variants", o.ablation_variants);
        o.stress_horizon = get_or<int>(j, "stress_horizon", o.stress_horizon);
        o.stress_paths = get_or<int>(j, "stress_paths", o.stress_paths);
        o.stress_starts = get_or<int>(j, "stress_starts", o.stress_starts);
        o.floor = get_or<double>(j, "floor", o.floor);
        o.pca_components = get_or<int>(j, "pca_components", o.pca_components);
        o.beta_ablation = get_or<bool>(j, "beta_ablation", o.beta_ablation);
        o.validate();
        return o;
    }
};

/// Ablation-column tags from the reference comparison, mapped onto the
/// Stage A switches.
inline ManifoldConfig apply_variant(ManifoldConfig cfg, const std::string& tag) {
    if (tag == "VAE") {
        cfg.conditioning = false;
        cfg.likelihood = Likelihood::Gaussian;
        cfg.levelscript = false;
    } else if (tag == "VAEsT") {
        cfg.conditioning = false;
        cfg.likelihood = Likelihood::StudentT;
        cfg.levelscript = false;
    } else if (tag == "CVAE") {
        cfg.conditioning = true;
        cfg.likelihood = Likelihood::Gaussian;
        cfg.levelscript = false;
    } else if (tag == "CVAE+LS") {
        cfg.conditioning = true;
        cfg.likelihood = Likelihood::Gaussian;
        cfg.levelscript = true;
    } else if (tag == "CVAEsT") {
        cfg.conditioning = true;
        cfg.likelihood = Likelihood::StudentT;
        cfg.levelscript = false;
    } else if (tag == "CVAEsT+LS") {
        cfg.conditioning = true;
        cfg.likelihood = Likelihood::StudentT;
        cfg.levelscript = true;
    } else {
        throw ConfigError("unknown ablation variant: " + tag);
    }
    return cfg;
}

/// One JSON document driving a whole run. Unknown keys are rejected; the
/// global seed fans out to per-component streams by labeled hash, and the
/// effective document's hash is stamped into every artifact.
struct RunConfig {
    uint64_t seed = 0;
    SynthSpec generator;
    bool has_generator = false;
    TruncationConfig truncation;
    ManifoldConfig manifold;
    DynamicsConfig dynamics;
    EvalOptions evaluation;
    json effective;  // post-override document used for hashing

    std::string hash() const { return to_hex(json_hash(effective)); }

    static RunConfig parse(json j, std::optional<uint64_t> seed_override) {
        check_keys(j, {"seed", "generator", "truncation", "manifold", "dynamics", "evaluation"},
                   "run config");
        RunConfig cfg;
        if (seed_override) j["seed"] = *seed_override;
        cfg.seed = get_or<uint64_t>(j, "seed", 0);
        if (j.contains("generator")) {
            cfg.generator = SynthSpec::from_json(j.at("generator"));
            cfg.has_generator = true;
        }
        if (j.contains("truncation")) {
            const auto& t = j.at("truncation");
            check_keys(t, {"window", "rho0", "pi0"}, "truncation config");
            cfg.truncation.window = get_or<int>(t, "window", cfg.truncation.window);
            cfg.truncation.rho0 = get_or<double>(t, "rho0", cfg.truncation.rho0);
            cfg.truncation.pi0 = get_or<double>(t, "pi0", cfg.truncation.pi0);
            cfg.truncation.validate();
        }
        if (j.contains("manifold")) cfg.manifold = ManifoldConfig::from_json(j.at("manifold"));
        if (j.contains("dynamics")) cfg.dynamics = DynamicsConfig::from_json(j.at("dynamics"));
        if (j.contains("evaluation")) cfg.evaluation = EvalOptions::from_json(j.at("evaluation"));
        // component streams derive from the single global seed
        cfg.manifold.seed = derive_seed(cfg.seed, "manifold");
        cfg.dynamics.seed = derive_seed(cfg.seed, "dynamics");
        cfg.effective = std::move(j);
        return cfg;
    }

    static RunConfig load(const std::string& path, std::optional<uint64_t> seed_override) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw DataError("config: cannot open " + path);
        json j;
        try {
            j = json::parse(is);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config: parse error: ") + e.what());
        }
        return parse(std::move(j), seed_override);
    }
};

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
    const char* env = std::getenv("ARBFREE_LOG");
    if (!env) return LogLevel::Info;
    std::string s(env);
    if (s == "error") return LogLevel::Error;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

}  // namespace arbfree
