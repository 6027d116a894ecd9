// SPDX-License-Identifier: Apache-2.0
//
// Batch front door: synthesize panels, fit the two stages, evaluate, and
// simulate, with every artifact stamped by the producing config hash.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "arbfree/benchmarks.hpp"
#include "arbfree/checkpoint.hpp"
#include "arbfree/config.hpp"
#include "arbfree/dynamics.hpp"
#include "arbfree/evaluation.hpp"
#include "arbfree/manifold.hpp"
#include "arbfree/panel.hpp"
#include "arbfree/synth.hpp"

namespace fs = std::filesystem;
using namespace arbfree;

namespace {

struct MissingFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::fprintf(stderr, "[arbfree] %s\n", msg.c_str());
}

void require_file(const std::string& path) {
    if (!fs::exists(path)) throw MissingFile("missing file: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return s;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path);
    os << content;
}

std::string manifold_log_csv(const std::vector<TrainLogRow>& log) {
    std::string s = "epoch,loss,kl,recon_rmse_bps\n";
    char buf[128];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", row.epoch, row.loss, row.kl,
                      row.recon_rmse_bps);
        s += buf;
    }
    return s;
}

std::string dynamics_log_csv(const std::vector<DynamicsLogRow>& log) {
    std::string s = "epoch,data_nll,arb,lambda_norm\n";
    char buf[128];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", row.epoch, row.data_nll,
                      row.arb, row.lambda_norm);
        s += buf;
    }
    return s;
}

DensePanel densify_with_warnings(const RunConfig& cfg, const CurvePanel& panel,
                                 const std::string& out_dir) {
    TruncationReport report;
    auto dense = truncate_and_densify(panel, cfg.truncation, &report);
    if (!report.warnings.empty()) {
        std::string jsonl;
        for (const auto& w : report.warnings) jsonl += w + "\n";
        write_file((fs::path(out_dir) / "warnings.jsonl").string(), jsonl);
    }
    if (dense.n_currencies() == 0) throw DataError("no currency survived truncation");
    return dense;
}

void verify_lineage(const std::string& artifact_hash, const RunConfig& cfg,
                    const std::string& what) {
    if (artifact_hash != cfg.hash())
        throw LineageError(what + ": config hash mismatch (artifact " + artifact_hash +
                           ", config " + cfg.hash() + ")");
}

int cmd_synth(const RunConfig& cfg, const std::string& out) {
    if (!cfg.has_generator) throw ConfigError("synth: config lacks a generator section");
    fs::create_directories(out);
    auto res = synth_panel(cfg.generator, derive_seed(cfg.seed, "synth"));
    save_csv(res.panel, (fs::path(out) / "panel.csv").string());
    res.truth.save_csv((fs::path(out) / "truth.csv").string());
    json manifest;
    manifest["config_hash"] = cfg.hash();
    manifest["seed"] = cfg.seed;
    manifest["digests"] = {
        {"panel.csv", to_hex(fnv1a64(read_file((fs::path(out) / "panel.csv").string())))},
        {"truth.csv", to_hex(fnv1a64(read_file((fs::path(out) / "truth.csv").string())))}};
    write_file((fs::path(out) / "synth_manifest.json").string(), manifest.dump(2) + "\n");
    log_info("synth: wrote panel.csv and truth.csv");
    return 0;
}

int cmd_fit_manifold(const RunConfig& cfg, const std::string& panel_path,
                     const std::string& out) {
    require_file(panel_path);
    fs::create_directories(out);
    auto panel = load_csv(panel_path);
    auto dense = densify_with_warnings(cfg, panel, out);
    auto [train, oos] = split_panel(dense, cfg.evaluation.oos_fraction);
    log_info("fit-manifold: " + std::to_string(train.total_rows()) + " training rows");
    auto res = train_manifold(cfg.manifold, train);
    if (res.diverged) log_info("fit-manifold: training aborted at last good checkpoint");
    save_manifold(res.model, (fs::path(out) / "manifold.json").string(), cfg.hash());
    write_file((fs::path(out) / "manifold_log.csv").string(), manifold_log_csv(res.log));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", res.final_recon_rmse_bps);
    log_info(std::string("fit-manifold: in-sample reconstruction ") + buf + " bps");
    return 0;
}

int cmd_fit_dynamics(const RunConfig& cfg, const std::string& panel_path,
                     const std::string& manifold_path, const std::string& out) {
    require_file(panel_path);
    require_file(manifold_path);
    fs::create_directories(out);
    std::string mhash;
    auto manifold = std::make_shared<const ManifoldModel>(load_manifold(manifold_path, &mhash));
    verify_lineage(mhash, cfg, "manifold checkpoint");
    auto panel = load_csv(panel_path);
    auto dense = densify_with_warnings(cfg, panel, out);
    auto [train, oos] = split_panel(dense, cfg.evaluation.oos_fraction);
    auto res = train_dynamics(cfg.dynamics, manifold, train);
    save_dynamics(res.model, (fs::path(out) / "dynamics.json").string(), cfg.hash());
    write_file((fs::path(out) / "dynamics_log.csv").string(), dynamics_log_csv(res.log));
    log_info("fit-dynamics: done");
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& panel_path,
                 const std::string& manifold_path, const std::string& dynamics_path,
                 const std::string& out) {
    require_file(panel_path);
    require_file(manifold_path);
    if (!dynamics_path.empty()) require_file(dynamics_path);
    fs::create_directories(out);

    std::string mhash;
    auto manifold = std::make_shared<const ManifoldModel>(load_manifold(manifold_path, &mhash));
    verify_lineage(mhash, cfg, "manifold checkpoint");

    auto panel = load_csv(panel_path);
    auto dense = densify_with_warnings(cfg, panel, out);
    auto [train, oos] = split_panel(dense, cfg.evaluation.oos_fraction);

    ReportBundle bundle((fs::path(out) / "report").string());
    bundle.write("latents.csv", latents_csv(*manifold, dense));

    // ablation: the fitted model against the PCA+VAR forecast baseline
    std::vector<std::string> names{"model", "PCA+VAR"};
    std::vector<PredPanel> preds;
    preds.push_back(reconstruct_panel(*manifold, oos));
    preds.push_back(pca_var_baseline(train, oos, cfg.evaluation.pca_components));
    auto table = ablation_table(names, preds, oos);
    bundle.write("ablation.csv", table.to_csv());
    std::fputs(table.to_text().c_str(), stdout);

    if (!dynamics_path.empty()) {
        std::string dhash;
        auto dynamics = load_dynamics(dynamics_path, manifold, &dhash);
        verify_lineage(dhash, cfg, "dynamics checkpoint");
        auto oos_latents = encode_panel(*manifold, oos);
        bundle.write("pde_profile.csv",
                     series_csv(pde_violation_profile(dynamics, oos_latents, dense.grid),
                                "tenor", "normalized_residual_rms"));
        bundle.write("risk_premium.csv", risk_premium_csv(risk_premium_series(dynamics, oos)));

        const int horizon = cfg.evaluation.stress_horizon;
        std::vector<std::pair<size_t, size_t>> starts;
        for (size_t c = 0; c < oos.n_currencies(); ++c) {
            for (int s = 0; s < cfg.evaluation.stress_starts; ++s) {
                size_t last_ok = oos.rows(c) > static_cast<size_t>(horizon)
                                     ? oos.rows(c) - static_cast<size_t>(horizon) - 1
                                     : 0;
                size_t row = last_ok * static_cast<size_t>(s + 1) /
                             static_cast<size_t>(cfg.evaluation.stress_starts + 1);
                if (oos.rows(c) > static_cast<size_t>(horizon)) starts.push_back({c, row});
            }
        }
        if (!starts.empty()) {
            DynamicsSimulator proposed("proposed", dynamics, oos_latents);
            HjmSimulator hjm("hjm3", train, oos, cfg.dynamics.dt);
            PcaVarSimulator pcavar("pca_var", train, oos, cfg.evaluation.pca_components);
            for (const SwapPathSimulator* sim :
                 {static_cast<const SwapPathSimulator*>(&proposed),
                  static_cast<const SwapPathSimulator*>(&hjm),
                  static_cast<const SwapPathSimulator*>(&pcavar)}) {
                auto results = forward_stress_test({sim}, oos, starts, horizon,
                                                   cfg.evaluation.stress_paths,
                                                   derive_seed(cfg.seed, "stress"),
                                                   cfg.evaluation.floor);
                bundle.write("stress_" + sim->name() + ".csv", stress_csv(results, dense.grid));
            }
        }
    }
    bundle.finalize(cfg.seed, cfg.hash());
    log_info("evaluate: report written");
    return 0;
}

int cmd_simulate(const RunConfig& cfg, const std::string& panel_path,
                 const std::string& manifold_path, const std::string& dynamics_path,
                 const std::string& start_date, const std::string& currency, int horizon,
                 int n_paths, const std::string& measure, const std::string& out) {
    require_file(panel_path);
    require_file(manifold_path);
    require_file(dynamics_path);
    fs::create_directories(out);
    std::string mhash, dhash;
    auto manifold = std::make_shared<const ManifoldModel>(load_manifold(manifold_path, &mhash));
    verify_lineage(mhash, cfg, "manifold checkpoint");
    auto dynamics = load_dynamics(dynamics_path, manifold, &dhash);
    verify_lineage(dhash, cfg, "dynamics checkpoint");

    auto panel = load_csv(panel_path);
    auto dense = densify_with_warnings(cfg, panel, out);
    int ccy = dense.find_currency(currency);
    if (ccy < 0) throw DataError("simulate: unknown currency " + currency);
    auto paths = encode_panel(*manifold, dense);
    const auto& lp = paths[static_cast<size_t>(ccy)];
    size_t row = lp.dates.size();
    for (size_t r = 0; r < lp.dates.size(); ++r)
        if (lp.dates[r] == start_date) row = r;
    if (row == lp.dates.size()) throw DataError("simulate: start date not in panel: " + start_date);

    Measure ms;
    if (measure == "p")
        ms = Measure::P;
    else if (measure == "q")
        ms = Measure::Q;
    else
        throw ConfigError("simulate: measure must be p or q");

    const int d = manifold->latent_dim();
    std::span<const double> z0(lp.z.data() + row * static_cast<size_t>(d),
                               static_cast<size_t>(d));
    double level = lp.level_scaled[row];

    std::string csv = "path_id,day";
    for (int i = 1; i <= d; ++i) csv += ",z" + std::to_string(i);
    for (const auto& lab : dense.grid.labels) csv += "," + lab;
    csv += "\n";
    char buf[64];
    auto emit_state = [&](int pid, int day, std::span<const double> z) {
        csv += std::to_string(pid) + "," + std::to_string(day);
        for (int i = 0; i < d; ++i) {
            std::snprintf(buf, sizeof buf, ",%.17g", z[static_cast<size_t>(i)]);
            csv += buf;
        }
        auto swaps = reprice_swaps(*manifold, z, ccy, level);
        for (double s : swaps) {
            std::snprintf(buf, sizeof buf, ",%.17g", s);
            csv += buf;
        }
        csv += "\n";
    };
    if (horizon == 0) {
        for (int pid = 0; pid < n_paths; ++pid) emit_state(pid, 0, z0);
    } else {
        auto zpaths = simulate_paths(dynamics, z0, ccy, horizon, n_paths, ms,
                                     derive_seed(cfg.seed, "simulate"));
        for (int pid = 0; pid < n_paths; ++pid)
            for (int day = 0; day <= horizon; ++day) {
                std::span<const double> z(
                    zpaths.data() +
                        (static_cast<size_t>(pid) * (static_cast<size_t>(horizon) + 1) +
                         static_cast<size_t>(day)) *
                            static_cast<size_t>(d),
                    static_cast<size_t>(d));
                emit_state(pid, day, z);
            }
    }
    write_file((fs::path(out) / "paths.csv").string(), csv);
    log_info("simulate: paths written");
    return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& panel_path, const std::string& out) {
    require_file(panel_path);
    fs::create_directories(out);
    auto panel = load_csv(panel_path);
    auto dense = densify_with_warnings(cfg, panel, out);
    auto [train, oos] = split_panel(dense, cfg.evaluation.oos_fraction);

    ReportBundle bundle((fs::path(out) / "report").string());
    std::vector<std::string> names;
    std::vector<PredPanel> preds;
    std::shared_ptr<const ManifoldModel> proposed;
    for (const auto& tag : cfg.evaluation.ablation_variants) {
        auto mc = apply_variant(cfg.manifold, tag);
        mc.seed = derive_seed(cfg.seed, "manifold/" + tag);
        log_info("bench: training " + tag);
        auto res = train_manifold(mc, train);
        names.push_back(tag);
        preds.push_back(reconstruct_panel(res.model, oos));
        if (tag == "CVAEsT+LS")
            proposed = std::make_shared<const ManifoldModel>(std::move(res.model));
    }
    names.push_back("PCA+VAR");
    preds.push_back(pca_var_baseline(train, oos, cfg.evaluation.pca_components));
    auto table = ablation_table(names, preds, oos);
    bundle.write("ablation.csv", table.to_csv());
    write_file((fs::path(out) / "ablation.txt").string(), table.to_text());
    std::fputs(table.to_text().c_str(), stdout);

    if (cfg.evaluation.beta_ablation && proposed) {
        auto oos_latents = encode_panel(*proposed, oos);
        auto dc = cfg.dynamics;
        log_info("bench: dynamics with constraint");
        auto constrained = train_dynamics(dc, proposed, train);
        dc.beta = 0.0;
        log_info("bench: dynamics without constraint");
        auto unconstrained = train_dynamics(dc, proposed, train);
        bundle.write("pde_profile_constrained.csv",
                     series_csv(pde_violation_profile(constrained.model, oos_latents, dense.grid),
                                "tenor", "normalized_residual_rms"));
        bundle.write("pde_profile_unconstrained.csv",
                     series_csv(pde_violation_profile(unconstrained.model, oos_latents, dense.grid),
                                "tenor", "normalized_residual_rms"));
    }
    bundle.finalize(cfg.seed, cfg.hash());
    log_info("bench: report written");
    return 0;
}

int report_error(const std::string& kind, const std::string& message, int code) {
    json err;
    err["error"] = kind;
    err["message"] = message;
    err["exit"] = code;
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"arbitrage-penalized term-structure engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", panel_path, manifold_path, dynamics_path;
    std::string start_date, currency, measure = "p";
    int horizon = 30, n_paths = 100;
    std::optional<uint64_t> seed_override;
    uint64_t seed_flag = 0;

    auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
        auto* copt = cmd->add_option("--config", config_path, "run config JSON");
        if (needs_config) copt->required();
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option_function<uint64_t>(
            "--seed", [&](uint64_t v) { seed_override = v; }, "global seed override");
        (void)seed_flag;
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic panel");
    add_common(synth);

    auto* fitm = app.add_subcommand("fit-manifold", "train Stage A on a panel");
    add_common(fitm);
    fitm->add_option("--panel", panel_path, "panel CSV")->required();

    auto* fitd = app.add_subcommand("fit-dynamics", "train Stage B against a frozen manifold");
    add_common(fitd);
    fitd->add_option("--panel", panel_path, "panel CSV")->required();
    fitd->add_option("--manifold", manifold_path, "manifold checkpoint")->required();

    auto* eval = app.add_subcommand("evaluate", "write the report bundle");
    add_common(eval);
    eval->add_option("--panel", panel_path, "panel CSV")->required();
    eval->add_option("--manifold", manifold_path, "manifold checkpoint")->required();
    eval->add_option("--dynamics", dynamics_path, "dynamics checkpoint");

    auto* sim = app.add_subcommand("simulate", "simulate latent paths and decoded curves");
    add_common(sim);
    sim->add_option("--panel", panel_path, "panel CSV")->required();
    sim->add_option("--manifold", manifold_path, "manifold checkpoint")->required();
    sim->add_option("--dynamics", dynamics_path, "dynamics checkpoint")->required();
    sim->add_option("--start-date", start_date, "simulation start date")->required();
    sim->add_option("--currency", currency, "currency identifier")->required();
    sim->add_option("--horizon", horizon, "days to simulate");
    sim->add_option("--n-paths", n_paths, "number of paths");
    sim->add_option("--measure", measure, "p or q");

    auto* bench = app.add_subcommand("bench", "ablation table and benchmark reports");
    add_common(bench);
    bench->add_option("--panel", panel_path, "panel CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        require_file(config_path);
        RunConfig cfg = RunConfig::load(config_path, seed_override);
        if (synth->parsed()) return cmd_synth(cfg, out_dir);
        if (fitm->parsed()) return cmd_fit_manifold(cfg, panel_path, out_dir);
        if (fitd->parsed()) return cmd_fit_dynamics(cfg, panel_path, manifold_path, out_dir);
        if (eval->parsed())
            return cmd_evaluate(cfg, panel_path, manifold_path, dynamics_path, out_dir);
        if (sim->parsed())
            return cmd_simulate(cfg, panel_path, manifold_path, dynamics_path, start_date,
                                currency, horizon, n_paths, measure, out_dir);
        if (bench->parsed()) return cmd_bench(cfg, panel_path, out_dir);
        return report_error("usage", "no subcommand", 1);
    } catch (const MissingFile& e) {
        return report_error("missing_file", e.what(), 2);
    } catch (const LineageError& e) {
        return report_error("lineage_mismatch", e.what(), 3);
    } catch (const ConfigError& e) {
        return report_error("invalid_config", e.what(), 4);
    } catch (const DataError& e) {
        return report_error("invalid_input", e.what(), 4);
    } catch (const std::exception& e) {
        return report_error("internal", e.what(), 1);
    }
}
