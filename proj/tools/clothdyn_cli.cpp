// Command-line pipeline driver: dataset generation, training, evaluation
// experiments, and report aggregation. Exit codes: 0 success, 2 usage or
// argument error, 3 data/compatibility error, 4 numerical failure.

#include "clothdyn/config.hpp"
#include "clothdyn/dataset.hpp"
#include "clothdyn/evalsuite.hpp"
#include "clothdyn/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace clothdyn;

namespace {

config::RunConfig load_config(const std::string& path) {
    return path.empty() ? config::RunConfig() : config::RunConfig::from_file(path);
}

std::string env_override(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v != nullptr ? std::string(v) : fallback;
}

graph::Env parse_env(const std::string& s) {
    if (s == "bandage") return graph::Env::Bandage;
    if (s == "lifting") return graph::Env::Lifting;
    throw UsageError("unknown environment: " + s + " (expected bandage|lifting)");
}

train::Split split_of(const config::RunConfig& cfg, const train::Dataset& ds) {
    return train::split_samples(ds.n_samples(), cfg.get_double("split.train"),
                                cfg.get_double("split.val"), cfg.get_double("split.test"),
                                cfg.seed());
}

void check_dataset_compat(const config::RunConfig& cfg, const train::Dataset& ds) {
    if (ds.config_hash != cfg.dataset_hash())
        throw DataError("dataset manifest hash " + ds.config_hash +
                        " does not match the config's dataset hash " + cfg.dataset_hash());
}

void write_history(const std::string& path, const train::TrainResult& result,
                   const std::string& config_hash) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write history: " + path);
    os << "# config_hash=" << config_hash << "\n";
    os << "epoch,train_loss,val_loss\n";
    char buf[64];
    for (std::size_t e = 0; e < result.history.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g", e, result.history[e].train_loss,
                      result.history[e].val_loss);
        os << buf << "\n";
    }
}

int cmd_gen(const std::string& config_path, std::string out, std::string grid, std::string seed,
            int jobs, bool force) {
    config::RunConfig cfg = load_config(config_path);
    if (!grid.empty()) cfg.set("grid", grid);
    if (!seed.empty()) cfg.set("seed", seed);
    if (jobs > 0) cfg.set("jobs", std::to_string(jobs));
    out = env_override("CLOTHDYN_OUT", out);
    int run_jobs = std::stoi(env_override("CLOTHDYN_JOBS", cfg.get("jobs")));

    train::Dataset ds = train::gen_dataset(cfg.sim_config(), cfg.grid(), cfg.seed(),
                                           cfg.dataset_hash(), run_jobs);
    train::save_dataset(ds, out, force);
    std::cout << "generated " << ds.n_samples() << " samples (" << ds.interactions.size()
              << " interactions) into " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& variant,
              std::string out, const std::string& env_name) {
    config::RunConfig cfg = load_config(config_path);
    model::Variant v = model::variant_from_string(variant);
    if (v == model::Variant::Oi)
        throw UsageError("variant oi is the inverse-dynamics oracle; it has no forward training");
    out = env_override("CLOTHDYN_OUT", out);
    graph::Env env = parse_env(env_name.empty() ? cfg.get("train.env") : env_name);

    train::Dataset ds = train::load_dataset(data);
    check_dataset_compat(cfg, ds);
    train::Split split = split_of(cfg, ds);
    train::TrainResult result = train::train_model(ds, split, env, cfg.train_config(v));
    result.store.meta()["config_hash"] = cfg.hash();

    fs::create_directories(out);
    ad::save_checkpoint(result.store, (fs::path(out) / "checkpoint.ckpt").string());
    write_history((fs::path(out) / "history.csv").string(), result, cfg.hash());
    std::printf("trained %s on %s: best val loss %.17g at epoch %d\n", variant.c_str(),
                graph::env_name(env), result.best_val, result.best_epoch);
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& experiment,
             const std::string& checkpoint, const std::string& data, std::string out,
             const std::string& env_name, const std::string& baseline_checkpoint) {
    config::RunConfig cfg = load_config(config_path);
    out = env_override("CLOTHDYN_OUT", out);
    train::Dataset ds = train::load_dataset(data);
    check_dataset_compat(cfg, ds);
    train::Split split = split_of(cfg, ds);
    fs::create_directories(out);
    std::string hash = cfg.hash();

    std::vector<evalsuite::MetricReport> reports;
    if (experiment == "state" || experiment == "action") {
        ad::ParamStore store = ad::load_checkpoint(checkpoint);
        graph::Env env = env_name.empty() ? parse_env(store.meta().at("env") == "transfer"
                                                          ? "lifting"
                                                          : store.meta().at("env"))
                                          : parse_env(env_name);
        evalsuite::MetricReport r =
            experiment == "state"
                ? evalsuite::eval_state_prediction(store, ds, split, env, hash)
                : evalsuite::eval_action_prediction(store, ds, split, env, hash);
        reports.push_back(r);
    } else if (experiment == "decode") {
        ad::ParamStore store = ad::load_checkpoint(checkpoint);
        evalsuite::DecodeResult dr = evalsuite::decode_params(store, ds, split, {1, 3, 5, 10});
        for (std::size_t i = 0; i < dr.t_values.size(); ++i) {
            evalsuite::MetricReport r = evalsuite::finalize_report(
                "decode", dr.variant, store.meta().at("env"), dr.t_values[i],
                dr.unseen_per_sample[i], hash);
            reports.push_back(std::move(r));
        }
        evalsuite::write_decode_plot_data(out, dr);
    } else if (experiment == "transfer") {
        ad::ParamStore store = ad::load_checkpoint(checkpoint);
        evalsuite::TransferResult tr =
            evalsuite::transfer_bandage2lifting(store, ds, split, cfg.train_config(model::Variant::Edonet), hash);
        if (!tr.adaptation_bits_identical)
            throw NumericalError("adaptation slots changed during fine-tuning");
        ad::save_checkpoint(tr.fine_tuned.store, (fs::path(out) / "transfer.ckpt").string());
        reports.push_back(tr.report);
    } else if (experiment == "inverse") {
        model::Variant v = model::Variant::Nc;
        std::optional<ad::ParamStore> source;
        if (!checkpoint.empty()) {
            source = ad::load_checkpoint(checkpoint);
            v = model::variant_from_string(source->meta().at("variant"));
        }
        if (!baseline_checkpoint.empty() && baseline_checkpoint == "oi") v = model::Variant::Oi;
        evalsuite::InverseResult ir = evalsuite::train_eval_inverse(
            source ? &*source : nullptr, v, ds, split, graph::Env::Bandage,
            cfg.get_int("model.T"), cfg.train_config(v), hash);
        reports.push_back(ir.report);
    } else {
        throw UsageError("unknown experiment: " + experiment);
    }

    evalsuite::write_reports_csv((fs::path(out) / "report.csv").string(), reports);
    for (const evalsuite::MetricReport& r : reports)
        evalsuite::write_per_sample_dump(
            (fs::path(out) / (r.experiment + "_" + r.variant + "_T" + std::to_string(r.T) + ".dat"))
                .string(),
            r);
    for (const evalsuite::MetricReport& r : reports)
        std::printf("%s %s %s T=%d mean %.17g std %.17g n=%zu\n", r.experiment.c_str(),
                    r.variant.c_str(), r.env.c_str(), r.T, r.mean, r.stddev, r.per_sample.size());
    return 0;
}

int cmd_report(const std::string& in, std::string out) {
    out = env_override("CLOTHDYN_OUT", out);
    std::vector<evalsuite::MetricReport> all;
    std::vector<fs::path> dat_files;
    if (!fs::exists(in)) throw UsageError("input directory does not exist: " + in);
    for (const auto& entry : fs::recursive_directory_iterator(in)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().extension() == ".csv") {
            try {
                for (auto& r : evalsuite::read_reports_csv(entry.path().string())) all.push_back(r);
            } catch (const DataError& e) {
                throw DataError("malformed report file " + entry.path().string() + ": " + e.what());
            }
        } else if (entry.path().extension() == ".dat" &&
                   entry.path().filename().string().rfind("decode_", 0) == 0) {
            dat_files.push_back(entry.path());
        }
    }
    if (all.empty()) throw UsageError("no report files found in " + in);
    fs::create_directories(out);
    evalsuite::write_reports_csv((fs::path(out) / "combined.csv").string(), all);
    for (const fs::path& p : dat_files)
        fs::copy_file(p, fs::path(out) / p.filename(), fs::copy_options::overwrite_existing);
    std::cout << "aggregated " << all.size() << " report rows into " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cloth graph-dynamics pipeline"};
    app.require_subcommand(1);

    std::string config_path, out, grid, seed, data, variant, experiment, checkpoint, env_name,
        baseline;
    int jobs = 0;
    bool force = false;

    CLI::App* gen = app.add_subcommand("gen", "generate a dataset over the parameter grid");
    gen->add_option("--config", config_path);
    gen->add_option("--out", out)->required();
    gen->add_option("--grid", grid)->check(CLI::IsMember({"full", "desk"}));
    gen->add_option("--seed", seed);
    gen->add_option("--jobs", jobs);
    gen->add_flag("--force", force);

    CLI::App* tr = app.add_subcommand("train", "train a model variant");
    tr->add_option("--config", config_path);
    tr->add_option("--data", data)->required();
    tr->add_option("--variant", variant)->required();
    tr->add_option("--out", out)->required();
    tr->add_option("--env", env_name)->check(CLI::IsMember({"bandage", "lifting"}));

    CLI::App* ev = app.add_subcommand("eval", "run an evaluation experiment");
    ev->add_option("--config", config_path);
    ev->add_option("--experiment", experiment)
        ->required()
        ->check(CLI::IsMember({"state", "decode", "transfer", "inverse", "action"}));
    ev->add_option("--checkpoint", checkpoint);
    ev->add_option("--data", data)->required();
    ev->add_option("--out", out)->required();
    ev->add_option("--env", env_name)->check(CLI::IsMember({"bandage", "lifting"}));
    ev->add_option("--oracle", baseline)->description("set to 'oi' for the inverse oracle");

    CLI::App* rp = app.add_subcommand("report", "aggregate evaluation reports");
    rp->add_option("--in", data)->required();
    rp->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(config_path, out, grid, seed, jobs, force);
        if (tr->parsed()) return cmd_train(config_path, data, variant, out, env_name);
        if (ev->parsed())
            return cmd_eval(config_path, experiment, checkpoint, data, out, env_name, baseline);
        if (rp->parsed()) return cmd_report(data, out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
