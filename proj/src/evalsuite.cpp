#include "clothdyn/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

namespace fs = std::filesystem;

namespace clothdyn::evalsuite {

using namespace clothdyn::ad;
using clothdyn::model::Variant;
using clothdyn::train::BatchBuilder;
using clothdyn::train::ModelBundle;
using clothdyn::train::NormalizedData;

MetricReport finalize_report(std::string experiment, std::string variant, std::string env, int T,
                             std::vector<std::pair<int, double>> per_sample,
                             std::string config_hash) {
    MetricReport r;
    r.experiment = std::move(experiment);
    r.variant = std::move(variant);
    r.env = std::move(env);
    r.T = T;
    r.per_sample = std::move(per_sample);
    r.config_hash = std::move(config_hash);
    double n = static_cast<double>(r.per_sample.size());
    require(n >= 1, "finalize_report: empty per-sample list");
    for (auto& [id, v] : r.per_sample) r.mean += v;
    r.mean /= n;
    if (r.per_sample.size() > 1) {
        double ss = 0.0;
        for (auto& [id, v] : r.per_sample) ss += (v - r.mean) * (v - r.mean);
        r.stddev = std::sqrt(ss / (n - 1.0));
    }
    return r;
}

namespace {

// Rebuilds the modules recorded in a checkpoint.
model::ModelConfig config_of(const ParamStore& store) {
    model::ModelConfig mc;
    mc.variant = model::variant_from_string(store.meta().at("variant"));
    mc.obs_frames = std::stoi(store.meta().at("T"));
    auto get = [&](const char* key, int fallback) {
        auto it = store.meta().find(key);
        return it == store.meta().end() ? fallback : std::stoi(it->second);
    };
    mc.latent_dim = get("latent_dim", mc.latent_dim);
    mc.hidden = get("hidden", mc.hidden);
    mc.prop_steps = get("prop_steps", mc.prop_steps);
    auto it = store.meta().find("multihop");
    mc.multihop_parallel = it == store.meta().end() || it->second == "parallel";
    return mc;
}

double record_mse(const Mat& pred, const Mat& target) {
    return (pred - target).array().square().sum() / static_cast<double>(target.size());
}

}  // namespace

MetricReport eval_state_prediction(ParamStore& store, const train::Dataset& ds,
                                   const train::Split& split, graph::Env env,
                                   const std::string& config_hash) {
    model::ModelConfig mc = config_of(store);
    if (store.meta().count("env") && store.meta().at("env") != graph::env_name(env) &&
        store.meta().at("env") != "transfer")
        throw DataError("checkpoint was trained on " + store.meta().at("env") +
                        " but evaluation requested " + graph::env_name(env));
    ModelBundle bundle = ModelBundle::ensure(store, mc);
    NormalizedData nd = normalize_dataset(ds, train::stats_from_store(store));
    BatchBuilder builder(nd, env, bundle);

    std::vector<std::pair<int, double>> per_sample;
    for (int s : split.test) {
        std::vector<int> recs = train::records_of(nd, env, {s});
        Tape t;
        t.bind(store);
        Var pred = builder.predict(t, recs);
        Mat target = builder.targets(recs);
        per_sample.emplace_back(s, record_mse(t.value(pred), target));
    }
    return finalize_report("state", model::variant_to_string(mc.variant), graph::env_name(env),
                           mc.obs_frames, std::move(per_sample), config_hash);
}

MetricReport eval_state_prediction_with(const Predictor& predict, const NormalizedData& nd,
                                        const std::vector<int>& samples, graph::Env env,
                                        std::string experiment, std::string variant,
                                        std::string config_hash) {
    std::vector<std::pair<int, double>> per_sample;
    for (int s : samples) {
        double total = 0.0;
        int count = 0;
        for (int idx : train::records_of(nd, env, {s})) {
            const NormalizedData::Rec& rec = nd.recs[idx];
            total += record_mse(predict(rec), rec.delta);
            ++count;
        }
        per_sample.emplace_back(s, total / count);
    }
    return finalize_report(std::move(experiment), std::move(variant), graph::env_name(env), 0,
                           std::move(per_sample), std::move(config_hash));
}

// -------------------------------------------------------------------- decode

DecodeResult decode_params(const ParamStore& store, const train::Dataset& ds,
                           const train::Split& split, const std::vector<int>& t_values,
                           int epochs, std::uint64_t seed) {
    model::ModelConfig mc = config_of(store);
    if (!model::variant_has_adaptation(mc.variant))
        throw DataError("decode_params: checkpoint variant has no adaptation module");
    ParamStore source = store;  // f_phi stays frozen; we only read it
    ModelBundle bundle = ModelBundle::ensure(source, mc);
    NormalizedData nd = normalize_dataset(ds, train::stats_from_store(source));

    DecodeResult out;
    out.variant = model::variant_to_string(mc.variant);
    out.t_values = t_values;

    std::vector<int> unseen;
    unseen.insert(unseen.end(), split.val.begin(), split.val.end());
    unseen.insert(unseen.end(), split.test.begin(), split.test.end());

    for (int T : t_values) {
        // latent per sample at this observation budget
        Mat z_all(ds.n_samples(), mc.latent_dim);
        for (int s = 0; s < ds.n_samples(); ++s) {
            std::vector<sim::Observation> sel;
            for (int idx : sim::subsample_indices(static_cast<int>(nd.ea[s].size()), T))
                sel.push_back(nd.ea[s][idx]);
            z_all.row(s) = model::f_phi(bundle.adapt, source, sel);
        }

        ParamStore reg_store(seed);
        model::Regressor reg = model::Regressor::ensure(reg_store, mc.latent_dim, 64, 2);
        Mat z_train(static_cast<int>(split.train.size()), mc.latent_dim);
        Mat y_train(static_cast<int>(split.train.size()), 2);
        for (std::size_t i = 0; i < split.train.size(); ++i) {
            z_train.row(static_cast<int>(i)) = z_all.row(split.train[i]);
            y_train.row(static_cast<int>(i)) = nd.params_norm.row(split.train[i]);
        }
        AdamConfig adam;
        adam.weight_decay = 1e-4;
        for (int epoch = 1; epoch <= epochs; ++epoch) {
            Tape t;
            t.bind(reg_store);
            Var l = mse(reg(t, t.constant(z_train)), t.constant(y_train));
            t.backward(l);
            adam_step(reg_store, adam, static_cast<std::uint64_t>(epoch));
        }

        auto decode_errors = [&](const std::vector<int>& samples) {
            std::vector<std::pair<int, double>> errs;
            for (int s : samples) {
                Tape t;
                t.bind(reg_store);
                Var pred = reg(t, t.constant(Mat(z_all.row(s))));
                errs.emplace_back(s, record_mse(t.value(pred), Mat(nd.params_norm.row(s))));
            }
            return errs;
        };
        auto mean_of = [](const std::vector<std::pair<int, double>>& errs) {
            double m = 0.0;
            for (auto& [id, v] : errs) m += v;
            return m / static_cast<double>(errs.size());
        };
        out.seen_mse.push_back(mean_of(decode_errors(split.train)));
        std::vector<std::pair<int, double>> unseen_errs = decode_errors(unseen);
        out.unseen_mse.push_back(mean_of(unseen_errs));
        out.unseen_per_sample.push_back(std::move(unseen_errs));
    }
    return out;
}

// ------------------------------------------------------------------ transfer

TransferResult transfer_bandage2lifting(const ParamStore& bandage_store, const train::Dataset& ds,
                                        const train::Split& split, const train::TrainConfig& cfg,
                                        const std::string& config_hash) {
    model::ModelConfig mc = config_of(bandage_store);
    if (!model::variant_has_adaptation(mc.variant))
        throw DataError("transfer: variant " + model::variant_to_string(mc.variant) +
                        " has no adaptation module to freeze");
    train::TrainConfig tc = cfg;
    tc.model = mc;
    tc.model.variant = mc.variant;
    TransferResult out;
    out.fine_tuned = train::train_model(ds, split, graph::Env::Lifting, tc, &bandage_store, true);
    out.fine_tuned.store.meta()["env"] = "transfer";

    out.adaptation_bits_identical = true;
    for (const std::string& name : bandage_store.names_sorted()) {
        if (name.rfind("adapt/", 0) != 0) continue;
        const Mat& a = bandage_store.slot(name).value;
        const Mat& b = out.fine_tuned.store.slot(name).value;
        if (a.rows() != b.rows() || a.cols() != b.cols() ||
            std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) != 0) {
            out.adaptation_bits_identical = false;
            break;
        }
    }

    out.report = eval_state_prediction(out.fine_tuned.store, ds, split, graph::Env::Lifting,
                                       config_hash);
    out.report.experiment = "transfer";
    return out;
}

// ------------------------------------------------------------------- inverse

namespace {

Mat pair_features(const NormalizedData::Rec& rec, const graph::NormStats& stats) {
    int v = static_cast<int>(rec.before.rows());
    const graph::EnvStats& es = stats.env[static_cast<int>(rec.env)];
    // after = before + delta in raw units; renormalized per axis
    Mat after_raw = graph::denormalize_points(rec.before, es.pos) +
                    graph::denormalize_pooled(rec.delta, es.disp);
    Mat after = graph::normalize_points(after_raw, es.pos);
    Mat f(v, 6);
    f.leftCols(3) = rec.before;
    f.rightCols(3) = after;
    return f;
}

}  // namespace

InverseResult train_eval_inverse(const ParamStore* cond_source, Variant variant,
                                 const train::Dataset& ds, const train::Split& split,
                                 graph::Env env, int T, const train::TrainConfig& cfg,
                                 const std::string& config_hash) {
    graph::NormStats stats;
    Mat z_all;  // conditioning row per sample
    int cond_width = 0;
    if (variant == Variant::Nc) {
        stats = train::fit_norm_stats(ds, split.train);
    } else if (variant == Variant::Oi) {
        stats = train::fit_norm_stats(ds, split.train);
        cond_width = 2;
    } else {
        require(cond_source != nullptr, "train_eval_inverse: conditioned variant needs a checkpoint");
        ParamStore source = *cond_source;
        model::ModelConfig mc = config_of(source);
        mc.obs_frames = T;
        ModelBundle bundle = ModelBundle::ensure(source, mc);
        stats = train::stats_from_store(source);
        NormalizedData nd_src = normalize_dataset(ds, stats);
        cond_width = mc.latent_dim;
        z_all.resize(ds.n_samples(), cond_width);
        for (int s = 0; s < ds.n_samples(); ++s) {
            std::vector<sim::Observation> sel;
            for (int idx : sim::subsample_indices(static_cast<int>(nd_src.ea[s].size()), T))
                sel.push_back(nd_src.ea[s][idx]);
            z_all.row(s) = model::f_phi(bundle.adapt, source, sel);
        }
    }
    NormalizedData nd = normalize_dataset(ds, stats);
    if (variant == Variant::Oi) z_all = nd.params_norm;

    ParamStore store(cfg.seed);
    model::InverseModule inv = model::InverseModule::ensure(store, cfg.model.hidden, cond_width);
    std::vector<int> train_recs = train::records_of(nd, env, split.train);
    std::vector<int> val_recs = train::records_of(nd, env, split.val);

    int v = static_cast<int>(nd.recs.front().before.rows());
    auto build_batch = [&](const std::vector<int>& recs, Mat& feats, Mat& cond, Mat& target,
                           std::vector<int>& node_sample) {
        int B = static_cast<int>(recs.size());
        feats.resize(static_cast<Eigen::Index>(B) * v, 6);
        cond.resize(B, std::max(cond_width, 1));
        target.resize(B, 1);
        node_sample.resize(static_cast<std::size_t>(B) * v);
        for (int i = 0; i < B; ++i) {
            const NormalizedData::Rec& rec = nd.recs[recs[i]];
            feats.middleRows(static_cast<Eigen::Index>(i) * v, v) = pair_features(rec, stats);
            if (cond_width > 0) cond.row(i) = z_all.row(rec.sample);
            target(i, 0) = rec.action_norm;
            for (int k = 0; k < v; ++k) node_sample[static_cast<std::size_t>(i) * v + k] = i;
        }
    };

    std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ull);
    std::uint64_t gstep = 0;
    double best_val = std::numeric_limits<double>::infinity();
    ParamStore best = store;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = train_recs.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(rng() % i);
            std::swap(train_recs[i - 1], train_recs[j]);
        }
        for (std::size_t at = 0; at < train_recs.size(); at += cfg.batch_size) {
            std::vector<int> chunk(train_recs.begin() + at,
                                   train_recs.begin() + std::min(train_recs.size(),
                                                                 at + cfg.batch_size));
            Mat feats, cond, target;
            std::vector<int> node_sample;
            build_batch(chunk, feats, cond, target, node_sample);
            Tape t;
            t.bind(store);
            Var pred = inv.forward(t, t.constant(feats), t.constant(cond), node_sample,
                                   static_cast<int>(chunk.size()));
            Var l = mse(pred, t.constant(target));
            t.backward(l);
            adam_step(store, cfg.adam, ++gstep);
        }
        // validation action MSE
        Mat feats, cond, target;
        std::vector<int> node_sample;
        build_batch(val_recs, feats, cond, target, node_sample);
        Tape t;
        t.bind(store);
        Var pred = inv.forward(t, t.constant(feats), t.constant(cond), node_sample,
                               static_cast<int>(val_recs.size()));
        double val = record_mse(t.value(pred), target);
        if (val < best_val) {
            best_val = val;
            best = store;
        }
    }

    InverseResult out;
    out.store = std::move(best);
    std::vector<std::pair<int, double>> per_sample;
    for (int s : split.test) {
        std::vector<int> recs = train::records_of(nd, env, {s});
        Mat feats, cond, target;
        std::vector<int> node_sample;
        build_batch(recs, feats, cond, target, node_sample);
        Tape t;
        t.bind(out.store);
        Var pred = inv.forward(t, t.constant(feats), t.constant(cond), node_sample,
                               static_cast<int>(recs.size()));
        per_sample.emplace_back(s, record_mse(t.value(pred), target));
    }
    out.report = finalize_report("inverse", model::variant_to_string(variant), graph::env_name(env),
                                 T, std::move(per_sample), config_hash);
    return out;
}

MetricReport eval_inverse_with(const std::function<double(const NormalizedData::Rec&)>& predict,
                               const NormalizedData& nd, const std::vector<int>& samples,
                               graph::Env env, std::string variant, std::string config_hash) {
    std::vector<std::pair<int, double>> per_sample;
    for (int s : samples) {
        double total = 0.0;
        int count = 0;
        for (int idx : train::records_of(nd, env, {s})) {
            const NormalizedData::Rec& rec = nd.recs[idx];
            double err = predict(rec) - rec.action_norm;
            total += err * err;
            ++count;
        }
        per_sample.emplace_back(s, total / count);
    }
    return finalize_report("inverse", std::move(variant), graph::env_name(env), 0,
                           std::move(per_sample), std::move(config_hash));
}

// ----------------------------------------------------------- action selection

double select_action(ParamStore& store, const BatchBuilder& builder,
                     const NormalizedData::Rec& rec, const Mat& goal_delta_norm,
                     const std::vector<double>& grid_raw, const std::vector<double>& grid_norm) {
    require(!grid_raw.empty(), "select_action: empty action grid");
    int rec_idx = -1;
    for (std::size_t i = 0; i < builder.data().recs.size(); ++i)
        if (&builder.data().recs[i] == &rec) {
            rec_idx = static_cast<int>(i);
            break;
        }
    require(rec_idx >= 0, "select_action: record does not belong to the builder's dataset");
    // One stacked forward pass over all candidate actions.
    Tape t;
    t.bind(store);
    Var pred = builder.predict_with_actions(t, rec_idx, grid_norm);
    const Mat& p = t.value(pred);
    int v = static_cast<int>(goal_delta_norm.rows());
    int best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < grid_raw.size(); ++k) {
        double err = (p.middleRows(static_cast<Eigen::Index>(k) * v, v) - goal_delta_norm)
                         .array()
                         .square()
                         .sum();
        if (err < best_err) {
            best_err = err;
            best = static_cast<int>(k);
        }
    }
    return grid_raw[best];
}

MetricReport eval_action_prediction(ParamStore& store, const train::Dataset& ds,
                                    const train::Split& split, graph::Env env,
                                    const std::string& config_hash) {
    model::ModelConfig mc = config_of(store);
    ModelBundle bundle = ModelBundle::ensure(store, mc);
    graph::NormStats stats = train::stats_from_store(store);
    NormalizedData nd = normalize_dataset(ds, stats);
    BatchBuilder builder(nd, env, bundle);

    double a_max = env == graph::Env::Bandage ? ds.sim.fmax : ds.sim.dmax;
    std::vector<double> grid_raw = sim::action_grid(a_max, ds.sim.action_count);
    std::vector<double> grid_norm(grid_raw.size());
    for (std::size_t k = 0; k < grid_raw.size(); ++k)
        grid_norm[k] = graph::normalize(grid_raw[k], stats.env[static_cast<int>(env)].action);

    std::vector<std::pair<int, double>> per_sample;
    for (int s : split.test) {
        double total = 0.0;
        int count = 0;
        for (int idx : train::records_of(nd, env, {s})) {
            const NormalizedData::Rec& rec = nd.recs[idx];
            double a_star = select_action(store, builder, rec, rec.delta, grid_raw, grid_norm);
            total += std::abs(a_star - rec.action_raw);
            ++count;
        }
        per_sample.emplace_back(s, total / count);
    }
    return finalize_report("action", model::variant_to_string(mc.variant), graph::env_name(env),
                           mc.obs_frames, std::move(per_sample), config_hash);
}

// ------------------------------------------------------------------- reports

namespace {
std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

void write_reports_csv(const std::string& path, std::vector<MetricReport> reports) {
    std::sort(reports.begin(), reports.end(), [](const MetricReport& a, const MetricReport& b) {
        return std::tie(a.experiment, a.variant, a.env, a.T) <
               std::tie(b.experiment, b.variant, b.env, b.T);
    });
    std::set<std::string> seen;
    std::ofstream os(path);
    if (!os) throw DataError("cannot write report csv: " + path);
    os << "experiment,variant,env,T,mean_mse,std_mse,n_samples,config_hash\n";
    for (const MetricReport& r : reports) {
        std::string key = r.experiment + "," + r.variant + "," + r.env + "," + std::to_string(r.T) +
                          "," + r.config_hash;
        if (!seen.insert(key).second)
            throw DataError("duplicate report for (" + key + ")");
        os << r.experiment << ',' << r.variant << ',' << r.env << ',' << r.T << ',' << fmt(r.mean)
           << ',' << fmt(r.stddev) << ',' << r.per_sample.size() << ',' << r.config_hash << "\n";
    }
}

std::vector<MetricReport> read_reports_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read report csv: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("experiment,", 0) != 0)
        throw DataError("malformed report csv (bad header): " + path);
    std::vector<MetricReport> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        MetricReport r;
        std::string field;
        auto next = [&](const char* what) {
            if (!std::getline(ls, field, ','))
                throw DataError(std::string("malformed report csv (missing ") + what + "): " + path);
            return field;
        };
        r.experiment = next("experiment");
        r.variant = next("variant");
        r.env = next("env");
        r.T = std::stoi(next("T"));
        r.mean = std::stod(next("mean"));
        r.stddev = std::stod(next("std"));
        int n = std::stoi(next("n_samples"));
        r.config_hash = next("config_hash");
        r.per_sample.assign(static_cast<std::size_t>(n), {0, 0.0});
        out.push_back(std::move(r));
    }
    return out;
}

void write_per_sample_dump(const std::string& path, const MetricReport& report) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write per-sample dump: " + path);
    os << "# " << report.experiment << " " << report.variant << " " << report.env << " T="
       << report.T << " config_hash=" << report.config_hash << "\n";
    for (auto& [id, v] : report.per_sample) os << id << ' ' << fmt(v) << "\n";
}

void write_decode_plot_data(const std::string& dir, const DecodeResult& result) {
    fs::create_directories(dir);
    std::ofstream os(fs::path(dir) / ("decode_" + result.variant + ".dat"));
    if (!os) throw DataError("cannot write decode plot data");
    os << "# T unseen_mse seen_mse\n";
    for (std::size_t i = 0; i < result.t_values.size(); ++i)
        os << result.t_values[i] << ' ' << fmt(result.unseen_mse[i]) << ' ' << fmt(result.seen_mse[i])
           << "\n";
}

}  // namespace clothdyn::evalsuite
