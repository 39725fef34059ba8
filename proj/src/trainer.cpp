#include "clothdyn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace clothdyn::train {

using namespace clothdyn::ad;
using clothdyn::model::Variant;

ModelBundle ModelBundle::ensure(ParamStore& store, const model::ModelConfig& cfg) {
    ModelBundle b;
    b.cfg = cfg;
    if (model::variant_has_adaptation(cfg.variant)) b.adapt = model::AdaptModule::ensure(store, cfg);
    b.dyn = model::DynModule::ensure(store, cfg);
    if (cfg.variant == Variant::Os)
        b.os_head = model::Linear::ensure(store, "dyn/sup", cfg.latent_dim, 2);
    return b;
}

BatchBuilder::BatchBuilder(const NormalizedData& nd, graph::Env env, const ModelBundle& bundle)
    : nd_(nd), env_(env), bundle_(bundle) {
    v_ = nd.recs.empty() ? 64 : static_cast<int>(nd.recs.front().before.rows());
    int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(v_))));
    graph::GraphState proto = graph::grid_graph(side, side);
    gripper_mask_ = proto.gripper_mask;
    nt_ = graph::neighbor_table(proto);
    if (model::variant_has_adaptation(bundle.cfg.variant)) {
        int T = bundle.cfg.obs_frames;
        ea_feats_.reserve(nd.ea.size());
        for (const auto& obs : nd.ea) {
            std::vector<sim::Observation> sel;
            for (int idx : sim::subsample_indices(static_cast<int>(obs.size()), T))
                sel.push_back(obs[idx]);
            ea_feats_.push_back(model::observation_features(sel));
        }
    }
}

const model::DynPlan& BatchBuilder::plan(int batch) const {
    auto it = plans_.find(batch);
    if (it == plans_.end()) it = plans_.emplace(batch, model::make_plan(nt_, batch)).first;
    return it->second;
}

Var BatchBuilder::conditioning(Tape& t, const std::vector<int>& recs) const {
    int B = static_cast<int>(recs.size());
    Variant variant = bundle_.cfg.variant;
    if (variant == Variant::Of) {
        Mat cond(B, 2);
        for (int i = 0; i < B; ++i) cond.row(i) = nd_.params_norm.row(nd_.recs[recs[i]].sample);
        return t.constant(std::move(cond));
    }
    // unique samples in first-appearance order
    std::vector<int> unique_samples;
    std::vector<int> rec2u(B);
    for (int i = 0; i < B; ++i) {
        int s = nd_.recs[recs[i]].sample;
        int u = -1;
        for (std::size_t k = 0; k < unique_samples.size(); ++k)
            if (unique_samples[k] == s) {
                u = static_cast<int>(k);
                break;
            }
        if (u < 0) {
            u = static_cast<int>(unique_samples.size());
            unique_samples.push_back(s);
        }
        rec2u[i] = u;
    }
    int U = static_cast<int>(unique_samples.size());
    int T = bundle_.cfg.obs_frames;
    Mat feats(static_cast<Eigen::Index>(U) * T * v_, 6);
    for (int u = 0; u < U; ++u)
        feats.middleRows(static_cast<Eigen::Index>(u) * T * v_, static_cast<Eigen::Index>(T) * v_) =
            ea_feats_[unique_samples[u]];
    Var z = bundle_.adapt.forward(t, t.constant(std::move(feats)), U, T, v_);
    return gather_rows(z, rec2u);
}

Var BatchBuilder::predict(Tape& t, const std::vector<int>& recs) const {
    int B = static_cast<int>(recs.size());
    const model::DynPlan& pl = plan(B);
    Mat positions(static_cast<Eigen::Index>(B) * v_, 3);
    std::vector<double> actions(B);
    for (int i = 0; i < B; ++i) {
        const NormalizedData::Rec& r = nd_.recs[recs[i]];
        if (r.env != env_) throw UsageError("BatchBuilder: record from the wrong environment");
        positions.middleRows(static_cast<Eigen::Index>(i) * v_, v_) = r.before;
        actions[i] = r.action_norm;
    }
    Var node_feats = t.constant(model::node_features(positions, actions, gripper_mask_, B, v_));
    Var geo = t.constant(model::edge_geometry(pl, positions));
    Var cond = bundle_.dyn.cond_width > 0 ? conditioning(t, recs) : Var{};
    return bundle_.dyn.forward(t, pl, node_feats, geo, cond);
}

Var BatchBuilder::predict_with_actions(Tape& t, int rec, const std::vector<double>& actions_norm) const {
    int B = static_cast<int>(actions_norm.size());
    const model::DynPlan& pl = plan(B);
    const NormalizedData::Rec& r = nd_.recs[rec];
    Mat positions(static_cast<Eigen::Index>(B) * v_, 3);
    for (int i = 0; i < B; ++i) positions.middleRows(static_cast<Eigen::Index>(i) * v_, v_) = r.before;
    Var node_feats = t.constant(model::node_features(positions, actions_norm, gripper_mask_, B, v_));
    Var geo = t.constant(model::edge_geometry(pl, positions));
    Var cond{};
    if (bundle_.dyn.cond_width > 0) cond = conditioning(t, std::vector<int>(B, rec));
    return bundle_.dyn.forward(t, pl, node_feats, geo, cond);
}

Mat BatchBuilder::targets(const std::vector<int>& recs) const {
    int B = static_cast<int>(recs.size());
    Mat tgt(static_cast<Eigen::Index>(B) * v_, 3);
    for (int i = 0; i < B; ++i)
        tgt.middleRows(static_cast<Eigen::Index>(i) * v_, v_) = nd_.recs[recs[i]].delta;
    return tgt;
}

Var BatchBuilder::loss(Tape& t, const std::vector<int>& recs, double os_lambda) const {
    Var pred = predict(t, recs);
    Var l = mse(pred, t.constant(targets(recs)));
    if (bundle_.cfg.variant == Variant::Os) {
        // Supervised latent term: the conditioning rows must decode to the
        // normalized ground-truth parameters.
        Var cond = conditioning(t, recs);
        int B = static_cast<int>(recs.size());
        Mat p(B, 2);
        for (int i = 0; i < B; ++i) p.row(i) = nd_.params_norm.row(nd_.recs[recs[i]].sample);
        Var sup = mse(bundle_.os_head(t, cond), t.constant(std::move(p)));
        l = add(l, scale(sup, os_lambda));
    }
    return l;
}

std::vector<int> records_of(const NormalizedData& nd, graph::Env env, const std::vector<int>& samples) {
    std::vector<char> keep;
    for (int s : samples) {
        if (s >= static_cast<int>(keep.size())) keep.resize(s + 1, 0);
        keep[s] = 1;
    }
    std::vector<int> out;
    for (int idx : nd.rec_by_env[static_cast<int>(env)]) {
        int s = nd.recs[idx].sample;
        if (s < static_cast<int>(keep.size()) && keep[s]) out.push_back(idx);
    }
    return out;
}

double eval_loss(ParamStore& store, const BatchBuilder& builder, const std::vector<int>& recs,
                 int batch_size, double os_lambda) {
    double total = 0.0;
    int count = 0;
    for (std::size_t at = 0; at < recs.size(); at += batch_size) {
        std::vector<int> chunk(recs.begin() + at,
                               recs.begin() + std::min(recs.size(), at + batch_size));
        Tape t;
        t.bind(store);
        Var l = builder.loss(t, chunk, os_lambda);
        total += t.value(l)(0, 0) * static_cast<double>(chunk.size());
        count += static_cast<int>(chunk.size());
    }
    return count > 0 ? total / count : 0.0;
}

// ------------------------------------------------------------ norm stat slots

namespace {

Mat stat_mat(const graph::FeatureStat& s) {
    Mat m(2, 1);
    m(0, 0) = s.mean;
    m(1, 0) = s.stddev;
    return m;
}

Mat stat_mat3(const std::array<graph::FeatureStat, 3>& s) {
    Mat m(2, 3);
    for (int c = 0; c < 3; ++c) {
        m(0, c) = s[c].mean;
        m(1, c) = s[c].stddev;
    }
    return m;
}

graph::FeatureStat stat_from(const Mat& m, int col = 0) { return {m(0, col), m(1, col)}; }

void put(ParamStore& store, const std::string& name, Mat value) {
    if (store.has(name)) return;  // fine-tuning keeps the original stats
    store.create_value(name, std::move(value), false);
}

}  // namespace

void stats_to_store(const graph::NormStats& st, ParamStore& store) {
    put(store, "norm/ea_pos", stat_mat3(st.ea_pos));
    put(store, "norm/ea_force", stat_mat(st.ea_force));
    Mat p(2, 2);
    p(0, 0) = st.param_k.mean;
    p(1, 0) = st.param_k.stddev;
    p(0, 1) = st.param_b.mean;
    p(1, 1) = st.param_b.stddev;
    put(store, "norm/params", std::move(p));
    for (int e = 0; e < 2; ++e) {
        std::string base = std::string("norm/") + graph::env_name(static_cast<graph::Env>(e));
        put(store, base + "_pos", stat_mat3(st.env[e].pos));
        put(store, base + "_disp", stat_mat(st.env[e].disp));
        put(store, base + "_action", stat_mat(st.env[e].action));
    }
}

graph::NormStats stats_from_store(const ParamStore& store) {
    graph::NormStats st;
    const Mat& ep = store.slot("norm/ea_pos").value;
    for (int c = 0; c < 3; ++c) st.ea_pos[c] = stat_from(ep, c);
    st.ea_force = stat_from(store.slot("norm/ea_force").value);
    const Mat& p = store.slot("norm/params").value;
    st.param_k = stat_from(p, 0);
    st.param_b = stat_from(p, 1);
    for (int e = 0; e < 2; ++e) {
        std::string base = std::string("norm/") + graph::env_name(static_cast<graph::Env>(e));
        const Mat& pos = store.slot(base + "_pos").value;
        for (int c = 0; c < 3; ++c) st.env[e].pos[c] = stat_from(pos, c);
        st.env[e].disp = stat_from(store.slot(base + "_disp").value);
        st.env[e].action = stat_from(store.slot(base + "_action").value);
    }
    return st;
}

// -------------------------------------------------------------- training loop

TrainResult train_model(const Dataset& ds, const Split& split, graph::Env env,
                        const TrainConfig& cfg, const ParamStore* init, bool freeze_adaptation) {
    if (freeze_adaptation && !model::variant_has_adaptation(cfg.model.variant))
        throw UsageError("cannot freeze the adaptation module of a variant that has none");

    graph::NormStats stats;
    ParamStore store = init != nullptr ? *init : ParamStore(cfg.seed);
    if (init != nullptr && store.has("norm/ea_pos")) {
        stats = stats_from_store(store);
    } else {
        stats = fit_norm_stats(ds, split.train);
        stats_to_store(stats, store);
    }
    ModelBundle bundle = ModelBundle::ensure(store, cfg.model);
    if (freeze_adaptation) store.set_trainable("adapt/", false);

    NormalizedData nd = normalize_dataset(ds, stats);
    BatchBuilder builder(nd, env, bundle);
    std::vector<int> train_recs = records_of(nd, env, split.train);
    std::vector<int> val_recs = records_of(nd, env, split.val);
    require(!train_recs.empty() && !val_recs.empty(), "train_model: empty train or val split");

    TrainResult result;
    result.best_val = std::numeric_limits<double>::infinity();
    std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    std::uint64_t gstep = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = train_recs.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(rng() % i);
            std::swap(train_recs[i - 1], train_recs[j]);
        }
        double train_loss = 0.0;
        int batch_index = 0;
        for (std::size_t at = 0; at < train_recs.size(); at += cfg.batch_size, ++batch_index) {
            std::vector<int> chunk(train_recs.begin() + at,
                                   train_recs.begin() + std::min(train_recs.size(),
                                                                 at + cfg.batch_size));
            try {
                Tape t;
                t.bind(store);
                Var l = builder.loss(t, chunk, cfg.os_lambda);
                double lv = t.value(l)(0, 0);
                if (!std::isfinite(lv)) throw NumericalError("non-finite loss");
                train_loss += lv * static_cast<double>(chunk.size());
                t.backward(l);
                adam_step(store, cfg.adam, ++gstep);
            } catch (const NumericalError& e) {
                std::ostringstream os;
                os << "training aborted at epoch " << epoch << ", batch " << batch_index << ": "
                   << e.what();
                throw NumericalError(os.str());
            }
        }
        train_loss /= static_cast<double>(train_recs.size());
        double val_loss = eval_loss(store, builder, val_recs, cfg.batch_size, cfg.os_lambda);
        result.history.push_back(EpochStat{train_loss, val_loss});
        if (val_loss < result.best_val) {
            result.best_val = val_loss;
            result.best_epoch = epoch;
            result.store = store;
        }
        result.final_val = val_loss;
    }

    result.store.meta()["variant"] = model::variant_to_string(cfg.model.variant);
    result.store.meta()["env"] = graph::env_name(env);
    result.store.meta()["T"] = std::to_string(cfg.model.obs_frames);
    result.store.meta()["latent_dim"] = std::to_string(cfg.model.latent_dim);
    result.store.meta()["hidden"] = std::to_string(cfg.model.hidden);
    result.store.meta()["prop_steps"] = std::to_string(cfg.model.prop_steps);
    result.store.meta()["multihop"] = cfg.model.multihop_parallel ? "parallel" : "union";
    result.store.meta()["epochs"] = std::to_string(cfg.epochs);
    return result;
}

}  // namespace clothdyn::train
