#include "clothdyn/model.hpp"

#include <algorithm>

namespace clothdyn::model {

using namespace clothdyn::ad;

Variant variant_from_string(const std::string& s) {
    if (s == "edonet") return Variant::Edonet;
    if (s == "nc") return Variant::Nc;
    if (s == "edo1") return Variant::Edo1;
    if (s == "os") return Variant::Os;
    if (s == "of") return Variant::Of;
    if (s == "oi") return Variant::Oi;
    throw UsageError("unknown variant: " + s);
}

std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::Edonet: return "edonet";
        case Variant::Nc: return "nc";
        case Variant::Edo1: return "edo1";
        case Variant::Os: return "os";
        case Variant::Of: return "of";
        case Variant::Oi: return "oi";
    }
    return "?";
}

bool variant_has_adaptation(Variant v) {
    return v == Variant::Edonet || v == Variant::Edo1 || v == Variant::Os;
}

int variant_cond_width(Variant v, int latent_dim) {
    switch (v) {
        case Variant::Nc: return 0;
        case Variant::Of:
        case Variant::Oi: return 2;
        default: return latent_dim;
    }
}

// ------------------------------------------------------------------ layers

Linear Linear::ensure(ParamStore& store, const std::string& name, int in, int out) {
    Linear l{name + "/W", name + "/b"};
    if (!store.has(l.w)) store.create(l.w, out, in, in);
    if (!store.has(l.b)) store.create_zeros(l.b, 1, out);
    return l;
}

Var Linear::operator()(Tape& t, Var x) const {
    return add_rowvec(matmul_nt(x, t.param(w)), t.param(b));
}

Mlp Mlp::ensure(ParamStore& store, const std::string& name, int in, int hidden, int out, Act act) {
    Mlp m;
    m.l1 = Linear::ensure(store, name + "/1", in, hidden);
    m.l2 = Linear::ensure(store, name + "/2", hidden, out);
    m.hidden_act = act;
    return m;
}

Var Mlp::operator()(Tape& t, Var x) const {
    return l2(t, activate(l1(t, x), hidden_act));
}

// --------------------------------------------------------------- adaptation

AdaptModule AdaptModule::ensure(ParamStore& store, const ModelConfig& cfg) {
    AdaptModule m;
    m.latent = cfg.latent_dim;
    m.hidden = cfg.hidden;
    m.encoder = Mlp::ensure(store, "adapt/enc", 6, cfg.hidden, cfg.hidden);
    m.attn_w = "adapt/attn/W";
    if (!store.has(m.attn_w)) store.create(m.attn_w, 1, cfg.hidden, cfg.hidden);
    m.rnn_wx = "adapt/rnn/Wx";
    m.rnn_wz = "adapt/rnn/Wz";
    m.rnn_b = "adapt/rnn/b";
    if (!store.has(m.rnn_wx)) store.create(m.rnn_wx, cfg.latent_dim, cfg.hidden, cfg.hidden);
    if (!store.has(m.rnn_wz)) store.create(m.rnn_wz, cfg.latent_dim, cfg.latent_dim, cfg.latent_dim);
    if (!store.has(m.rnn_b)) store.create_zeros(m.rnn_b, 1, cfg.latent_dim);
    m.z0 = "adapt/z0";
    if (!store.has(m.z0)) store.create_zeros(m.z0, 1, cfg.latent_dim);
    return m;
}

Var AdaptModule::encode(Tape& t, Var obs_feats) const { return encoder(t, obs_feats); }

Var AdaptModule::attend_aggregate(Tape& t, Var embeddings, int blocks, int v_per_block) const {
    Var scores = matmul_nt(embeddings, t.param(attn_w));  // rows x 1
    Var score_cols = reshape_colmajor(scores, v_per_block, blocks);
    Var alpha = colwise_softmax(score_cols);
    return segment_weighted_sum(embeddings, alpha);  // blocks x hidden
}

Var AdaptModule::recur(Tape& t, Var z_hat_stacked, int B, int T) const {
    ParamStore& store = *t.store();
    Var h = repeat_rows(t.param(store, z0), B);
    if (T == 0) return h;
    Var wx = t.param(store, rnn_wx);
    Var wz = t.param(store, rnn_wz);
    Var b = t.param(store, rnn_b);
    for (int step = 0; step < T; ++step) {
        std::vector<int> rows(B);
        for (int i = 0; i < B; ++i) rows[i] = i * T + step;
        Var xt = gather_rows(z_hat_stacked, std::move(rows));
        h = tanh_(add_rowvec(add(matmul_nt(xt, wx), matmul_nt(h, wz)), b));
    }
    return h;
}

Var AdaptModule::forward(Tape& t, Var obs_feats, int B, int T, int V) const {
    if (T == 0) return repeat_rows(t.param(z0), B);
    Var o = encode(t, obs_feats);
    Var z_hat = attend_aggregate(t, o, B * T, V);
    return recur(t, z_hat, B, T);
}

Mat observation_features(const std::vector<sim::Observation>& obs) {
    int v = obs.empty() ? 0 : obs.front().graph.n();
    Mat feats(static_cast<int>(obs.size()) * v, 6);
    int row = 0;
    for (const sim::Observation& o : obs) {
        if (!o.normalized) throw UsageError("observation_features: observation is not normalized");
        for (int i = 0; i < o.graph.n(); ++i) {
            feats(row, 0) = o.graph.node_positions(i, 0);
            feats(row, 1) = o.graph.node_positions(i, 1);
            feats(row, 2) = o.graph.node_positions(i, 2);
            feats(row, 3) = o.force.x();
            feats(row, 4) = o.force.y();
            feats(row, 5) = o.force.z();
            ++row;
        }
    }
    return feats;
}

Mat f_phi(const AdaptModule& m, ParamStore& store, const std::vector<sim::Observation>& obs) {
    Tape t;
    t.bind(store);
    int T = static_cast<int>(obs.size());
    int V = obs.empty() ? 1 : obs.front().graph.n();
    Var feats = t.constant(T == 0 ? Mat::Zero(0, 6) : observation_features(obs));
    Var z = m.forward(t, feats, 1, T, V);
    return t.value(z);
}

// ----------------------------------------------------------------- dynamics

std::vector<int> DynPlan::dst_one_hop() const {
    return {dst.begin(), dst.begin() + static_cast<std::ptrdiff_t>(B) * e1};
}

std::vector<int> DynPlan::dst_two_hop() const {
    return {dst.begin() + static_cast<std::ptrdiff_t>(B) * e1, dst.end()};
}

DynPlan make_plan(const graph::NeighborTable& nt, int B) {
    DynPlan p;
    p.B = B;
    p.V = static_cast<int>(nt.one_hop.size());
    for (int v = 0; v < p.V; ++v) p.e1 += static_cast<int>(nt.one_hop[v].size());
    for (int v = 0; v < p.V; ++v) p.e2 += static_cast<int>(nt.two_hop[v].size());
    p.src.reserve(static_cast<std::size_t>(B) * (p.e1 + p.e2));
    p.dst.reserve(p.src.capacity());
    p.edge_sample.reserve(p.src.capacity());
    for (int hop = 1; hop <= 2; ++hop) {
        const auto& table = hop == 1 ? nt.one_hop : nt.two_hop;
        for (int b = 0; b < B; ++b) {
            int off = b * p.V;
            for (int v = 0; v < p.V; ++v)
                for (int s : table[v]) {
                    p.dst.push_back(off + v);
                    p.src.push_back(off + s);
                    p.edge_sample.push_back(b);
                }
        }
    }
    p.node_sample.resize(static_cast<std::size_t>(B) * p.V);
    for (int b = 0; b < B; ++b)
        for (int v = 0; v < p.V; ++v) p.node_sample[b * p.V + v] = b;
    return p;
}

Mat edge_geometry(const DynPlan& plan, const Mat& positions) {
    Mat geo(plan.total_edges(), 4);
    for (int e = 0; e < plan.total_edges(); ++e) {
        Eigen::RowVector3d d = positions.row(plan.src[e]) - positions.row(plan.dst[e]);
        geo(e, 0) = d(0);
        geo(e, 1) = d(1);
        geo(e, 2) = d(2);
        geo(e, 3) = d.norm();
    }
    return geo;
}

DynModule DynModule::ensure(ParamStore& store, const ModelConfig& cfg) {
    DynModule m;
    m.hidden = cfg.hidden;
    m.cond_width = variant_cond_width(cfg.variant, cfg.latent_dim);
    m.prop_steps = cfg.prop_steps;
    m.multihop_parallel = cfg.multihop_parallel;
    int sums = m.multihop_parallel ? 2 : 1;
    m.encoder = Mlp::ensure(store, "dyn/enc", 5, cfg.hidden, cfg.hidden);
    m.message = Mlp::ensure(store, "dyn/msg", 2 * cfg.hidden + 4 + m.cond_width, cfg.hidden, cfg.hidden);
    m.update = Mlp::ensure(store, "dyn/upd", cfg.hidden * (1 + sums), cfg.hidden, cfg.hidden);
    m.decoder = Mlp::ensure(store, "dyn/dec", cfg.hidden, cfg.hidden, 3);
    return m;
}

DynModule::EdgeTerm DynModule::edge_term(Tape& t, const DynPlan& plan, Var geo, Var cond) const {
    ParamStore& store = *t.store();
    Var w1 = t.param(store, message.l1.w);
    EdgeTerm et;
    et.w1_hv = slice_cols(w1, 0, hidden);
    et.w1_hs = slice_cols(w1, hidden, hidden);
    Var w1_e = slice_cols(w1, 2 * hidden, 4 + cond_width);
    Var e_feat = geo;
    if (cond_width > 0) {
        Var cond_rows = gather_rows(cond, plan.edge_sample);
        e_feat = concat_cols({geo, cond_rows});
    }
    et.e_term = matmul_nt(e_feat, w1_e);
    et.b1 = t.param(store, message.l1.b);
    return et;
}

Var DynModule::propagate(Tape& t, const DynPlan& plan, Var h, const EdgeTerm& et) const {
    Var pv = matmul_nt(h, et.w1_hv);
    Var ps = matmul_nt(h, et.w1_hs);
    Var pre = add(add(gather_rows(pv, plan.dst), gather_rows(ps, plan.src)), et.e_term);
    Var hidden_layer = relu(add_rowvec(pre, et.b1));
    Var msg = message.l2(t, hidden_layer);
    int n_nodes = plan.B * plan.V;
    Var u_in;
    if (multihop_parallel) {
        int n1 = plan.B * plan.e1;
        int n2 = plan.B * plan.e2;
        Var s1 = scatter_sum_rows(slice_rows(msg, 0, n1), plan.dst_one_hop(), n_nodes);
        Var s2 = scatter_sum_rows(slice_rows(msg, n1, n2), plan.dst_two_hop(), n_nodes);
        u_in = concat_cols({h, s1, s2});
    } else {
        Var s = scatter_sum_rows(msg, plan.dst, n_nodes);
        u_in = concat_cols({h, s});
    }
    return update(t, u_in);
}

Var DynModule::forward(Tape& t, const DynPlan& plan, Var node_feats, Var geo, Var cond) const {
    Var h = encoder(t, node_feats);
    EdgeTerm et = edge_term(t, plan, geo, cond);
    for (int m = 0; m < prop_steps; ++m) h = propagate(t, plan, h, et);
    return decoder(t, h);
}

Mat node_features(const Mat& positions, const std::vector<double>& actions_per_sample,
                  const std::vector<char>& gripper_mask, int B, int V) {
    Mat feats(B * V, 5);
    for (int b = 0; b < B; ++b)
        for (int v = 0; v < V; ++v) {
            int row = b * V + v;
            feats(row, 0) = positions(row, 0);
            feats(row, 1) = positions(row, 1);
            feats(row, 2) = positions(row, 2);
            feats(row, 3) = actions_per_sample[b];
            feats(row, 4) = gripper_mask[v] ? 1.0 : 0.0;
        }
    return feats;
}

// ------------------------------------------------------------ inverse model

InverseModule InverseModule::ensure(ParamStore& store, int hidden, int cond_width) {
    InverseModule m;
    m.hidden = hidden;
    m.cond_width = cond_width;
    m.node_encoder = Mlp::ensure(store, "inv/node", 6, hidden, hidden);
    if (cond_width > 0) m.cond_encoder = Mlp::ensure(store, "inv/cond", cond_width, hidden, hidden);
    int proj_in = cond_width > 0 ? 2 * hidden : hidden;
    m.proj_w = "inv/proj/W";
    m.proj_b = "inv/proj/b";
    if (!store.has(m.proj_w)) store.create(m.proj_w, 1, proj_in, proj_in);
    if (!store.has(m.proj_b)) store.create_zeros(m.proj_b, 1, 1);
    return m;
}

Var InverseModule::forward(Tape& t, Var pair_feats, Var cond, const std::vector<int>& node_sample,
                           int B) const {
    ParamStore& store = *t.store();
    Var enc = node_encoder(t, pair_feats);
    Var joined = enc;
    if (cond_width > 0) {
        Var cond_enc = cond_encoder(t, cond);
        joined = concat_cols({enc, gather_rows(cond_enc, node_sample)});
    }
    Var proj = add_rowvec(matmul_nt(joined, t.param(store, proj_w)), t.param(store, proj_b));
    int v = static_cast<int>(node_sample.size()) / B;
    return scale(scatter_sum_rows(proj, node_sample, B), 1.0 / v);
}

// --------------------------------------------------------- decode regressor

Regressor Regressor::ensure(ParamStore& store, int in, int hidden, int out) {
    Regressor r;
    r.l1 = Linear::ensure(store, "reg/1", in, hidden);
    r.l2 = Linear::ensure(store, "reg/2", hidden, hidden);
    r.l3 = Linear::ensure(store, "reg/3", hidden, hidden);
    r.l4 = Linear::ensure(store, "reg/4", hidden, out);
    return r;
}

Var Regressor::operator()(Tape& t, Var x) const {
    Var h = relu(l1(t, x));
    h = relu(l2(t, h));
    h = relu(l3(t, h));
    return l4(t, h);
}

}  // namespace clothdyn::model
