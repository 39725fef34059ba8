#pragma once

#include "clothdyn/autodiff.hpp"
#include "clothdyn/env.hpp"
#include "clothdyn/graph.hpp"
#include "clothdyn/params.hpp"

#include <string>
#include <vector>

namespace clothdyn::model {

using ad::Act;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

enum class Variant { Edonet, Nc, Edo1, Os, Of, Oi };
Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);
bool variant_has_adaptation(Variant v);
// Width of the conditioning vector fed into edge features (0 for nc).
int variant_cond_width(Variant v, int latent_dim);

struct ModelConfig {
    int latent_dim = 32;
    int hidden = 32;
    int prop_steps = 4;
    int obs_frames = 5;  // T
    bool multihop_parallel = true;  // false: literal union-sum over 1- and 2-hop
    Variant variant = Variant::Edonet;
};

// ------------------------------------------------------------------ layers

struct Linear {
    std::string w, b;
    static Linear ensure(ParamStore& store, const std::string& name, int in, int out);
    Var operator()(Tape& t, Var x) const;
};

// One-hidden-layer MLP, linear output.
struct Mlp {
    Linear l1, l2;
    Act hidden_act = Act::Relu;
    static Mlp ensure(ParamStore& store, const std::string& name, int in, int hidden, int out,
                      Act hidden_act = Act::Relu);
    Var operator()(Tape& t, Var x) const;
};

// --------------------------------------------------------------- adaptation

// Observation encoder + attention aggregation + recurrent update of the
// learned initialization. Node features are [position(3), sensed force(3)].
struct AdaptModule {
    int latent = 32;
    int hidden = 32;
    Mlp encoder;           // 6 -> hidden -> hidden
    std::string attn_w;    // 1 x hidden score map
    std::string rnn_wx, rnn_wz, rnn_b;
    std::string z0;        // 1 x latent, zero-initialized, trainable

    static AdaptModule ensure(ParamStore& store, const ModelConfig& cfg);

    // Per-node embeddings for stacked observations ((rows)x6 -> (rows)xhidden).
    Var encode(Tape& t, Var obs_feats) const;
    // Attention weights + weighted sum per observation block of V rows.
    Var attend_aggregate(Tape& t, Var embeddings, int blocks, int v_per_block) const;
    // Recurrent update over T steps; returns the final hidden state (B x latent).
    // The stacked estimates are laid out sample-major: row b*T + t.
    Var recur(Tape& t, Var z_hat_stacked, int B, int T) const;
    // encode -> attend -> recur for stacked features ((B*T*V) x 6).
    Var forward(Tape& t, Var obs_feats, int B, int T, int V) const;
};

// Builds the (T*V) x 6 normalized feature matrix for one observation
// sequence. Throws UsageError when an observation is not normalized.
Mat observation_features(const std::vector<sim::Observation>& obs);

// z = f_phi(observations, z0) for a single sample (row vector, 1 x latent).
Mat f_phi(const AdaptModule& m, ParamStore& store, const std::vector<sim::Observation>& obs);

// ----------------------------------------------------------------- dynamics

// Directed message-passing plan for a batch of B identical-topology graphs,
// 1-hop edges first, then 2-hop edges, each block grouped per batch element.
struct DynPlan {
    int B = 0;
    int V = 0;
    int e1 = 0;  // directed 1-hop edges per graph
    int e2 = 0;  // directed 2-hop edges per graph
    std::vector<int> src;          // stacked source node rows
    std::vector<int> dst;          // stacked destination node rows
    std::vector<int> edge_sample;  // edge row -> batch element
    std::vector<int> node_sample;  // node row -> batch element

    int total_edges() const { return B * (e1 + e2); }
    std::vector<int> dst_one_hop() const;
    std::vector<int> dst_two_hop() const;
};

DynPlan make_plan(const graph::NeighborTable& nt, int B);

// Geometry part of the directed edge features: [pos_src - pos_dst, |.|],
// computed from stacked normalized positions ((B*V) x 3).
Mat edge_geometry(const DynPlan& plan, const Mat& positions);

struct DynModule {
    int hidden = 32;
    int cond_width = 0;
    int prop_steps = 4;
    bool multihop_parallel = true;
    Mlp encoder;  // 5 -> hidden -> hidden, node features [pos(3), action(1), gripped(1)]
    Mlp message;  // (2*hidden + 4 + cond) -> hidden -> hidden
    Mlp update;   // (hidden * (1 + sums)) -> hidden -> hidden
    Mlp decoder;  // hidden -> hidden -> 3

    static DynModule ensure(ParamStore& store, const ModelConfig& cfg);

    // One message-passing step given precomputed per-step-invariant pieces.
    struct EdgeTerm {
        Var w1_hv, w1_hs;  // slices of the message first layer
        Var e_term;        // (edges x hidden) contribution of edge features
        Var b1;
    };
    EdgeTerm edge_term(Tape& t, const DynPlan& plan, Var geo, Var cond) const;
    Var propagate(Tape& t, const DynPlan& plan, Var h, const EdgeTerm& et) const;

    // Full forward: node features -> M propagation steps -> per-node
    // displacement in normalized units ((B*V) x 3).
    // cond is B x cond_width (ignored when cond_width == 0).
    Var forward(Tape& t, const DynPlan& plan, Var node_feats, Var geo, Var cond) const;
};

// Stacked node features from normalized positions, normalized action and
// gripper mask: [pos(3), a(1), gripped(1)].
Mat node_features(const Mat& positions, const std::vector<double>& actions_per_sample,
                  const std::vector<char>& gripper_mask, int B, int V);

// ------------------------------------------------------------ inverse model

struct InverseModule {
    int hidden = 32;
    int cond_width = 0;
    Mlp node_encoder;  // 6 -> hidden -> hidden, [pos_before(3), pos_after(3)]
    Mlp cond_encoder;  // cond -> hidden -> hidden (absent when cond_width == 0)
    std::string proj_w, proj_b;  // (hidden [+hidden]) -> 1

    static InverseModule ensure(ParamStore& store, int hidden, int cond_width);

    // Per-node encodings and the conditioning encoding are concatenated,
    // projected to a scalar and averaged over nodes: returns B x 1.
    Var forward(Tape& t, Var pair_feats, Var cond, const std::vector<int>& node_sample, int B) const;
};

// --------------------------------------------------------- decode regressor

// 3 hidden layers of width 64, ReLU; latent -> physical parameter estimate.
struct Regressor {
    Linear l1, l2, l3, l4;
    static Regressor ensure(ParamStore& store, int in, int hidden, int out);
    Var operator()(Tape& t, Var x) const;
};

}  // namespace clothdyn::model
