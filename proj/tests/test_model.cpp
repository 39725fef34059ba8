#include "clothdyn/model.hpp"
#include "clothdyn/trainer.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace clothdyn;
using namespace clothdyn::ad;
using namespace clothdyn::model;

namespace {

Mat random_mat(int r, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = 2.0 * uniform01(rng) - 1.0;
    return m;
}

void zero_prefix(ParamStore& store, const std::string& prefix) {
    for (const std::string& name : store.names_sorted())
        if (name.rfind(prefix, 0) == 0) store.slot(name).value.setZero();
}

}  // namespace

// ------------------------------------------------------------------ adaptation

TEST_CASE("zeroed encoder maps everything to zero embeddings") {
    ParamStore store(3);
    ModelConfig mc;
    AdaptModule m = AdaptModule::ensure(store, mc);
    zero_prefix(store, "adapt/enc");
    Tape t;
    t.bind(store);
    Var o = m.encode(t, t.constant(random_mat(64, 6, 1)));
    CHECK(t.value(o).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pointwise encoder maps identical nodes to identical embeddings") {
    ParamStore store(4);
    AdaptModule m = AdaptModule::ensure(store, ModelConfig{});
    Mat feats = random_mat(8, 6, 2);
    feats.row(5) = feats.row(2);
    Tape t;
    t.bind(store);
    const Mat& o = t.value(m.encode(t, t.constant(feats)));
    CHECK((o.row(5) - o.row(2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention over identical embeddings is the uniform average") {
    ParamStore store(5);
    AdaptModule m = AdaptModule::ensure(store, ModelConfig{});
    Mat one = random_mat(1, 32, 3);
    Mat feats = one.replicate(64, 1);
    Tape t;
    t.bind(store);
    const Mat& z = t.value(m.attend_aggregate(t, t.constant(feats), 1, 64));
    CHECK((z - one).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention with a single node returns that node") {
    ParamStore store(6);
    AdaptModule m = AdaptModule::ensure(store, ModelConfig{});
    Mat one = random_mat(1, 32, 4);
    Tape t;
    t.bind(store);
    const Mat& z = t.value(m.attend_aggregate(t, t.constant(one), 1, 1));
    CHECK((z - one).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("attention aggregation is permutation invariant to 1e-12") {
    ParamStore store(7);
    AdaptModule m = AdaptModule::ensure(store, ModelConfig{});
    Mat feats = random_mat(64, 32, 5);
    std::mt19937_64 rng(6);
    std::vector<int> perm(64);
    for (int i = 0; i < 64; ++i) perm[i] = i;
    for (int i = 63; i > 0; --i) std::swap(perm[i], perm[rng() % (i + 1)]);
    Mat permuted(64, 32);
    for (int i = 0; i < 64; ++i) permuted.row(i) = feats.row(perm[i]);

    Tape t;
    t.bind(store);
    Mat a = t.value(m.attend_aggregate(t, t.constant(feats), 1, 64));
    Mat b = t.value(m.attend_aggregate(t, t.constant(permuted), 1, 64));
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("recurrent update conventions") {
    ParamStore store(8);
    AdaptModule m = AdaptModule::ensure(store, ModelConfig{});
    store.slot("adapt/z0").value = random_mat(1, 32, 7);
    {
        // T = 0 returns z0 itself
        Tape t;
        t.bind(store);
        const Mat& z = t.value(m.forward(t, t.constant(Mat::Zero(0, 6)), 1, 0, 64));
        CHECK((z - store.slot("adapt/z0").value).cwiseAbs().maxCoeff() == 0.0);
    }
    {
        // all-zero weights give the zero vector for any T >= 1
        ParamStore zs(9);
        AdaptModule zm = AdaptModule::ensure(zs, ModelConfig{});
        for (const std::string& name : zs.names_sorted()) zs.slot(name).value.setZero();
        Tape t;
        t.bind(zs);
        const Mat& z = t.value(zm.recur(t, t.constant(random_mat(3, 32, 8)), 1, 3));
        CHECK(z.cwiseAbs().maxCoeff() == 0.0);
    }
    {
        // scalar closed form: Wx=1, Wz=0, x=0.5 -> tanh(0.5)
        ModelConfig mc;
        mc.latent_dim = 1;
        mc.hidden = 1;
        ParamStore ss(10);
        AdaptModule sm = AdaptModule::ensure(ss, mc);
        ss.slot("adapt/rnn/Wx").value.setConstant(1.0);
        ss.slot("adapt/rnn/Wz").value.setZero();
        ss.slot("adapt/rnn/b").value.setZero();
        ss.slot("adapt/z0").value.setConstant(0.77);
        Tape t;
        t.bind(ss);
        Mat x(1, 1);
        x(0, 0) = 0.5;
        const Mat& z = t.value(sm.recur(t, t.constant(x), 1, 1));
        CHECK(z(0, 0) == doctest::Approx(std::tanh(0.5)).epsilon(1e-12));
    }
}

TEST_CASE("recurrent outputs stay inside (-1, 1) componentwise") {
    ParamStore store(11);
    AdaptModule m = AdaptModule::ensure(store, ModelConfig{});
    Tape t;
    t.bind(store);
    const Mat& z = t.value(m.recur(t, t.constant(10.0 * random_mat(5, 32, 12)), 1, 5));
    CHECK(z.cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("f_phi is deterministic and differentiable through z0") {
    train::Dataset ds = testing::make_synthetic_dataset(2, 3, 6, 42);
    graph::NormStats stats = train::fit_norm_stats(ds, {0, 1});
    train::NormalizedData nd = train::normalize_dataset(ds, stats);
    ParamStore store(13);
    AdaptModule m = AdaptModule::ensure(store, ModelConfig{});

    Mat z1 = f_phi(m, store, nd.ea[0]);
    Mat z2 = f_phi(m, store, nd.ea[0]);
    CHECK((z1 - z2).cwiseAbs().maxCoeff() == 0.0);

    // gradient with respect to z0 is nonzero for T >= 1
    Mat feats = observation_features(nd.ea[0]);
    Tape t;
    t.bind(store);
    Var z = m.forward(t, t.constant(feats), 1, static_cast<int>(nd.ea[0].size()), 64);
    t.backward(sum_all(z));
    CHECK(store.slot("adapt/z0").grad.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("unnormalized observations are rejected") {
    train::Dataset ds = testing::make_synthetic_dataset(1, 2, 3, 43);
    CHECK_THROWS_AS(observation_features(ds.ea[0]), UsageError);
}

TEST_CASE("encoder gradients match finite differences") {
    ParamStore store(14);
    AdaptModule m = AdaptModule::ensure(store, ModelConfig{});
    Mat feats = random_mat(32, 6, 15);
    auto loss_value = [&] {
        Tape t;
        t.bind(store);
        return t.value(sum_all(m.encode(t, t.constant(feats))))(0, 0);
    };
    auto grads = [&] {
        Tape t;
        t.bind(store);
        t.backward(sum_all(m.encode(t, t.constant(feats))));
    };
    CHECK(grad_check(loss_value, grads, store, 1e-5, 6) < 1e-5);
}

// -------------------------------------------------------------------- dynamics

namespace {

struct SmallGraph {
    graph::GraphState g;
    graph::NeighborTable nt;
};

SmallGraph random_graph(int n, std::uint64_t seed) {
    SmallGraph sg;
    sg.g.node_positions = random_mat(n, 3, seed);
    sg.g.gripper_mask.assign(n, 0);
    std::mt19937_64 rng(seed);
    std::set<std::pair<int, int>> edges;
    for (int v = 1; v < n; ++v) edges.insert({static_cast<int>(rng() % v), v});
    for (int e = 0; e < n / 2; ++e) {
        int a = static_cast<int>(rng() % n), b = static_cast<int>(rng() % n);
        if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
    }
    sg.g.edges.assign(edges.begin(), edges.end());
    sg.nt = graph::neighbor_table(sg.g);
    return sg;
}

// Naive per-node double-loop reference for one propagation step.
Mat naive_propagate(ParamStore& store, const graph::NeighborTable& nt, const Mat& h,
                    const Mat& positions, const Mat& z_row, bool parallel) {
    auto mlp = [&](const std::string& name, const Vec& x) {
        Vec h1 = store.slot(name + "/1/W").value * x + store.slot(name + "/1/b").value.transpose();
        h1 = h1.cwiseMax(0.0);
        return Vec(store.slot(name + "/2/W").value * h1 +
                   store.slot(name + "/2/b").value.transpose());
    };
    int n = static_cast<int>(h.rows());
    int hid = static_cast<int>(h.cols());
    Mat out(n, hid);
    for (int v = 0; v < n; ++v) {
        Vec s1 = Vec::Zero(hid), s2 = Vec::Zero(hid);
        for (int hop = 1; hop <= 2; ++hop) {
            const auto& nbrs = hop == 1 ? nt.one_hop[v] : nt.two_hop[v];
            for (int s : nbrs) {
                Eigen::RowVector3d d = positions.row(s) - positions.row(v);
                Vec e(4 + z_row.cols());
                e(0) = d(0);
                e(1) = d(1);
                e(2) = d(2);
                e(3) = d.norm();
                for (int c = 0; c < z_row.cols(); ++c) e(4 + c) = z_row(0, c);
                Vec in(2 * hid + e.size());
                in << h.row(v).transpose(), h.row(s).transpose(), e;
                Vec msg = mlp("dyn/msg", in);
                (hop == 1 ? s1 : s2) += msg;
            }
        }
        Vec u;
        if (parallel) {
            u.resize(3 * hid);
            u << h.row(v).transpose(), s1, s2;
        } else {
            u.resize(2 * hid);
            u << h.row(v).transpose(), s1 + s2;
        }
        out.row(v) = mlp("dyn/upd", u).transpose();
    }
    return out;
}

}  // namespace

TEST_CASE("edge feature width is 4 + conditioning width") {
    ModelConfig mc;
    CHECK(variant_cond_width(Variant::Edonet, 32) == 32);  // 3+1+32 = 36 total
    CHECK(variant_cond_width(Variant::Nc, 32) == 0);
    CHECK(variant_cond_width(Variant::Of, 32) == 2);
    ParamStore store(20);
    DynModule dyn = DynModule::ensure(store, mc);
    CHECK(store.slot("dyn/msg/1/W").value.cols() == 2 * 32 + 4 + 32);
}

TEST_CASE("propagate matches the naive double-loop oracle on random graphs") {
    for (std::uint64_t seed : {31ull, 32ull, 33ull}) {
        for (bool parallel : {true, false}) {
            SmallGraph sg = random_graph(10, seed);
            ModelConfig mc;
            mc.multihop_parallel = parallel;
            ParamStore store(seed * 7 + parallel);
            DynModule dyn = DynModule::ensure(store, mc);
            DynPlan plan = make_plan(sg.nt, 1);
            Mat h = random_mat(10, 32, seed + 100);
            Mat z = random_mat(1, 32, seed + 200);
            Mat positions = sg.g.node_positions;

            Tape t;
            t.bind(store);
            Var geo = t.constant(edge_geometry(plan, positions));
            DynModule::EdgeTerm et = dyn.edge_term(t, plan, geo, t.constant(z));
            Var hm = dyn.propagate(t, plan, t.constant(h), et);

            Mat ref = naive_propagate(store, sg.nt, h, positions, z, parallel);
            CHECK((t.value(hm) - ref).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("zeroed message net reduces the update to a pointwise function") {
    SmallGraph sg = random_graph(10, 55);
    ParamStore store(56);
    ModelConfig mc;
    DynModule dyn = DynModule::ensure(store, mc);
    zero_prefix(store, "dyn/msg");
    DynPlan plan = make_plan(sg.nt, 1);
    Mat h = random_mat(10, 32, 57);
    h.row(4) = h.row(1);  // identical states -> identical updates (messages are zero)
    Tape t;
    t.bind(store);
    DynModule::EdgeTerm et =
        dyn.edge_term(t, plan, t.constant(edge_geometry(plan, sg.g.node_positions)),
                      t.constant(random_mat(1, 32, 58)));
    const Mat& hm = t.value(dyn.propagate(t, plan, t.constant(h), et));
    CHECK((hm.row(4) - hm.row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ring of identical states stays identical through propagation") {
    int n = 8;
    graph::GraphState ring;
    ring.node_positions = Points::Zero(n, 3);  // identical geometry contributions
    ring.gripper_mask.assign(n, 0);
    for (int v = 0; v < n; ++v) ring.edges.emplace_back(std::min(v, (v + 1) % n),
                                                        std::max(v, (v + 1) % n));
    graph::NeighborTable nt = graph::neighbor_table(ring);
    ParamStore store(60);
    DynModule dyn = DynModule::ensure(store, ModelConfig{});
    DynPlan plan = make_plan(nt, 1);
    Mat h = random_mat(1, 32, 61).replicate(n, 1);
    Tape t;
    t.bind(store);
    DynModule::EdgeTerm et =
        dyn.edge_term(t, plan, t.constant(edge_geometry(plan, ring.node_positions)),
                      t.constant(random_mat(1, 32, 62)));
    const Mat& hm = t.value(dyn.propagate(t, plan, t.constant(h), et));
    for (int v = 1; v < n; ++v) CHECK((hm.row(v) - hm.row(0)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("zeroed decoder predicts the zero displacement") {
    ParamStore store(70);
    ModelConfig mc;
    DynModule dyn = DynModule::ensure(store, mc);
    zero_prefix(store, "dyn/dec");
    SmallGraph sg = random_graph(12, 71);
    DynPlan plan = make_plan(sg.nt, 1);
    Tape t;
    t.bind(store);
    Mat feats = random_mat(12, 5, 72);
    const Mat& delta = t.value(dyn.forward(t, plan, t.constant(feats),
                                           t.constant(edge_geometry(plan, sg.g.node_positions)),
                                           t.constant(random_mat(1, 32, 73))));
    CHECK(delta.cwiseAbs().maxCoeff() == 0.0);
    CHECK(delta.cols() == 3);
}

TEST_CASE("forward dynamics is permutation equivariant to 1e-12") {
    SmallGraph sg = random_graph(10, 80);
    ParamStore store(81);
    ModelConfig mc;
    DynModule dyn = DynModule::ensure(store, mc);
    Mat z = random_mat(1, 32, 82);
    Mat positions = sg.g.node_positions;
    std::vector<double> action{0.35};
    std::vector<char> mask(10, 0);
    mask[3] = 1;

    DynPlan plan = make_plan(sg.nt, 1);
    Tape t;
    t.bind(store);
    Mat feats = node_features(positions, action, mask, 1, 10);
    const Mat& out = t.value(dyn.forward(t, plan, t.constant(feats),
                                         t.constant(edge_geometry(plan, positions)), t.constant(z)));

    // permuted copy
    std::mt19937_64 rng(83);
    std::vector<int> perm(10);
    for (int i = 0; i < 10; ++i) perm[i] = i;
    for (int i = 9; i > 0; --i) std::swap(perm[i], perm[rng() % (i + 1)]);
    graph::GraphState pg;
    pg.node_positions.resize(10, 3);
    pg.gripper_mask.assign(10, 0);
    std::vector<int> inv(10);
    for (int i = 0; i < 10; ++i) inv[perm[i]] = i;
    for (int i = 0; i < 10; ++i) {
        pg.node_positions.row(i) = positions.row(perm[i]);
        pg.gripper_mask[i] = mask[perm[i]];
    }
    for (auto [a, b] : sg.g.edges)
        pg.edges.emplace_back(std::min(inv[a], inv[b]), std::max(inv[a], inv[b]));
    graph::NeighborTable pnt = graph::neighbor_table(pg);
    DynPlan pplan = make_plan(pnt, 1);
    Tape t2;
    t2.bind(store);
    Mat pfeats = node_features(pg.node_positions, action, pg.gripper_mask, 1, 10);
    const Mat& pout =
        t2.value(dyn.forward(t2, pplan, t2.constant(pfeats),
                             t2.constant(edge_geometry(pplan, pg.node_positions)), t2.constant(z)));
    for (int i = 0; i < 10; ++i)
        CHECK((pout.row(i) - out.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

// --------------------------------------------------------------- inverse model

TEST_CASE("inverse model averages node projections and is permutation invariant") {
    ParamStore store(90);
    InverseModule inv = InverseModule::ensure(store, 32, 32);
    Mat feats = random_mat(20, 6, 91);
    Mat cond = random_mat(1, 32, 92);
    std::vector<int> node_sample(20, 0);
    Tape t;
    t.bind(store);
    const Mat& a = t.value(inv.forward(t, t.constant(feats), t.constant(cond), node_sample, 1));

    std::mt19937_64 rng(93);
    std::vector<int> perm(20);
    for (int i = 0; i < 20; ++i) perm[i] = i;
    for (int i = 19; i > 0; --i) std::swap(perm[i], perm[rng() % (i + 1)]);
    Mat pfeats(20, 6);
    for (int i = 0; i < 20; ++i) pfeats.row(i) = feats.row(perm[i]);
    Tape t2;
    t2.bind(store);
    const Mat& b = t2.value(inv.forward(t2, t2.constant(pfeats), t2.constant(cond), node_sample, 1));
    CHECK(std::abs(a(0, 0) - b(0, 0)) < 1e-12);
}

TEST_CASE("zeroed projection makes the inverse output its bias") {
    ParamStore store(95);
    InverseModule inv = InverseModule::ensure(store, 32, 0);
    store.slot("inv/proj/W").value.setZero();
    store.slot("inv/proj/b").value.setConstant(0.625);
    std::vector<int> node_sample(10, 0);
    Tape t;
    t.bind(store);
    const Mat& a = t.value(inv.forward(t, t.constant(random_mat(10, 6, 96)),
                                       t.constant(Mat::Zero(1, 1)), node_sample, 1));
    CHECK(a(0, 0) == doctest::Approx(0.625).epsilon(1e-12));
}
