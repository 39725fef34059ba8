#include "clothdyn/env.hpp"

#include <doctest.h>

#include <cmath>

using namespace clothdyn;
using namespace clothdyn::sim;

namespace {
const SimConfig kCfg;  // production constants
}

TEST_CASE("action grid covers [0, max] with 30 instances") {
    std::vector<double> grid = action_grid(1.5, 30);
    CHECK(grid.size() == 30);
    CHECK(grid.front() == 0.0);
    CHECK(grid.back() == doctest::Approx(1.5).epsilon(1e-15));
    for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);
}

TEST_CASE("subsample indices are end-anchored and uniform") {
    CHECK(subsample_indices(30, 5) == std::vector<int>{5, 11, 17, 23, 29});
    CHECK(subsample_indices(30, 1) == std::vector<int>{29});
    CHECK(subsample_indices(30, 3) == std::vector<int>{9, 19, 29});
    CHECK(subsample_indices(5, 5) == std::vector<int>{0, 1, 2, 3, 4});
    CHECK_THROWS_AS(subsample_indices(10, 11), UsageError);
}

TEST_CASE("pulling EA returns frames with strictly increasing time indices") {
    std::vector<Observation> obs = run_pulling_ea(kCfg, PhysicalParams{28.0, 2.51}, 100, 7);
    CHECK(obs.size() == 7);
    for (std::size_t i = 1; i < obs.size(); ++i) CHECK(obs[i].t > obs[i - 1].t);
    for (const Observation& o : obs) {
        CHECK(o.graph.n() == 64);
        CHECK(o.force.allFinite());
        CHECK_FALSE(o.normalized);
    }
    CHECK_THROWS_AS(run_pulling_ea(kCfg, PhysicalParams{28.0, 2.51}, 10, 5), UsageError);
}

TEST_CASE("zero pull distance leaves forces near zero and the settled graphs") {
    SimConfig cfg = kCfg;
    cfg.ea_pull_dist = 0.0;
    std::vector<Observation> obs = run_pulling_ea(cfg, PhysicalParams{10.0, 0.01}, 60, 4);
    for (const Observation& o : obs) CHECK(o.force.norm() < 2e-3);
    const Points& first = obs.front().graph.node_positions;
    const Points& last = obs.back().graph.node_positions;
    CHECK((last - first).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("final EA force magnitude is non-decreasing in stiffness") {
    double prev = -1.0;
    for (double k : {10.0, 28.0, 46.0}) {
        std::vector<Observation> obs =
            run_pulling_ea(kCfg, PhysicalParams{k, 2.51}, kCfg.ea_raw_steps, 5);
        double f = obs.back().force.norm();
        CHECK(f > prev);
        prev = f;
    }
}

TEST_CASE("bandage zero action is the identity on the draped state") {
    EnvOutcome out = run_bandage(kCfg, PhysicalParams{19.0, 1.26}, 0.0);
    CHECK((out.after.node_positions - out.before.node_positions).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bandage stays outside the cylinder and responds monotonically") {
    PhysicalParams p{10.0, 0.01};  // softest cloth penetrates deepest
    ClothState before = bandage_before(kCfg, p);
    Points g0 = extract_graph(kCfg, before).node_positions;
    double prev_delta = -1.0;
    for (double a : {0.33 * kCfg.fmax, 0.66 * kCfg.fmax, kCfg.fmax}) {
        ClothState after = bandage_apply(kCfg, before, a);
        CHECK(cylinder_penetration(kCfg, after) <= 0.01 * kCfg.cyl_radius);
        CHECK(bandage_residual(kCfg, after, a) < kCfg.settle_tol);
        double delta = (extract_graph(kCfg, after).node_positions - g0).norm();
        CHECK(delta > prev_delta);
        prev_delta = delta;
    }
    CHECK_THROWS_AS(bandage_apply(kCfg, before, 2.0 * kCfg.fmax), UsageError);
}

TEST_CASE("bandage residual is re-verifiable by an independent force summation") {
    SimConfig cfg = kCfg;
    PhysicalParams p{28.0, 2.51};
    double a = 0.5 * cfg.fmax;
    ClothState before = bandage_before(cfg, p);
    ClothState st = bandage_apply(cfg, before, a);

    // independent recomputation: Hooke + gravity + cylinder penalty + action
    double res = 0.0;
    for (int r = 0; r < st.rows; ++r)
        for (int c = 0; c < st.cols; ++c) {
            int v = st.index(r, c);
            Vec3 f = st.node_mass * cfg.gravity();
            for (const Spring& sp : st.springs) {
                if (sp.i != v && sp.j != v) continue;
                int other = sp.i == v ? sp.j : sp.i;
                Vec3 d = st.positions.row(other) - st.positions.row(v);
                f += sp.k * (d.norm() - sp.rest) * d.normalized();
            }
            double dx = st.positions(v, 0), dz = st.positions(v, 2) - cfg.cyl_z;
            double dist = std::hypot(dx, dz);
            if (dist < cfg.cyl_radius)
                f += cfg.contact_stiffness * (cfg.cyl_radius - dist) * Vec3(dx / dist, 0, dz / dist);
            bool grip = (r == 0 || r == st.rows - 1);
            if (grip) f.z() -= a / st.cols;
            res = std::max(res, grip ? std::abs(f.z()) : f.norm());
        }
    CHECK(res < cfg.settle_tol);
}

TEST_CASE("lifting zero action is the identity") {
    EnvOutcome out = run_lifting(kCfg, PhysicalParams{37.0, 3.76}, 0.0);
    CHECK((out.after.node_positions - out.before.node_positions).cwiseAbs().maxCoeff() == 0.0);
    CHECK((out.sphere_after - out.sphere_before).norm() == 0.0);
}

TEST_CASE("lifting raises the gripped rows by exactly the action") {
    double a = 0.6 * kCfg.dmax;
    EnvOutcome out = run_lifting(kCfg, PhysicalParams{19.0, 2.51}, a);
    auto mean_grip_z = [](const graph::GraphState& g) {
        double z = 0.0;
        int n = 0;
        for (int v = 0; v < g.n(); ++v)
            if (g.gripper_mask[v]) {
                z += g.node_positions(v, 2);
                ++n;
            }
        return z / n;
    };
    CHECK(std::abs(mean_grip_z(out.after) - mean_grip_z(out.before) - a) < 1e-9);
    CHECK(lifting_residual(kCfg, LiftingWorld{out.state_after, out.sphere_after, Vec3::Zero()}) <
          kCfg.settle_tol);
}

TEST_CASE("at fixed action, higher bending yields a shallower sphere dimple") {
    double prev_depth = 1e9;
    for (double b : {0.01, 2.51, 5.01}) {
        LiftingWorld w = lifting_before(kCfg, PhysicalParams{19.0, b});
        w = lifting_apply(kCfg, w, kCfg.dmax);  // suspended, sphere in the hammock
        double min_z = w.cloth.positions.col(2).minCoeff();
        double mean_z = w.cloth.positions.col(2).mean();
        double depth = mean_z - min_z;
        CHECK(depth < prev_depth);
        prev_depth = depth;
    }
}

TEST_CASE("environment rollouts are bit-deterministic") {
    PhysicalParams p{28.0, 1.26};
    EnvOutcome a = run_bandage(kCfg, p, 0.4);
    EnvOutcome b = run_bandage(kCfg, p, 0.4);
    CHECK(std::memcmp(a.after.node_positions.data(), b.after.node_positions.data(),
                      sizeof(double) * a.after.node_positions.size()) == 0);
    std::vector<Observation> ea1 = run_pulling_ea(kCfg, p, 120, 6);
    std::vector<Observation> ea2 = run_pulling_ea(kCfg, p, 120, 6);
    for (std::size_t i = 0; i < ea1.size(); ++i) {
        CHECK(ea1[i].force == ea2[i].force);
        CHECK(ea1[i].graph.node_positions == ea2[i].graph.node_positions);
    }
}
