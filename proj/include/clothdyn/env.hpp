#pragma once

#include "clothdyn/graph.hpp"
#include "clothdyn/sim.hpp"

#include <utility>
#include <vector>

namespace clothdyn::sim {

// One exploratory-action frame: downsampled graph plus the sensed gripper
// force (tared against the pre-action equilibrium reading).
struct Observation {
    graph::GraphState graph;
    Vec3 force = Vec3::Zero();
    int t = 0;
    bool normalized = false;
};

// All physical and scripting constants. Values are calibrated once for the
// production grids and frozen in the config files shipped with the repo.
struct SimConfig {
    int rows = 8, cols = 8;          // simulated grid
    int graph_rows = 8, graph_cols = 8;  // downsampled observation grid
    double spacing = 0.05;
    double node_mass = 0.01;
    double dt = 1e-3;
    double gravity_z = -1.0;
    double damping = 0.02;           // dynamic rollouts
    double settle_damping = 0.1;     // quasi-static settling
    double settle_tol = 1e-4;
    int settle_max_steps = 400000;
    double contact_stiffness = 2000.0;

    // pulling exploratory action
    double ea_hold_z = 0.0;
    int ea_raw_steps = 400;
    double ea_pull_dist = 0.06;
    int ea_store_frames = 30;
    int savgol_window = 21;
    int savgol_order = 3;

    // bandage: cloth wrapped over a y-axis cylinder, force action pulls the
    // gripped rows down; grippers are held laterally, free vertically
    double cyl_radius = 0.05;
    double cyl_z = 0.0;
    double band_grip_x = 0.13;
    double band_grip_z = -0.05;
    double band_apex_z = 0.07;
    double fmax = 1.0;  // max downward force per gripper

    // lifting: cloth suspended above a table with a sphere resting on it,
    // displacement action raises the gripped rows
    double sphere_radius = 0.06;
    double sphere_mass = 0.3;
    double lift_hold_z = 0.02;
    double table_z = 0.0;
    double lift_speed = 0.25;
    double dmax = 0.10;

    int action_count = 30;

    Vec3 gravity() const { return Vec3(0.0, 0.0, gravity_z); }
    StepOptions step_options(double damp) const { return StepOptions{dt, gravity(), damp}; }
};

// Uniform grid of count actions covering [0, a_max] endpoints included.
std::vector<double> action_grid(double a_max, int count);

// End-anchored uniform subsample: frame j of total chosen as
// floor((j+1)*total/count)-1; always includes the final frame.
std::vector<int> subsample_indices(int total, int count);

// Downsample a cloth state to the observation grid.
graph::GraphState extract_graph(const SimConfig& cfg, const ClothState& s);

// Reaction force the holder of `row` must apply (negative of the net
// spring+gravity force on that row's nodes).
Vec3 gripper_reaction(const ClothState& s, int row, const Vec3& gravity);

// Grips the two opposite edge rows, displaces them apart at constant speed
// for raw_steps frames, smooths the sensed force series, and returns
// `frames` uniformly subsampled observations.
std::vector<Observation> run_pulling_ea(const SimConfig& cfg, const PhysicalParams& params,
                                        int raw_steps, int frames);

struct EnvOutcome {
    graph::GraphState before;
    graph::GraphState after;
    ClothState state_before;
    ClothState state_after;
    Vec3 sphere_before = Vec3::Zero();
    Vec3 sphere_after = Vec3::Zero();
};

// --- bandage ---
ClothState bandage_before(const SimConfig& cfg, const PhysicalParams& params);
ClothState bandage_apply(const SimConfig& cfg, const ClothState& before, double a);
EnvOutcome run_bandage(const SimConfig& cfg, const PhysicalParams& params, double a);
// Max cylinder penetration depth over nodes (test probe).
double cylinder_penetration(const SimConfig& cfg, const ClothState& s);
// Residual of the bandage force balance at zero velocity (test probe).
double bandage_residual(const SimConfig& cfg, const ClothState& s, double a);

// --- lifting ---
struct LiftingWorld {
    ClothState cloth;
    Vec3 sphere_pos = Vec3::Zero();
    Vec3 sphere_vel = Vec3::Zero();
};
LiftingWorld lifting_before(const SimConfig& cfg, const PhysicalParams& params);
LiftingWorld lifting_apply(const SimConfig& cfg, LiftingWorld world, double a);
EnvOutcome run_lifting(const SimConfig& cfg, const PhysicalParams& params, double a);
double lifting_residual(const SimConfig& cfg, const LiftingWorld& w);

}  // namespace clothdyn::sim
