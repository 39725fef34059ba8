#pragma once

#include "clothdyn/env.hpp"
#include "clothdyn/graph.hpp"
#include "clothdyn/sim.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace clothdyn::train {

struct SampleInfo {
    int id = 0;
    sim::PhysicalParams params;
};

struct Interaction {
    int sample = 0;
    graph::Env env = graph::Env::Bandage;
    double action = 0.0;
    Points before;  // raw node positions, V x 3
    Points delta;   // raw displacement, V x 3
};

struct Dataset {
    std::string grid_name;
    std::uint64_t seed = 0;
    std::string config_hash;
    sim::SimConfig sim;
    std::vector<SampleInfo> samples;
    std::vector<std::vector<sim::Observation>> ea;  // raw units, per sample
    std::vector<Interaction> interactions;

    int n_samples() const { return static_cast<int>(samples.size()); }
};

// Parameter grids. "full": stiffness [10,46] step 3 x bending [0.01,5.01]
// step 0.5 (143 cells). "desk": 5x5 over the same ranges (25 cells).
std::vector<sim::PhysicalParams> parameter_grid(const std::string& name);

// One EA rollout plus action_count interactions per environment per cell.
// jobs > 1 parallelizes across samples; output is identical to jobs == 1.
Dataset gen_dataset(const sim::SimConfig& cfg, const std::string& grid, std::uint64_t seed,
                    const std::string& config_hash, int jobs = 1);

struct Split {
    std::vector<int> train, val, test;
};

// Split by sample with largest-remainder rounding (ties resolved in
// train/val/test order); deterministic shuffle under seed. Errors when any
// part would be empty.
Split split_samples(int n, double f_train, double f_val, double f_test, std::uint64_t seed);

// Statistics are a pure function of the train split.
graph::NormStats fit_norm_stats(const Dataset& ds, const std::vector<int>& train_samples);

// Text serialization: manifest.txt plus dataset.txt with one record per
// line (floats as %.17g, so reload is bit-exact). Line formats are
// documented in the file header.
void save_dataset(const Dataset& ds, const std::string& dir, bool force = false);
Dataset load_dataset(const std::string& dir);

// Normalized, batch-ready view of a dataset.
struct NormalizedData {
    graph::NormStats stats;
    std::vector<std::vector<sim::Observation>> ea;  // normalized, flag set
    struct Rec {
        int sample;
        graph::Env env;
        double action_raw;
        double action_norm;
        Mat before;  // normalized positions
        Mat delta;   // normalized displacement
    };
    std::vector<Rec> recs;
    Mat params_norm;  // n_samples x 2 (k, b)
    std::vector<int> rec_by_env[2];  // record indices per environment
};

NormalizedData normalize_dataset(const Dataset& ds, const graph::NormStats& stats);

sim::Observation normalize_observation(const sim::Observation& o, const graph::NormStats& stats);

}  // namespace clothdyn::train
