#pragma once

#include "clothdyn/common.hpp"

#include <array>
#include <utility>
#include <vector>

namespace clothdyn::graph {

struct GraphState {
    Points node_positions;                   // N x 3
    std::vector<std::pair<int, int>> edges;  // undirected, i < j, no duplicates
    std::vector<char> gripper_mask;          // per node
    bool normalized = false;

    int n() const { return static_cast<int>(node_positions.rows()); }
};

struct NeighborTable {
    std::vector<std::vector<int>> one_hop;  // exactly distance 1, sorted
    std::vector<std::vector<int>> two_hop;  // exactly distance 2, sorted
};

// 4-connected grid with the two gripped boundary rows (r=0 and r=rows-1)
// flagged in gripper_mask. Node index = r*cols + c. Positions are zeroed;
// callers fill them in.
GraphState grid_graph(int rows, int cols);

// 1-hop and exactly-2-hop neighbor sets by BFS. Throws DataError on a
// disconnected graph.
NeighborTable neighbor_table(const GraphState& g);

// Evenly spaced source indices covering both endpoints: round(j*(src-1)/(tgt-1)).
// Exact stride when (src-1) is a multiple of (tgt-1); identity when src==tgt.
std::vector<int> downsample_indices(int src, int tgt);

// Selects the strided rows/cols of a source grid's positions into a
// tgt_rows x tgt_cols grid graph, keeping the gripped boundary rows.
// Source dimensions must be integer multiples of the target.
GraphState downsample_grid(const Points& positions, int src_rows, int src_cols,
                           int tgt_rows, int tgt_cols);

// ------------------------------------------------------------- normalization

struct FeatureStat {
    double mean = 0.0;
    double stddev = 1.0;
};

enum class Env { Bandage = 0, Lifting = 1 };
inline const char* env_name(Env e) { return e == Env::Bandage ? "bandage" : "lifting"; }

// Per-environment interaction statistics. Displacements use one pooled
// scale across x/y/z so normalization is isotropic (a per-axis scale would
// blow up on symmetry-degenerate axes).
struct EnvStats {
    std::array<FeatureStat, 3> pos;
    FeatureStat disp;    // pooled over components
    FeatureStat action;
};

struct NormStats {
    std::array<FeatureStat, 3> ea_pos;
    FeatureStat ea_force;  // pooled over components
    FeatureStat param_k;
    FeatureStat param_b;
    std::array<EnvStats, 2> env;
};

double normalize(double x, const FeatureStat& s);
double denormalize(double x, const FeatureStat& s);
Points normalize_points(const Points& p, const std::array<FeatureStat, 3>& s);
Points denormalize_points(const Points& p, const std::array<FeatureStat, 3>& s);
Points normalize_pooled(const Points& p, const FeatureStat& s);
Points denormalize_pooled(const Points& p, const FeatureStat& s);

// Mean/std over a stream of samples; throws DataError naming the feature
// when the standard deviation vanishes.
FeatureStat fit_stat(const std::vector<double>& values, const std::string& feature_name);

// ----------------------------------------------------- point-cloud extraction

// Recovers an 8-per-slice grid graph from a cloth point cloud. The two
// grippers are given as 8 corresponding node pairs; each pair defines a
// slicing plane spanned by the pair direction and the vertical axis. Points
// within eps of the plane are chained by nearest neighbor from the first
// endpoint, and 6 equidistant interior nodes are read off the chained
// polyline, yielding an 8x8 grid with grid connectivity.
// eps defaults to half the mean gap between adjacent gripper nodes.
GraphState pointcloud_to_graph(const Points& cloud,
                               const Points& gripper_a,  // 8 x 3
                               const Points& gripper_b,  // 8 x 3
                               double eps = -1.0);

}  // namespace clothdyn::graph
