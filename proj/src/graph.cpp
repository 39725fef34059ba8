#include "clothdyn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <set>

namespace clothdyn::graph {

GraphState grid_graph(int rows, int cols) {
    require(rows >= 2 && cols >= 2, "grid_graph: rows and cols must be >= 2");
    GraphState g;
    int n = rows * cols;
    g.node_positions = Points::Zero(n, 3);
    g.gripper_mask.assign(n, 0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            int v = r * cols + c;
            if (c + 1 < cols) g.edges.emplace_back(v, v + 1);
            if (r + 1 < rows) g.edges.emplace_back(v, v + cols);
            if (r == 0 || r == rows - 1) g.gripper_mask[v] = 1;
        }
    return g;
}

NeighborTable neighbor_table(const GraphState& g) {
    int n = g.n();
    std::vector<std::vector<int>> adj(n);
    for (auto [i, j] : g.edges) {
        adj[i].push_back(j);
        adj[j].push_back(i);
    }
    NeighborTable t;
    t.one_hop.resize(n);
    t.two_hop.resize(n);
    int reached = 0;
    {
        // connectivity check from node 0
        std::vector<char> seen(n, 0);
        std::deque<int> q{0};
        seen[0] = 1;
        while (!q.empty()) {
            int v = q.front();
            q.pop_front();
            ++reached;
            for (int u : adj[v])
                if (!seen[u]) {
                    seen[u] = 1;
                    q.push_back(u);
                }
        }
    }
    if (reached != n) throw DataError("neighbor_table: graph is disconnected");
    for (int v = 0; v < n; ++v) {
        std::set<int> d1(adj[v].begin(), adj[v].end());
        std::set<int> d2;
        for (int u : d1)
            for (int w : adj[u])
                if (w != v && !d1.count(w)) d2.insert(w);
        t.one_hop[v].assign(d1.begin(), d1.end());
        t.two_hop[v].assign(d2.begin(), d2.end());
    }
    return t;
}

std::vector<int> downsample_indices(int src, int tgt) {
    std::vector<int> idx(tgt);
    for (int j = 0; j < tgt; ++j)
        idx[j] = static_cast<int>(std::lround(static_cast<double>(j) * (src - 1) / (tgt - 1)));
    return idx;
}

GraphState downsample_grid(const Points& positions, int src_rows, int src_cols,
                           int tgt_rows, int tgt_cols) {
    require(src_rows % tgt_rows == 0 && src_cols % tgt_cols == 0,
            "downsample_grid: source dimensions must be integer multiples of the target");
    require(positions.rows() == static_cast<Eigen::Index>(src_rows) * src_cols,
            "downsample_grid: position count does not match source grid");
    std::vector<int> ri = downsample_indices(src_rows, tgt_rows);
    std::vector<int> ci = downsample_indices(src_cols, tgt_cols);
    GraphState g = grid_graph(tgt_rows, tgt_cols);
    for (int r = 0; r < tgt_rows; ++r)
        for (int c = 0; c < tgt_cols; ++c)
            g.node_positions.row(r * tgt_cols + c) = positions.row(ri[r] * src_cols + ci[c]);
    return g;
}

// ------------------------------------------------------------- normalization

double normalize(double x, const FeatureStat& s) { return (x - s.mean) / s.stddev; }
double denormalize(double x, const FeatureStat& s) { return x * s.stddev + s.mean; }

Points normalize_points(const Points& p, const std::array<FeatureStat, 3>& s) {
    Points out = p;
    for (int c = 0; c < 3; ++c) out.col(c) = (p.col(c).array() - s[c].mean) / s[c].stddev;
    return out;
}

Points denormalize_points(const Points& p, const std::array<FeatureStat, 3>& s) {
    Points out = p;
    for (int c = 0; c < 3; ++c) out.col(c) = p.col(c).array() * s[c].stddev + s[c].mean;
    return out;
}

Points normalize_pooled(const Points& p, const FeatureStat& s) {
    return ((p.array() - s.mean) / s.stddev).matrix();
}

Points denormalize_pooled(const Points& p, const FeatureStat& s) {
    return (p.array() * s.stddev + s.mean).matrix();
}

FeatureStat fit_stat(const std::vector<double>& values, const std::string& feature_name) {
    if (values.empty()) throw DataError("fit_stat: no samples for feature " + feature_name);
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    double sd = std::sqrt(var);
    if (!(sd > 1e-12)) throw DataError("fit_stat: zero-variance feature " + feature_name);
    return FeatureStat{mean, sd};
}

// ----------------------------------------------------- point-cloud extraction

GraphState pointcloud_to_graph(const Points& cloud, const Points& gripper_a,
                               const Points& gripper_b, double eps) {
    require(cloud.rows() >= 200, "pointcloud_to_graph: need at least 200 cloud points");
    require(gripper_a.rows() == 8 && gripper_b.rows() == 8,
            "pointcloud_to_graph: grippers must each have 8 nodes");
    if (eps <= 0.0) {
        double gap = 0.0;
        for (int j = 0; j + 1 < 8; ++j) gap += (gripper_a.row(j + 1) - gripper_a.row(j)).norm();
        eps = 0.5 * gap / 7.0;
    }

    GraphState g = grid_graph(8, 8);
    for (int j = 0; j < 8; ++j) {
        Vec3 p1 = gripper_a.row(j);
        Vec3 p2 = gripper_b.row(j);
        Vec3 axis = p2 - p1;
        Vec3 normal = axis.cross(Vec3::UnitZ());
        double nn = normal.norm();
        if (nn < 1e-12) throw DataError("pointcloud_to_graph: degenerate slice plane at slice " + std::to_string(j));
        normal /= nn;

        // Select the band around the plane and project onto it, so the
        // band's cross-slice spread cannot inflate the chained arc length.
        std::vector<Vec3> sel;
        for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
            Vec3 p = cloud.row(i);
            double off = normal.dot(p - p1);
            if (std::abs(off) <= eps) sel.push_back(p - off * normal);
        }
        if (static_cast<int>(sel.size()) < 6)
            throw DataError("pointcloud_to_graph: slice " + std::to_string(j) + " has fewer than 6 points");

        // Chain slice points by nearest neighbor starting from the first
        // endpoint, stopping once the second endpoint is closer than any
        // remaining point.
        std::vector<Vec3> chain;
        chain.push_back(p1);
        std::vector<char> used(sel.size(), 0);
        Vec3 cur = p1;
        for (;;) {
            int best = -1;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < sel.size(); ++k) {
                if (used[k]) continue;
                double d = (sel[k] - cur).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(k);
                }
            }
            double d_end = (p2 - cur).squaredNorm();
            if (best < 0 || d_end <= best_d) break;
            used[best] = 1;
            cur = sel[best];
            chain.push_back(cur);
        }
        chain.push_back(p2);

        // Arc-length resample: 6 equidistant interior nodes between the endpoints.
        std::vector<double> arc(chain.size(), 0.0);
        for (std::size_t k = 1; k < chain.size(); ++k)
            arc[k] = arc[k - 1] + (chain[k] - chain[k - 1]).norm();
        double total = arc.back();
        if (!(total > 0.0))
            throw DataError("pointcloud_to_graph: zero-length slice " + std::to_string(j));
        for (int r = 0; r < 8; ++r) {
            Vec3 p;
            if (r == 0) {
                p = p1;
            } else if (r == 7) {
                p = p2;
            } else {
                double target = total * static_cast<double>(r) / 7.0;
                std::size_t k = 1;
                while (k + 1 < chain.size() && arc[k] < target) ++k;
                double seg = arc[k] - arc[k - 1];
                double f = seg > 0.0 ? (target - arc[k - 1]) / seg : 0.0;
                p = chain[k - 1] + f * (chain[k] - chain[k - 1]);
            }
            g.node_positions.row(r * 8 + j) = p;
        }
    }
    return g;
}

}  // namespace clothdyn::graph
