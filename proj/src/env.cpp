#include "clothdyn/env.hpp"

#include <cmath>
#include <sstream>

namespace clothdyn::sim {

std::vector<double> action_grid(double a_max, int count) {
    require(count >= 2, "action_grid: need at least 2 actions");
    std::vector<double> a(count);
    for (int k = 0; k < count; ++k) a[k] = a_max * static_cast<double>(k) / (count - 1);
    return a;
}

std::vector<int> subsample_indices(int total, int count) {
    require(count >= 1 && count <= total, "subsample_indices: count must lie in [1, total]");
    std::vector<int> idx(count);
    for (int j = 0; j < count; ++j)
        idx[j] = static_cast<int>((static_cast<long long>(j + 1) * total) / count) - 1;
    return idx;
}

graph::GraphState extract_graph(const SimConfig& cfg, const ClothState& s) {
    return graph::downsample_grid(s.positions, s.rows, s.cols, cfg.graph_rows, cfg.graph_cols);
}

Vec3 gripper_reaction(const ClothState& s, int row, const Vec3& gravity) {
    Points f = node_forces(s, gravity, 0.0);
    Vec3 r = Vec3::Zero();
    for (int c = 0; c < s.cols; ++c) r -= Vec3(f.row(s.index(row, c)));
    return r;
}

// ------------------------------------------------------------------ EA

std::vector<Observation> run_pulling_ea(const SimConfig& cfg, const PhysicalParams& params,
                                        int raw_steps, int frames) {
    require(raw_steps >= cfg.savgol_window, "run_pulling_ea: raw_steps shorter than smoothing window");
    require(frames >= 1 && frames <= raw_steps, "run_pulling_ea: frame count must lie in [1, raw_steps]");

    ClothState s = make_cloth(cfg.rows, cfg.cols, cfg.spacing, params, cfg.node_mass);
    s.positions.col(2).array() += cfg.ea_hold_z;
    for (int c = 0; c < cfg.cols; ++c) {
        s.fixed[s.index(0, c)] = 1;
        s.fixed[s.index(cfg.rows - 1, c)] = 1;
    }
    SettleOptions so{cfg.settle_tol, cfg.settle_max_steps, cfg.step_options(cfg.settle_damping)};
    s = settle(std::move(s), so);

    Vec3 tare = gripper_reaction(s, cfg.rows - 1, cfg.gravity());
    double shift = 0.5 * cfg.ea_pull_dist / raw_steps;
    StepOptions stepo = cfg.step_options(cfg.damping);

    std::vector<graph::GraphState> graphs;
    graphs.reserve(raw_steps);
    std::vector<std::array<double, 3>> force_raw;
    force_raw.reserve(raw_steps);
    for (int f = 0; f < raw_steps; ++f) {
        for (int c = 0; c < cfg.cols; ++c) {
            s.positions(s.index(0, c), 0) -= shift;
            s.positions(s.index(cfg.rows - 1, c), 0) += shift;
        }
        step_mut(s, stepo);
        Vec3 sensed = gripper_reaction(s, cfg.rows - 1, cfg.gravity()) - tare;
        force_raw.push_back({sensed.x(), sensed.y(), sensed.z()});
        graphs.push_back(extract_graph(cfg, s));
    }

    std::array<std::vector<double>, 3> smooth;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> comp(raw_steps);
        for (int f = 0; f < raw_steps; ++f) comp[f] = force_raw[f][c];
        smooth[c] = savgol_smooth(comp, cfg.savgol_window, cfg.savgol_order);
    }

    std::vector<Observation> out;
    for (int idx : subsample_indices(raw_steps, frames)) {
        Observation o;
        o.graph = graphs[idx];
        o.force = Vec3(smooth[0][idx], smooth[1][idx], smooth[2][idx]);
        o.t = idx + 1;
        out.push_back(std::move(o));
    }
    return out;
}

// ------------------------------------------------------------------ bandage

namespace {

// Outward penalty force for a point inside the y-axis cylinder.
Vec3 cylinder_force(const SimConfig& cfg, const Vec3& p) {
    double dx = p.x();
    double dz = p.z() - cfg.cyl_z;
    double d = std::hypot(dx, dz);
    if (d >= cfg.cyl_radius || d < 1e-12) return Vec3::Zero();
    double mag = cfg.contact_stiffness * (cfg.cyl_radius - d);
    return Vec3(mag * dx / d, 0.0, mag * dz / d);
}

void bandage_external(const SimConfig& cfg, const ClothState& s, double a, Points& f) {
    for (int v = 0; v < s.n(); ++v) f.row(v) += cylinder_force(cfg, Vec3(s.positions.row(v)));
    double per_node = a / cfg.cols;  // a is the downward force per gripper
    for (int c = 0; c < s.cols; ++c) {
        f(s.index(0, c), 2) -= per_node;
        f(s.index(s.rows - 1, c), 2) -= per_node;
    }
}

// Gripper rows are held in x and y (the robot resists lateral motion under
// force control); only their z component is dynamic.
double bandage_residual_impl(const SimConfig& cfg, const ClothState& s, double a) {
    Points ext = Points::Zero(s.n(), 3);
    bandage_external(cfg, s, a, ext);
    Points f = Points::Zero(s.n(), 3);
    {
        ClothState tmp = s;  // residual at zero velocity
        tmp.velocities.setZero();
        f = node_forces(tmp, cfg.gravity(), 0.0, &ext);
    }
    double res = 0.0;
    for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c) {
            int v = s.index(r, c);
            bool grip = (r == 0 || r == s.rows - 1);
            res = std::max(res, grip ? std::abs(f(v, 2)) : f.row(v).norm());
        }
    return res;
}

ClothState bandage_settle(const SimConfig& cfg, ClothState s, double a) {
    const int check_every = 20;
    StepOptions stepo = cfg.step_options(cfg.settle_damping);
    Points ext(s.n(), 3);
    double res = 0.0;
    for (int it = 0; it <= cfg.settle_max_steps; ++it) {
        if (it % check_every == 0) {
            res = bandage_residual_impl(cfg, s, a);
            if (res < cfg.settle_tol) {
                s.velocities.setZero();
                return s;
            }
        }
        if (it == cfg.settle_max_steps) break;
        ext.setZero();
        bandage_external(cfg, s, a, ext);
        step_mut(s, stepo, &ext);
        for (int c = 0; c < s.cols; ++c)
            for (int r : {0, s.rows - 1}) {
                int v = s.index(r, c);
                double gx = (r == 0) ? -cfg.band_grip_x : cfg.band_grip_x;
                s.positions(v, 0) = gx;
                s.positions(v, 1) = (c - 0.5 * (s.cols - 1)) * s.spacing;
                s.velocities(v, 0) = 0.0;
                s.velocities(v, 1) = 0.0;
            }
    }
    std::ostringstream os;
    os << "bandage settle did not converge (residual " << res << ", tol " << cfg.settle_tol << ")";
    throw NumericalError(os.str());
}

}  // namespace

ClothState bandage_before(const SimConfig& cfg, const PhysicalParams& params) {
    ClothState s = make_cloth(cfg.rows, cfg.cols, cfg.spacing, params, cfg.node_mass);
    // Tent placement over the cylinder: gripper -> apex -> gripper polyline,
    // rows placed by arc-length fraction so no node starts inside the cylinder.
    Vec3 p1(-cfg.band_grip_x, 0.0, cfg.band_grip_z);
    Vec3 apex(0.0, 0.0, cfg.band_apex_z);
    Vec3 p2(cfg.band_grip_x, 0.0, cfg.band_grip_z);
    double l1 = (apex - p1).norm();
    double l2 = (p2 - apex).norm();
    double total = l1 + l2;
    for (int r = 0; r < cfg.rows; ++r) {
        double arc = total * static_cast<double>(r) / (cfg.rows - 1);
        Vec3 p = arc <= l1 ? Vec3(p1 + (arc / l1) * (apex - p1))
                           : Vec3(apex + ((arc - l1) / l2) * (p2 - apex));
        for (int c = 0; c < cfg.cols; ++c) {
            int v = s.index(r, c);
            s.positions(v, 0) = p.x();
            s.positions(v, 1) = (c - 0.5 * (cfg.cols - 1)) * cfg.spacing;
            s.positions(v, 2) = p.z();
        }
    }
    return bandage_settle(cfg, std::move(s), 0.0);
}

ClothState bandage_apply(const SimConfig& cfg, const ClothState& before, double a) {
    require(a >= 0.0 && a <= cfg.fmax, "bandage: action outside [0, fmax]");
    return bandage_settle(cfg, before, a);
}

EnvOutcome run_bandage(const SimConfig& cfg, const PhysicalParams& params, double a) {
    EnvOutcome out;
    out.state_before = bandage_before(cfg, params);
    out.state_after = bandage_apply(cfg, out.state_before, a);
    out.before = extract_graph(cfg, out.state_before);
    out.after = extract_graph(cfg, out.state_after);
    return out;
}

double cylinder_penetration(const SimConfig& cfg, const ClothState& s) {
    double pen = 0.0;
    for (int v = 0; v < s.n(); ++v) {
        double d = std::hypot(s.positions(v, 0), s.positions(v, 2) - cfg.cyl_z);
        pen = std::max(pen, cfg.cyl_radius - d);
    }
    return std::max(pen, 0.0);
}

double bandage_residual(const SimConfig& cfg, const ClothState& s, double a) {
    return bandage_residual_impl(cfg, s, a);
}

// ------------------------------------------------------------------ lifting

namespace {

struct LiftingForces {
    Points cloth;  // contact forces on cloth nodes
    Vec3 sphere;   // gravity + contacts on the sphere
};

LiftingForces lifting_external(const SimConfig& cfg, const LiftingWorld& w) {
    LiftingForces lf;
    lf.cloth = Points::Zero(w.cloth.n(), 3);
    lf.sphere = Vec3(0.0, 0.0, cfg.sphere_mass * cfg.gravity_z);
    for (int v = 0; v < w.cloth.n(); ++v) {
        Vec3 p = w.cloth.positions.row(v);
        Vec3 d = p - w.sphere_pos;
        double dist = d.norm();
        if (dist < cfg.sphere_radius && dist > 1e-12) {
            Vec3 f = (cfg.contact_stiffness * (cfg.sphere_radius - dist) / dist) * d;
            lf.cloth.row(v) += f;
            lf.sphere -= f;
        }
        if (p.z() < cfg.table_z)
            lf.cloth(v, 2) += cfg.contact_stiffness * (cfg.table_z - p.z());
    }
    double bottom = w.sphere_pos.z() - cfg.sphere_radius;
    if (bottom < cfg.table_z) lf.sphere.z() += cfg.contact_stiffness * (cfg.table_z - bottom);
    return lf;
}

double lifting_residual_impl(const SimConfig& cfg, const LiftingWorld& w) {
    LiftingForces lf = lifting_external(cfg, w);
    ClothState tmp = w.cloth;
    tmp.velocities.setZero();
    Points f = node_forces(tmp, cfg.gravity(), 0.0, &lf.cloth);
    double res = lf.sphere.norm();
    for (int v = 0; v < w.cloth.n(); ++v)
        if (!w.cloth.fixed[v]) res = std::max(res, f.row(v).norm());
    return res;
}

void lifting_step(const SimConfig& cfg, LiftingWorld& w, double damping) {
    LiftingForces lf = lifting_external(cfg, w);
    StepOptions stepo = cfg.step_options(damping);
    step_mut(w.cloth, stepo, &lf.cloth);
    double sphere_damping = damping * cfg.sphere_mass / cfg.node_mass;
    Vec3 f = lf.sphere - sphere_damping * w.sphere_vel;
    w.sphere_vel += (cfg.dt / cfg.sphere_mass) * f;
    w.sphere_pos += cfg.dt * w.sphere_vel;
    if (!w.sphere_pos.allFinite()) throw NumericalError("lifting simulation diverged (sphere)");
}

LiftingWorld lifting_settle(const SimConfig& cfg, LiftingWorld w) {
    const int check_every = 20;
    double res = 0.0;
    for (int it = 0; it <= cfg.settle_max_steps; ++it) {
        if (it % check_every == 0) {
            res = lifting_residual_impl(cfg, w);
            if (res < cfg.settle_tol) {
                w.cloth.velocities.setZero();
                w.sphere_vel.setZero();
                return w;
            }
        }
        if (it == cfg.settle_max_steps) break;
        lifting_step(cfg, w, cfg.settle_damping);
    }
    std::ostringstream os;
    os << "lifting settle did not converge (residual " << res << ", tol " << cfg.settle_tol << ")";
    throw NumericalError(os.str());
}

}  // namespace

LiftingWorld lifting_before(const SimConfig& cfg, const PhysicalParams& params) {
    LiftingWorld w;
    w.cloth = make_cloth(cfg.rows, cfg.cols, cfg.spacing, params, cfg.node_mass);
    w.cloth.positions.col(2).array() += cfg.lift_hold_z;
    for (int c = 0; c < cfg.cols; ++c) {
        w.cloth.fixed[w.cloth.index(0, c)] = 1;
        w.cloth.fixed[w.cloth.index(cfg.rows - 1, c)] = 1;
    }
    w.sphere_pos = Vec3(0.0, 0.0, cfg.lift_hold_z + cfg.sphere_radius + 0.01);
    return lifting_settle(cfg, std::move(w));
}

LiftingWorld lifting_apply(const SimConfig& cfg, LiftingWorld w, double a) {
    require(a >= 0.0 && a <= cfg.dmax, "lifting: action outside [0, dmax]");
    if (a > 0.0) {
        double per_step = cfg.lift_speed * cfg.dt;
        double lifted = 0.0;
        while (lifted < a) {
            double d = std::min(per_step, a - lifted);
            for (int c = 0; c < cfg.cols; ++c) {
                w.cloth.positions(w.cloth.index(0, c), 2) += d;
                w.cloth.positions(w.cloth.index(cfg.rows - 1, c), 2) += d;
            }
            lifted += d;
            lifting_step(cfg, w, cfg.settle_damping);
        }
    }
    return lifting_settle(cfg, std::move(w));
}

EnvOutcome run_lifting(const SimConfig& cfg, const PhysicalParams& params, double a) {
    EnvOutcome out;
    LiftingWorld before = lifting_before(cfg, params);
    LiftingWorld after = lifting_apply(cfg, before, a);
    out.before = extract_graph(cfg, before.cloth);
    out.after = extract_graph(cfg, after.cloth);
    out.state_before = std::move(before.cloth);
    out.state_after = std::move(after.cloth);
    out.sphere_before = before.sphere_pos;
    out.sphere_after = after.sphere_pos;
    return out;
}

double lifting_residual(const SimConfig& cfg, const LiftingWorld& w) {
    return lifting_residual_impl(cfg, w);
}

}  // namespace clothdyn::sim
