#include "clothdyn/sim.hpp"

#include <cmath>
#include <sstream>

namespace clothdyn::sim {

ClothState make_cloth(int rows, int cols, double spacing, const PhysicalParams& params,
                      double node_mass) {
    require(rows >= 2 && cols >= 2, "make_cloth: rows and cols must be >= 2");
    require(spacing > 0.0, "make_cloth: spacing must be positive");
    ClothState s;
    s.rows = rows;
    s.cols = cols;
    s.spacing = spacing;
    s.node_mass = node_mass;
    s.params = params;
    int n = rows * cols;
    s.positions.resize(n, 3);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            s.positions.row(s.index(r, c)) = Vec3((r - 0.5 * (rows - 1)) * spacing,
                                                  (c - 0.5 * (cols - 1)) * spacing, 0.0);
    s.velocities = Points::Zero(n, 3);
    s.fixed.assign(n, 0);

    auto add = [&](int i, int j, double k, SpringKind kind) {
        double rest = (s.positions.row(i) - s.positions.row(j)).norm();
        s.springs.push_back(Spring{i, j, rest, k, kind});
    };
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            int v = s.index(r, c);
            if (c + 1 < cols) add(v, s.index(r, c + 1), params.stiffness, SpringKind::Structural);
            if (r + 1 < rows) add(v, s.index(r + 1, c), params.stiffness, SpringKind::Structural);
            if (r + 1 < rows && c + 1 < cols) add(v, s.index(r + 1, c + 1), params.stiffness, SpringKind::Shear);
            if (r + 1 < rows && c > 0) add(v, s.index(r + 1, c - 1), params.stiffness, SpringKind::Shear);
            if (c + 2 < cols) add(v, s.index(r, c + 2), params.bending, SpringKind::Bending);
            if (r + 2 < rows) add(v, s.index(r + 2, c), params.bending, SpringKind::Bending);
        }
    return s;
}

namespace {

void accumulate_spring_gravity(const ClothState& s, const Vec3& gravity, Points& f) {
    for (const Spring& sp : s.springs) {
        Vec3 d = s.positions.row(sp.j) - s.positions.row(sp.i);
        double len = d.norm();
        if (len < 1e-300) continue;
        Vec3 force = (sp.k * (len - sp.rest) / len) * d;  // pulls i toward j when stretched
        f.row(sp.i) += force;
        f.row(sp.j) -= force;
    }
    f.col(0).array() += s.node_mass * gravity.x();
    f.col(1).array() += s.node_mass * gravity.y();
    f.col(2).array() += s.node_mass * gravity.z();
}

}  // namespace

Points node_forces(const ClothState& s, const Vec3& gravity, double damping, const Points* external) {
    Points f = Points::Zero(s.n(), 3);
    accumulate_spring_gravity(s, gravity, f);
    if (external != nullptr) f += *external;
    if (damping != 0.0) f -= damping * s.velocities;
    return f;
}

double force_residual(const ClothState& s, const Vec3& gravity, const Points* external) {
    Points f = Points::Zero(s.n(), 3);
    accumulate_spring_gravity(s, gravity, f);
    if (external != nullptr) f += *external;
    double res = 0.0;
    for (int v = 0; v < s.n(); ++v)
        if (!s.fixed[v]) res = std::max(res, f.row(v).norm());
    return res;
}

void step_mut(ClothState& s, const StepOptions& opt, const Points* external) {
    require(opt.dt > 0.0, "step: dt must be positive");
    require(opt.damping >= 0.0 && opt.damping < 1.0, "step: damping must lie in [0,1)");
    Points f = node_forces(s, opt.gravity, opt.damping, external);
    double inv_m = opt.dt / s.node_mass;
    for (int v = 0; v < s.n(); ++v) {
        if (s.fixed[v]) {
            s.velocities.row(v).setZero();
            continue;
        }
        s.velocities.row(v) += inv_m * f.row(v);
        s.positions.row(v) += opt.dt * s.velocities.row(v);
    }
    if (!s.positions.allFinite()) {
        std::ostringstream os;
        os << "simulation diverged (dt=" << opt.dt << ", stiffness=" << s.params.stiffness
           << ", bending=" << s.params.bending << ")";
        throw NumericalError(os.str());
    }
}

ClothState step(const ClothState& s, const StepOptions& opt, const Points* external) {
    ClothState out = s;
    step_mut(out, opt, external);
    return out;
}

ClothState settle(ClothState s, const SettleOptions& opt, const ExternalForceFn& external) {
    require(opt.tol > 0.0, "settle: tol must be positive");
    Points ext(s.n(), 3);
    double res = 0.0;
    for (int it = 0; it <= opt.max_steps; ++it) {
        const Points* ext_ptr = nullptr;
        if (external) {
            ext.setZero();
            external(s, ext);
            ext_ptr = &ext;
        }
        res = force_residual(s, opt.step.gravity, ext_ptr);
        if (res < opt.tol) {
            s.velocities.setZero();
            return s;
        }
        if (it == opt.max_steps) break;
        step_mut(s, opt.step, ext_ptr);
    }
    std::ostringstream os;
    os << "settle did not converge after " << opt.max_steps << " steps (residual " << res
       << ", tol " << opt.tol << ")";
    throw NumericalError(os.str());
}

double mechanical_energy(const ClothState& s, const Vec3& gravity) {
    double e = 0.0;
    for (int v = 0; v < s.n(); ++v) {
        e += 0.5 * s.node_mass * s.velocities.row(v).squaredNorm();
        e -= s.node_mass * gravity.dot(s.positions.row(v));
    }
    for (const Spring& sp : s.springs) {
        double len = (s.positions.row(sp.j) - s.positions.row(sp.i)).norm();
        e += 0.5 * sp.k * (len - sp.rest) * (len - sp.rest);
    }
    return e;
}

std::vector<double> savgol_smooth(const std::vector<double>& signal, int window, int order) {
    int n = static_cast<int>(signal.size());
    require(window > 0 && window % 2 == 1, "savgol_smooth: window must be odd and positive");
    require(order >= 0 && order < window, "savgol_smooth: order must be < window");
    require(n >= window, "savgol_smooth: signal shorter than window");
    int half = window / 2;
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) {
        int lo = std::max(0, i - half);
        int hi = std::min(n - 1, i + half);
        int m = hi - lo + 1;
        Mat a(m, order + 1);
        Vec y(m);
        for (int j = 0; j < m; ++j) {
            double t = static_cast<double>(lo + j - i);
            double p = 1.0;
            for (int c = 0; c <= order; ++c) {
                a(j, c) = p;
                p *= t;
            }
            y(j) = signal[lo + j];
        }
        Vec coeff = a.colPivHouseholderQr().solve(y);
        out[i] = coeff(0);  // polynomial value at the sample's own position
    }
    return out;
}

}  // namespace clothdyn::sim
