#pragma once

#include "clothdyn/common.hpp"

#include <functional>
#include <vector>

namespace clothdyn::sim {

struct PhysicalParams {
    double stiffness = 10.0;  // structural/shear spring constant
    double bending = 0.01;    // bending (distance-2) spring constant
};

enum class SpringKind { Structural, Shear, Bending };

struct Spring {
    int i;
    int j;
    double rest;
    double k;
    SpringKind kind;
};

struct ClothState {
    int rows = 0;
    int cols = 0;
    double spacing = 0.0;
    double node_mass = 0.01;
    PhysicalParams params;
    Points positions;   // N x 3
    Points velocities;  // N x 3
    std::vector<Spring> springs;
    std::vector<char> fixed;  // fully prescribed nodes; zero velocity

    int n() const { return rows * cols; }
    int index(int r, int c) const { return r * cols + c; }
};

// Grid in the xy plane at z=0: structural springs between 4-neighbors and
// shear springs between diagonal neighbors carry params.stiffness; bending
// springs between straight distance-2 neighbors carry params.bending. Rest
// lengths equal the geometric distances, so a flat cloth is force-free.
ClothState make_cloth(int rows, int cols, double spacing, const PhysicalParams& params,
                      double node_mass = 0.01);

// Spring + gravity + external - damping*velocity force per node.
Points node_forces(const ClothState& s, const Vec3& gravity, double damping,
                   const Points* external = nullptr);

// Max free-node force norm with velocity terms excluded (the settle residual).
double force_residual(const ClothState& s, const Vec3& gravity, const Points* external = nullptr);

struct StepOptions {
    double dt = 1e-3;
    Vec3 gravity{0.0, 0.0, -9.81};
    double damping = 0.05;
};

// Semi-implicit Euler. Fixed nodes ignore forces and keep zero velocity;
// their trajectories are prescribed by the caller between steps. Throws
// NumericalError naming dt and the spring constants if positions diverge.
void step_mut(ClothState& s, const StepOptions& opt, const Points* external = nullptr);
ClothState step(const ClothState& s, const StepOptions& opt, const Points* external = nullptr);

struct SettleOptions {
    double tol = 1e-4;
    int max_steps = 400000;
    StepOptions step;
};

using ExternalForceFn = std::function<void(const ClothState&, Points&)>;

// Damped stepping until the force residual drops below tol; returns the
// equilibrium with velocities zeroed. A state that already meets tol is
// returned after a single residual check. Throws NumericalError with the
// final residual when max_steps is exceeded.
ClothState settle(ClothState s, const SettleOptions& opt, const ExternalForceFn& external = nullptr);

// Kinetic + elastic + gravitational potential energy.
double mechanical_energy(const ClothState& s, const Vec3& gravity);

// Savitzky-Golay smoothing: each output sample is the value at its own
// position of the least-squares polynomial fit over the centered window;
// windows are truncated at the edges.
std::vector<double> savgol_smooth(const std::vector<double>& signal, int window = 21, int order = 3);

}  // namespace clothdyn::sim
