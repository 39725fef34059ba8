#include "clothdyn/sim.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace clothdyn;
using namespace clothdyn::sim;

namespace {

// Independent spring census: classify all node pairs by grid offset.
struct SpringCensus {
    int structural = 0, shear = 0, bending = 0;
};

SpringCensus census_by_offsets(int rows, int cols) {
    SpringCensus c;
    for (int r1 = 0; r1 < rows; ++r1)
        for (int c1 = 0; c1 < cols; ++c1)
            for (int r2 = r1; r2 < rows; ++r2)
                for (int c2 = 0; c2 < cols; ++c2) {
                    if (r2 == r1 && c2 <= c1) continue;
                    int dr = r2 - r1, dc = std::abs(c2 - c1);
                    if ((dr == 0 && dc == 1) || (dr == 1 && dc == 0)) c.structural++;
                    else if (dr == 1 && dc == 1) c.shear++;
                    else if ((dr == 0 && dc == 2) || (dr == 2 && dc == 0)) c.bending++;
                }
    return c;
}

SpringCensus census_of(const ClothState& s) {
    SpringCensus c;
    for (const Spring& sp : s.springs) {
        if (sp.kind == SpringKind::Structural) c.structural++;
        if (sp.kind == SpringKind::Shear) c.shear++;
        if (sp.kind == SpringKind::Bending) c.bending++;
    }
    return c;
}

// Test-side force summation, written independently of node_forces.
Points oracle_forces(const ClothState& s, const Vec3& gravity) {
    Points f(s.n(), 3);
    for (int v = 0; v < s.n(); ++v) f.row(v) = s.node_mass * gravity;
    for (const Spring& sp : s.springs) {
        Vec3 delta = s.positions.row(sp.i) - s.positions.row(sp.j);
        double len = delta.norm();
        Vec3 dir = delta / len;
        double mag = sp.k * (len - sp.rest);
        f.row(sp.i) -= mag * dir;
        f.row(sp.j) += mag * dir;
    }
    return f;
}

}  // namespace

TEST_CASE("make_cloth spring counts match the pair-enumeration oracle") {
    PhysicalParams p{10.0, 0.5};
    {
        ClothState s = make_cloth(2, 2, 1.0, p);
        SpringCensus got = census_of(s), want = census_by_offsets(2, 2);
        CHECK(got.structural == 4);
        CHECK(got.shear == 2);
        CHECK(got.bending == 0);
        CHECK(got.structural == want.structural);
        CHECK(got.shear == want.shear);
        CHECK(got.bending == want.bending);
    }
    {
        ClothState s = make_cloth(3, 3, 1.0, p);
        SpringCensus got = census_of(s), want = census_by_offsets(3, 3);
        CHECK(got.structural == 12);
        CHECK(got.shear == 8);
        CHECK(got.bending == 6);
        CHECK(got.structural == want.structural);
        CHECK(got.shear == want.shear);
        CHECK(got.bending == want.bending);
    }
    CHECK_THROWS_AS(make_cloth(3, 3, -1.0, p), UsageError);
}

TEST_CASE("flat rest configuration is force-free") {
    ClothState s = make_cloth(5, 4, 0.05, PhysicalParams{46.0, 5.01});
    Points f = node_forces(s, Vec3::Zero(), 0.0);
    CHECK(f.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-node Hooke force is exact") {
    ClothState s = make_cloth(2, 2, 1.0, PhysicalParams{10.0, 0.0});
    s.springs.clear();
    s.springs.push_back(Spring{0, 1, 1.0, 10.0, SpringKind::Structural});
    s.positions.setZero();
    s.positions(1, 1) = 1.5;  // separation 1.5, rest 1.0
    Points f = node_forces(s, Vec3::Zero(), 0.0);
    CHECK(f(0, 1) == doctest::Approx(5.0).epsilon(1e-15));   // toward node 1
    CHECK(f(1, 1) == doctest::Approx(-5.0).epsilon(1e-15));  // toward node 0
    CHECK(f.row(2).norm() == 0.0);
}

TEST_CASE("equilibrium state is unchanged by a step without gravity") {
    ClothState s = make_cloth(4, 4, 0.05, PhysicalParams{28.0, 2.51});
    ClothState stepped = step(s, StepOptions{1e-3, Vec3::Zero(), 0.02});
    CHECK((stepped.positions - s.positions).cwiseAbs().maxCoeff() == 0.0);
    CHECK(stepped.velocities.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("free mass under gravity matches the closed-form recurrence") {
    // v_{n+1} = q v_n + dt*g with q = 1 - dt*c/m; x via the geometric sum.
    ClothState s = make_cloth(2, 2, 1.0, PhysicalParams{1.0, 0.0});
    s.springs.clear();
    double dt = 0.01, c = 0.05, m = s.node_mass, g = -9.81;
    StepOptions opt{dt, Vec3(0, 0, g), c};
    for (int i = 0; i < 100; ++i) step_mut(s, opt);

    double q = 1.0 - dt * c / m;
    double qn = std::pow(q, 100);
    double v_n = dt * g * (1.0 - qn) / (1.0 - q);
    // x_n = x_0 + dt * sum_{k=1..n} v_k, v_k = dt*g*(1-q^k)/(1-q)
    double sum_q = (q - std::pow(q, 101)) / (1.0 - q);
    double x_n = dt * (dt * g / (1.0 - q)) * (100.0 - sum_q);
    CHECK(std::abs(s.velocities(0, 2) - v_n) < 1e-10);
    CHECK(std::abs(s.positions(0, 2) - x_n) < 1e-10);
}

TEST_CASE("step preconditions and divergence error") {
    ClothState s = make_cloth(2, 2, 1.0, PhysicalParams{10.0, 0.0});
    CHECK_THROWS_AS(step_mut(s, StepOptions{-1.0, Vec3::Zero(), 0.0}), UsageError);
    CHECK_THROWS_AS(step_mut(s, StepOptions{1e-3, Vec3::Zero(), 1.5}), UsageError);
    s.params = PhysicalParams{123.0, 4.5};
    s.positions(0, 0) = 1e308;
    s.positions(1, 0) = -1e308;
    try {
        for (int i = 0; i < 10; ++i) step_mut(s, StepOptions{1.0, Vec3::Zero(), 0.0});
        FAIL("expected divergence");
    } catch (const NumericalError& e) {
        std::string msg = e.what();
        CHECK(msg.find("123") != std::string::npos);  // stiffness in message
        CHECK(msg.find("dt=1") != std::string::npos);
    }
}

TEST_CASE("settle returns an already-resting state untouched") {
    ClothState s = make_cloth(4, 4, 0.05, PhysicalParams{10.0, 0.01});
    SettleOptions opt{1e-4, 100, StepOptions{1e-3, Vec3::Zero(), 0.1}};
    ClothState out = settle(s, opt);
    CHECK((out.positions - s.positions).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hanging cloth settles below tolerance, verified independently") {
    SettleOptions opt{1e-4, 400000, StepOptions{1e-3, Vec3(0, 0, -1.0), 0.1}};
    ClothState soft = make_cloth(8, 8, 0.05, PhysicalParams{10.0, 0.01});
    ClothState stiff = make_cloth(8, 8, 0.05, PhysicalParams{46.0, 0.01});
    for (int c = 0; c < 8; ++c) {
        soft.fixed[c] = 1;  // top row held
        stiff.fixed[c] = 1;
    }
    soft = settle(std::move(soft), opt);
    stiff = settle(std::move(stiff), opt);

    Points f = oracle_forces(soft, Vec3(0, 0, -1.0));
    double res = 0.0;
    for (int v = 0; v < soft.n(); ++v)
        if (!soft.fixed[v]) res = std::max(res, f.row(v).norm());
    CHECK(res < 1e-4);

    // stiffer cloth sags strictly less
    auto sag = [](const ClothState& s) {
        double base = s.positions(0, 2);
        return base - s.positions.col(2).minCoeff();
    };
    CHECK(sag(stiff) < sag(soft));
}

TEST_CASE("settle reports non-convergence with the final residual") {
    ClothState s = make_cloth(4, 4, 0.05, PhysicalParams{10.0, 0.01});
    for (int c = 0; c < 4; ++c) s.fixed[c] = 1;
    SettleOptions opt{1e-12, 5, StepOptions{1e-3, Vec3(0, 0, -1.0), 0.1}};
    try {
        settle(s, opt);
        FAIL("expected non-convergence");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("residual") != std::string::npos);
    }
}

TEST_CASE("mechanical energy is non-increasing under damping with no driving") {
    // production dt and damping, stiffest cloth, released from flat
    PhysicalParams p{46.0, 5.01};
    ClothState s = make_cloth(8, 8, 0.05, p);
    for (int c = 0; c < 8; ++c) s.fixed[c] = 1;
    StepOptions opt{1e-3, Vec3(0, 0, -1.0), 0.02};
    double prev = mechanical_energy(s, opt.gravity);
    for (int i = 0; i < 10000; ++i) {
        step_mut(s, opt);
        double e = mechanical_energy(s, opt.gravity);
        REQUIRE(e <= prev + 1e-12 * std::max(1.0, std::abs(prev)));
        prev = e;
    }
}

TEST_CASE("fixed nodes never deviate from their prescribed positions") {
    ClothState s = make_cloth(6, 6, 0.05, PhysicalParams{28.0, 2.51});
    for (int c = 0; c < 6; ++c) s.fixed[c] = 1;
    Points held = s.positions.topRows(6);
    StepOptions opt{1e-3, Vec3(0, 0, -1.0), 0.02};
    for (int i = 0; i < 500; ++i) step_mut(s, opt);
    CHECK((s.positions.topRows(6) - held).cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.velocities.topRows(6).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identical inputs give bit-identical trajectories") {
    auto run = [] {
        ClothState s = make_cloth(8, 8, 0.05, PhysicalParams{19.0, 1.26});
        for (int c = 0; c < 8; ++c) s.fixed[c] = 1;
        StepOptions opt{1e-3, Vec3(0, 0, -1.0), 0.02};
        for (int i = 0; i < 2000; ++i) step_mut(s, opt);
        return s.positions;
    };
    Points a = run(), b = run();
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}

// --------------------------------------------------------------- Savitzky-Golay

TEST_CASE("savgol reproduces a cubic exactly") {
    std::vector<double> sig(60);
    for (int i = 0; i < 60; ++i) {
        double t = 0.1 * i - 3.0;
        sig[i] = t * t * t - 2.0 * t;
    }
    std::vector<double> out = savgol_smooth(sig, 21, 3);
    for (int i = 0; i < 60; ++i) CHECK(std::abs(out[i] - sig[i]) < 1e-9);
}

TEST_CASE("savgol leaves a constant signal unchanged") {
    std::vector<double> sig(40, 3.25);
    std::vector<double> out = savgol_smooth(sig, 21, 3);
    for (double v : out) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("savgol interior samples match a normal-equations oracle") {
    std::mt19937_64 rng(11);
    std::vector<double> sig(80);
    for (double& v : sig) v = 2.0 * uniform01(rng) - 1.0;
    std::vector<double> out = savgol_smooth(sig, 21, 3);

    // independent per-window solve via explicit normal equations
    for (int i = 10; i < 70; ++i) {
        Eigen::Matrix4d ata = Eigen::Matrix4d::Zero();
        Eigen::Vector4d aty = Eigen::Vector4d::Zero();
        for (int j = -10; j <= 10; ++j) {
            Eigen::Vector4d basis;
            double p = 1.0;
            for (int c = 0; c < 4; ++c) {
                basis(c) = p;
                p *= static_cast<double>(j);
            }
            ata += basis * basis.transpose();
            aty += basis * sig[i + j];
        }
        Eigen::Vector4d coeff = ata.ldlt().solve(aty);
        CHECK(std::abs(out[i] - coeff(0)) < 1e-8);
    }
}

TEST_CASE("savgol argument checks") {
    std::vector<double> sig(10, 1.0);
    CHECK_THROWS_AS(savgol_smooth(sig, 21, 3), UsageError);   // too short
    sig.resize(30, 1.0);
    CHECK_THROWS_AS(savgol_smooth(sig, 20, 3), UsageError);   // even window
    CHECK_THROWS_AS(savgol_smooth(sig, 21, 21), UsageError);  // order >= window
}
