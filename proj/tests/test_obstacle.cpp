#include "fbp/obstacle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace fbp;

namespace {

/// Closed-form column for phi0 - phi1 = c, rho0 = 1, eps: parabola between the
/// free boundaries -c - eps/2 and -c + eps/2.
double quad_column(double z, double c, double eps) {
    const double w = z + c;
    if (w <= -eps / 2) return 0.0;
    if (w >= eps / 2) return w;
    return w * w / (2 * eps) + w / 2 + eps / 8;
}

ScalarField smooth(const TorusGrid& g, double amp, double phase) {
    const double l1 = stencil_symbol(1, g.n());
    return ScalarField::sample(g, [&](double x, double y) {
        return amp / l1 * (std::cos(two_pi * x + phase) + (g.dim() == 2 ? 0.5 * std::sin(two_pi * y - phase) : 0.0));
    });
}

} // namespace

TEST(SlabGrid, Validation) {
    TorusGrid g(1, 8);
    EXPECT_THROW(SlabGrid(g, 0.0, 16), Error);
    EXPECT_THROW(SlabGrid(g, 1.0, 6), Error);
    EXPECT_THROW(SlabGrid(g, 1.0, 9), Error);
    const SlabGrid s(g, 1.0, 16);
    EXPECT_DOUBLE_EQ(s.z(8), 0.0);
    EXPECT_DOUBLE_EQ(s.k(), 0.125);
}

TEST(ObstacleL, Examples) {
    TorusGrid g(1, 8);
    const SlabGrid s(g, 1.0, 16);
    const Potential zero{ScalarField(g)};
    const auto L = obstacle_L(zero, zero, s);
    for (int j = 0; j <= 16; ++j) EXPECT_DOUBLE_EQ(L.at(3, j), std::max(s.z(j), 0.0));

    auto bump = ScalarField(g);
    bump[2] = 0.003;
    const Potential p0{bump};
    const auto L2 = obstacle_L(p0, zero, s);
    for (int j = 0; j <= 16; ++j) {
        EXPECT_DOUBLE_EQ(L2.at(2, j), std::max(0.003 + s.z(j), 0.0));
        if (j > 0) {
            EXPECT_GE(L2.at(2, j), L2.at(2, j - 1));
        }
    }
}

TEST(ObstacleProblem, Validation) {
    TorusGrid g(1, 8);
    const SlabGrid s(g, 1.0, 16);
    const Potential zero{ScalarField(g)};
    const auto L = obstacle_L(zero, zero, s);
    try {
        ObstacleProblem(L, ScalarField(g, 2.0), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotNormalized);
    }
    auto neg = ScalarField(g, 1.0);
    neg[0] = -1.0;
    neg[1] = 3.0;
    try {
        ObstacleProblem(L, neg, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotPositive);
    }
    EXPECT_THROW(ObstacleProblem(L, ScalarField(g, 1.0), 0.0), Error);
    EXPECT_THROW(ObstacleProblem(SlabField(s, 1.0), ScalarField(g, 1.0), 1.0), Error);
}

TEST(EnergyEM, Examples) {
    TorusGrid g(2, 8);
    for (double M : {0.5, 1.0, 2.0})
        for (double eps : {0.5, 1.0, 3.0}) {
            const SlabGrid s(g, M, 16);
            const Potential zero{ScalarField(g)};
            const auto p = ObstacleProblem::from_potentials(zero, zero, s, eps);
            EXPECT_NEAR(energy_EM(SlabField(s), p), 0.0, 1e-15);
            EXPECT_NEAR(energy_EM(SlabField::sample(s, [](double, double, double z) { return z; }), p), eps * M, 1e-12);
            EXPECT_NEAR(energy_EM(p.L(), p), eps * M / 2 + M * M / 2, 1e-12);
        }
}

TEST(EnergyEM, GradientIsEulerLagrangeResidual) {
    // dE/dU at an interior node = cell volume * k * (Delta_eps U + rho0): pins the eps/2 coefficient.
    TorusGrid g(2, 8);
    const SlabGrid s(g, 1.0, 16);
    const Potential p0{smooth(g, 0.3, 0.2)}, p1{smooth(g, 0.3, 1.4)};
    const auto p = ObstacleProblem::from_potentials(p0, p1, s, 0.7);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    SlabField U(s);
    for (double& v : U.values()) v = u(rng);
    const double scale = g.cell_volume() * s.k();
    for (auto [i, j] : {std::pair<std::size_t, int>{0, 1}, {13, 8}, {63, 15}}) {
        const double delta = 1e-4;
        SlabField up = U, dn = U;
        up.at(i, j) += delta;
        dn.at(i, j) -= delta;
        const double fd = (energy_EM(up, p) - energy_EM(dn, p)) / (2 * delta);
        EXPECT_NEAR(fd / scale, el_residual_at(U, p, i, j), 1e-6);
    }
}

TEST(SolvePsor, XIndependentClosedForm) {
    TorusGrid g(1, 8);
    const SlabGrid s(g, 1.0, 64);
    const Potential zero{ScalarField(g)};
    const auto p = ObstacleProblem::from_potentials(zero, zero, s, 1.0);
    const auto r = solve_psor(p);
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        for (int j = 0; j <= 64; ++j) err = std::max(err, std::abs(r.U.at(i, j) - quad_column(s.z(j), 0.0, 1.0)));
    EXPECT_LT(err, 1e-9);
    const auto as = active_set(r.U, p.L(), 1e-9);
    EXPECT_NEAR(as.H0.min(), -0.5, s.k());
    EXPECT_NEAR(as.H1.max(), 0.5, s.k());
}

TEST(SolvePsor, SecondOrderAgainstShiftedClosedForm) {
    // phi0 - phi1 = c constant moves the free boundaries off the nodes.
    const double c = 0.0123, eps = 0.8;
    auto err = [&](int mz) {
        TorusGrid g(1, 4);
        const SlabGrid s(g, 1.0, mz);
        const SlabField L = obstacle_L(Potential(ScalarField(g, c)), Potential(ScalarField(g)), s);
        const ObstacleProblem p(L, ScalarField(g, 1.0), eps);
        const auto r = solve_psor(p);
        double e = 0.0;
        for (int j = 0; j <= mz; ++j) e = std::max(e, std::abs(r.U.at(0, j) - quad_column(s.z(j), c, eps)));
        return e;
    };
    const double e1 = err(32), e2 = err(64), e3 = err(128);
    EXPECT_LT(e3, 1e-4);
    EXPECT_GT(std::log2(e1 / e2), 1.8);
    EXPECT_GT(std::log2(e2 / e3), 1.8);
}

TEST(SolvePsor, ComplementarityAndMinimality) {
    TorusGrid g(2, 8);
    const SlabGrid s(g, 1.0, 32);
    const Potential p0{smooth(g, 0.4, 0.3)}, p1{smooth(g, 0.4, 2.0)};
    const auto p = ObstacleProblem::from_potentials(p0, p1, s, 1.0);
    PsorOptions opt;
    opt.record_energy = true;
    opt.nested = false;
    const auto r = solve_psor(p, opt);
    const auto c = complementarity(r.U, p);
    EXPECT_GE(c.min_U_minus_L, 0.0);
    EXPECT_GE(c.min_residual, -opt.tol);
    EXPECT_LE(c.max_complementarity, opt.tol);
    for (std::size_t n = 1; n < r.energy.size(); ++n) EXPECT_LE(r.energy[n], r.energy[n - 1] + 1e-12);

    const double e0 = energy_EM(r.U, p);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (int trial = 0; trial < 100; ++trial) {
        SlabField V = r.U;
        for (std::size_t i = 0; i < g.size(); ++i)
            for (int j = 1; j < s.mz(); ++j) V.at(i, j) = std::max(p.L().at(i, j), V.at(i, j) + u(rng));
        EXPECT_GE(energy_EM(V, p), e0 - 1e-12);
    }
}

TEST(SolvePsor, RelaxationIndependentAndReflectionSymmetric) {
    // phi0 = phi1 gives U(x, -z) = U(x, z) - z.
    TorusGrid g(1, 16);
    const SlabGrid s(g, 1.0, 32);
    const Potential phi{smooth(g, 0.5, 0.7)};
    const auto p = ObstacleProblem::from_potentials(phi, phi, s, 1.0);
    PsorOptions a, b;
    a.omega = 1.2;
    b.omega = 1.8;
    const auto ra = solve_psor(p, a), rb = solve_psor(p, b);
    EXPECT_LT((ra.U - rb.U).max_abs(), 10 * a.tol);
    for (std::size_t i = 0; i < g.size(); ++i)
        for (int j = 0; j <= 32; ++j) EXPECT_NEAR(ra.U.at(i, 32 - j), ra.U.at(i, j) - s.z(j), 1e-9);
    const auto as = active_set(ra.U, p.L(), 1e-9);
    EXPECT_LT((as.H0 + as.H1).max_abs(), 1e-6);
}

TEST(SolvePsor, Errors) {
    TorusGrid g(1, 8);
    const Potential zero{ScalarField(g)};
    const auto tight = ObstacleProblem::from_potentials(zero, zero, SlabGrid(g, 0.5, 32), 1.0);
    try {
        solve_psor(tight);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::FreeBoundaryTouchesSlab);
    }
    const auto p = ObstacleProblem::from_potentials(zero, zero, SlabGrid(g, 1.0, 32), 1.0);
    PsorOptions few;
    few.max_sweeps = 5;
    few.check_every = 5;
    few.nested = false;
    try {
        solve_psor(p, few);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotConverged);
    }
    PsorOptions bad;
    bad.omega = 2.0;
    EXPECT_THROW(solve_psor(p, bad), Error);
}

TEST(ActiveSet, Examples) {
    TorusGrid g(1, 8);
    const SlabGrid s(g, 1.0, 16);
    const Potential zero{ScalarField(g)};
    const auto L = obstacle_L(zero, zero, s);
    const auto none = active_set(L, L, 1e-12);
    for (auto v : none.mask) EXPECT_EQ(v, 0);
    EXPECT_LT((none.H0 - none.H1).max_abs(), 1e-15);
    EXPECT_LT(none.H0.max_abs(), 1e-15);

    SlabField holes = L;
    holes.at(0, 4) += 0.1;
    holes.at(0, 9) += 0.1;
    try {
        active_set(holes, L, 1e-12);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonContiguousActiveSet);
    }
}

TEST(FamilySweep, Examples) {
    TorusGrid g(1, 32);
    const auto lambda = ScalarField::sample(g, [](double x, double) { return 0.1 * std::cos(two_pi * x); });
    const ScalarField rho(g, 1.0);
    const auto sweep = family_sweep(lambda, rho, {-0.5, -0.3, 0.0, 0.3, 0.5});
    ASSERT_EQ(sweep.members.size(), 5u);
    ASSERT_EQ(sweep.difference_quotient.size(), 4u);
    // Below min(lambda) the obstacle is lambda itself.
    EXPECT_LT((sweep.members[0].u - sweep.members[1].u).max_abs(), 1e-9);
    EXPECT_NEAR(sweep.difference_quotient[0], 0.0, 1e-8);
    // Above max(lambda) the constant obstacle z is attained everywhere.
    for (int n : {3, 4}) {
        EXPECT_LT((sweep.members[std::size_t(n)].u - ScalarField(g, sweep.members[std::size_t(n)].z)).max_abs(), 1e-12);
        for (auto v : sweep.members[std::size_t(n)].free_set) EXPECT_EQ(v, 0);
    }
    for (const auto& m : sweep.members) EXPECT_GE((m.u - lambda).min(), -1e-15);

    auto bad = rho;
    bad[0] = 0.0;
    EXPECT_THROW(family_sweep(lambda, bad, {0.0}), Error);
    EXPECT_THROW(family_sweep(lambda, rho, {0.0}, 1e-10, 2), Error);
}
