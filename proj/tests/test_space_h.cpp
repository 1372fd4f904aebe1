#include "fbp/space_h.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace fbp;

namespace {

/// Smooth random field of low modes; |Lap f| <= amp.
ScalarField random_smooth(const TorusGrid& g, std::mt19937_64& rng, double amp, int kmax = 3) {
    std::uniform_real_distribution<double> u(-1.0, 1.0), ph(0.0, two_pi);
    const int modes = g.dim() == 2 ? kmax * (2 * kmax + 1) + kmax : kmax;
    ScalarField f(g);
    for (int k1 = 0; k1 <= kmax; ++k1)
        for (int k2 = (g.dim() == 2 ? -kmax : 0); k2 <= (g.dim() == 2 ? kmax : 0); ++k2) {
            if (k1 == 0 && k2 <= 0) continue;
            const double lam = stencil_symbol(k1, g.n()) + (g.dim() == 2 ? stencil_symbol(k2, g.n()) : 0.0);
            const double a = amp * u(rng) / (lam * modes), p = ph(rng);
            f += ScalarField::sample(g, [&](double x, double y) { return a * std::cos(two_pi * (k1 * x + k2 * y) + p); });
        }
    return f;
}

} // namespace

TEST(Potential, EnforcesAdmissibility) {
    TorusGrid g(1, 16);
    EXPECT_NO_THROW(Potential(ScalarField(g)));
    const auto bad = ScalarField::sample(g, [](double x, double) { return 0.1 * std::cos(two_pi * x); });
    EXPECT_THROW(Potential{bad}, Error);
}

TEST(MetricNorm, Examples) {
    TorusGrid g(1, 16);
    const Potential zero{ScalarField(g)};
    EXPECT_NEAR(metric_norm_sq(zero, ScalarField(g, 1.0)), 1.0, 1e-15);
    const auto c = ScalarField::sample(g, [](double x, double) { return std::cos(two_pi * x); });
    EXPECT_NEAR(metric_norm_sq(zero, c), 0.5, 1e-15);
    std::mt19937_64 rng(1);
    const Potential phi(random_smooth(g, rng, 0.5));
    EXPECT_EQ(metric_norm_sq(phi, ScalarField(g)), 0.0);
    EXPECT_GE(metric_norm_sq(phi, c), phi.margin() * integrate(c * c));
}

TEST(Action, Examples) {
    TorusGrid g(1, 16);
    std::mt19937_64 rng(2);
    const auto phi0 = random_smooth(g, rng, 0.5);
    const auto constant = PathInH::sample(g, 8, [&](double x, double, double) {
        return phi0[g.index(int(std::lround(x * g.n())))];
    });
    EXPECT_NEAR(action(constant, 0.0), 0.0, 1e-15);
    EXPECT_NEAR(action(constant, 1.0), 0.0, 1e-14); // V(phi0) = 0 for mean-zero phi0

    // (eps/2) t (t - 1): kinetic eps^2/24, potential -eps^2/12.
    const int m = 64;
    const auto quad = PathInH::sample(g, m, [](double, double, double t) { return 0.5 * t * (t - 1.0); });
    EXPECT_NEAR(action(quad, 1.0), -1.0 / 24.0, 1.0 / (m * m));
}

TEST(ElResidual, Examples) {
    TorusGrid g(1, 32);
    for (double eps : {0.5, 1.0, 2.0}) {
        const auto p = PathInH::sample(g, 16, [eps](double, double, double t) { return 0.5 * eps * t * (t - 1.0); });
        for (const auto& r : el_residual(p, eps)) EXPECT_LT(r.max_abs(), 1e-10);
    }
    const auto lin = PathInH::sample(g, 16, [](double, double, double t) { return 0.3 * t; });
    for (const auto& r : el_residual(lin, 0.0)) EXPECT_LT(r.max_abs(), 1e-12);

    const auto psi = ScalarField::sample(g, [](double x, double) { return 0.01 * std::sin(two_pi * x); });
    const auto tp = PathInH::sample(g, 16, [](double x, double, double t) { return t * 0.01 * std::sin(two_pi * x); });
    const VectorField gp = gradient(psi);
    const ScalarField expect = -dot(gp, gp);
    for (const auto& r : el_residual(tp, 0.0)) EXPECT_LT((r - expect).max_abs(), 1e-12);
}

TEST(CovariantDerivative, Examples) {
    TorusGrid g(2, 8);
    const auto path = PathInH::sample(g, 8, [](double, double, double) { return 0.0; });
    std::vector<ScalarField> constant(9, ScalarField(g, 2.0));
    for (const auto& d : covariant_derivative(path, constant)) EXPECT_LT(d.max_abs(), 1e-14);

    std::mt19937_64 rng(5);
    const auto a = random_smooth(g, rng, 0.3), b = random_smooth(g, rng, 0.3);
    const auto moving = PathInH::sample(g, 8, [&](double x, double y, double t) {
        const auto i = g.index(int(std::lround(x * 8)), int(std::lround(y * 8)));
        return (1 - t) * a[i] + t * b[i] + t * t;
    });
    std::vector<ScalarField> flat;
    for (int j = 0; j <= 8; ++j) flat.emplace_back(g, std::pow(j / 8.0, 2));
    const auto d = covariant_derivative(moving, flat);
    for (int j = 0; j <= 8; ++j) EXPECT_LT((d[std::size_t(j)] + (-2.0 * j / 8.0)).max_abs(), 1e-12);
}

TEST(CovariantDerivative, MetricCompatibilityConverges) {
    auto defect = [](int n, int m) {
        TorusGrid g(2, n);
        auto phi = [](double x, double y, double t) {
            return 0.004 * std::cos(two_pi * x + t) * std::sin(two_pi * y) + 0.3 * t * t + 0.002 * t * std::cos(two_pi * (x + y));
        };
        const auto path = PathInH::sample(g, m, phi);
        std::vector<ScalarField> psi, chi;
        for (int j = 0; j <= m; ++j) {
            const double t = double(j) / m;
            psi.push_back(ScalarField::sample(g, [t](double x, double y) { return 1.0 + 0.5 * std::sin(two_pi * x + 2 * t) * std::cos(two_pi * y); }));
            chi.push_back(ScalarField::sample(g, [t](double x, double y) { return std::cos(two_pi * (x + y)) * (1 + t) + t * t + std::sin(two_pi * y); }));
        }
        double worst = 0.0;
        for (double v : metric_compatibility_defect(path, psi, chi)) worst = std::max(worst, std::abs(v));
        return worst;
    };
    const double coarse = defect(16, 16), fine = defect(32, 32);
    EXPECT_LT(fine, 1e-2);
    EXPECT_GT(coarse / fine, 3.0);
}

TEST(ForwardFlow, ConstantVelocity) {
    TorusGrid g(1, 16);
    const TrajectoryState s0{ScalarField(g, 0.2), ScalarField(g, 0.7), 0.0};
    const auto traj = forward_flow(s0, 0.0, 1e-2, 100);
    EXPECT_NEAR(traj.back().t, 1.0, 1e-12);
    EXPECT_LT((traj.back().phi - ScalarField(g, 0.9)).max_abs(), 1e-12);

    const auto traj_eps = forward_flow(s0, 1.5, 1e-2, 100);
    EXPECT_LT((traj_eps.back().phi - ScalarField(g, 0.2 + 0.7 + 0.75)).max_abs(), 1e-12);
    EXPECT_LT((traj_eps.back().phi_dot - ScalarField(g, 0.7 + 1.5)).max_abs(), 1e-12);
}

TEST(ForwardFlow, LosesAdmissibilityOnLargeData) {
    // Mode-1 perturbations grow like cosh(2 pi t); this one leaves H well before t = 1.
    TorusGrid g(1, 32);
    const auto lam = stencil_symbol(1, 32);
    const auto phi = ScalarField::sample(g, [lam](double x, double) { return 0.05 / lam * std::cos(two_pi * x); });
    try {
        forward_flow({phi, ScalarField(g), 0.0}, 1.0, 1e-3, 1000);
        FAIL() << "expected AdmissibilityLost";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::AdmissibilityLost);
    }
}

TEST(ForwardFlow, PotentialIsConvexAlongFlow) {
    TorusGrid g(1, 32);
    std::mt19937_64 rng(9);
    const double dt = 1e-3;
    for (double eps : {0.0, 1.0}) {
        const TrajectoryState s0{random_smooth(g, rng, 1e-3), random_smooth(g, rng, 1e-3), 0.0};
        const auto traj = forward_flow(s0, eps, dt, 300);
        for (std::size_t j = 1; j + 1 < traj.size(); ++j) {
            const double dd = potential_V(traj[j + 1].phi) - 2 * potential_V(traj[j].phi) + potential_V(traj[j - 1].phi);
            EXPECT_GE(dd / (dt * dt), -1e-8);
        }
    }
}

TEST(ConservedQuantity, Examples) {
    TorusGrid g(1, 32);
    EXPECT_NEAR(conserved_quantity(ScalarField(g, 0.3), ScalarField(g, 0.2), {1, 0}, 1.0), 0.0, 1e-14);
    const auto [f, lambda] = fourier_eigenpair(g, {2, 0});
    const double c = 0.001;
    EXPECT_NEAR(conserved_quantity(c * f, ScalarField(g), {2, 0}, 1.0), -c * lambda / 2.0, 1e-13);
    EXPECT_THROW(conserved_quantity(ScalarField(g), ScalarField(g), {1, 0}, 0.0), Error);
    EXPECT_THROW(conserved_quantity(ScalarField(g), ScalarField(g), {0, 0}, 1.0), Error);
}

TEST(ConservedQuantity, DriftIsSecondOrderInSpace) {
    // The discrete flow conserves the quantity only up to O(h^2).
    auto drift = [](int n, int k) {
        TorusGrid g(1, n);
        const double lam = stencil_symbol(1, n);
        const TrajectoryState s0{
            ScalarField::sample(g, [lam](double x, double) { return 1e-3 / lam * std::cos(two_pi * x + 0.3); }),
            ScalarField::sample(g, [lam](double x, double) { return 1e-3 / lam * std::sin(two_pi * x + 1.1); }), 0.0};
        const auto traj = forward_flow(s0, 1.0, 1e-3, 100, {.record_every = 100});
        const double q0 = conserved_quantity(traj.front().phi, traj.front().phi_dot, {k, 0}, 1.0);
        const double q1 = conserved_quantity(traj.back().phi, traj.back().phi_dot, {k, 0}, 1.0);
        return std::abs(q1 - q0) / conserved_quantity_scale(traj.front().phi, traj.front().phi_dot, {k, 0}, 1.0);
    };
    for (int k : {1, 2}) {
        const double d32 = drift(32, k), d64 = drift(64, k);
        EXPECT_GT(d32 / d64, 3.0) << "k=" << k;
        EXPECT_LT(d64, 1e-6) << "k=" << k;
    }
}

TEST(Curvature, RejectsOneDimension) {
    TorusGrid g(1, 8);
    const Potential p{ScalarField(g)};
    EXPECT_THROW(curvature_vector(p, ScalarField(g), ScalarField(g)), Error);
    EXPECT_THROW(sectional_curvature(p, ScalarField(g), ScalarField(g)), Error);
}

TEST(Curvature, Examples) {
    TorusGrid g(2, 32);
    const Potential zero{ScalarField(g)};
    const auto a1 = ScalarField::sample(g, [](double x, double) { return std::sin(two_pi * x); });
    const auto b1 = ScalarField::sample(g, [](double x, double) { return std::cos(3 * two_pi * x); });
    EXPECT_LT(curvature_vector(zero, a1, b1).max_abs(), 1e-10);
    EXPECT_NEAR(sectional_curvature(zero, a1, b1), 0.0, 1e-10);

    const auto a = ScalarField::sample(g, [](double x, double) { return std::sin(two_pi * x); });
    const auto b = ScalarField::sample(g, [](double, double y) { return std::sin(two_pi * y); });
    const auto nu = curvature_vector(zero, a, b);
    const double c3 = std::pow(two_pi, 3);
    const auto e0 = ScalarField::sample(g, [c3](double x, double y) { return -c3 * std::cos(two_pi * x) * std::sin(two_pi * y); });
    const auto e1 = ScalarField::sample(g, [c3](double x, double y) { return c3 * std::sin(two_pi * x) * std::cos(two_pi * y); });
    EXPECT_LT(std::max((nu[0] - e0).max_abs(), (nu[1] - e1).max_abs()) / c3, 0.02);

    const auto ca = ScalarField::sample(g, [](double x, double) { return std::cos(two_pi * x); });
    const auto cb = ScalarField::sample(g, [](double, double y) { return std::cos(two_pi * y); });
    // Centered differences scale each derivative by sinc(2 pi h).
    const double k = sectional_curvature(zero, ca, cb);
    const double s = std::sin(two_pi / 32) * 32 / two_pi;
    EXPECT_NEAR(k, -4 * std::pow(M_PI, 4) * std::pow(s, 4), 1e-9);
    EXPECT_NEAR(k / (-4 * std::pow(M_PI, 4)), 1.0, 0.03);
}

TEST(Curvature, AntisymmetricBilinearNonPositive) {
    TorusGrid g(2, 16);
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 1000; ++trial) {
        const Potential phi(random_smooth(g, rng, 0.8, 2));
        const auto a = random_smooth(g, rng, 5.0, 2), b = random_smooth(g, rng, 5.0, 2);
        EXPECT_LE(sectional_curvature(phi, a, b), 0.0);
        if (trial % 50 == 0) {
            const auto c = random_smooth(g, rng, 5.0, 2);
            const auto nab = curvature_vector(phi, a, b);
            EXPECT_LT((curvature_vector(phi, b, a) + nab).max_abs(), 1e-9 * (1 + nab.max_abs()));
            const auto lin = curvature_vector(phi, 2.0 * a + c, b);
            const auto expect = curvature_vector(phi, a, b) + curvature_vector(phi, a, b) + curvature_vector(phi, c, b);
            EXPECT_LT((lin - expect).max_abs(), 1e-9 * (1 + lin.max_abs()));
        }
    }
}

TEST(Curvature, CommutatorMatchesCurvatureVector) {
    auto residual = [](int n, double step) {
        TorusGrid g(2, n);
        const Potential phi(ScalarField::sample(g, [](double x, double y) { return 0.002 * std::cos(two_pi * x + 0.3) * std::cos(two_pi * y); }));
        const auto a = ScalarField::sample(g, [](double x, double y) { return std::sin(two_pi * x) + 0.3 * std::cos(two_pi * y); });
        const auto b = ScalarField::sample(g, [](double x, double y) { return std::sin(two_pi * y) * std::cos(two_pi * x); });
        const auto psi = ScalarField::sample(g, [](double x, double y) { return std::cos(two_pi * (x + 2 * y)); });
        const auto comm = covariant_commutator(phi, a, b, psi, step);
        const auto r = directional(curvature_vector(phi, a, b), psi);
        return (comm - r).max_abs() / r.max_abs();
    };
    const double coarse = residual(32, 2e-3), fine = residual(64, 1e-3);
    EXPECT_LT(fine, 0.02);
    EXPECT_GT(coarse / fine, 3.5);
}

TEST(VectorIdentities, Examples) {
    TorusGrid g(2, 16);
    const auto v = VectorField({ScalarField::sample(g, [](double x, double y) { return std::sin(two_pi * x) * std::cos(two_pi * y); }),
                                ScalarField::sample(g, [](double x, double) { return std::cos(two_pi * x); })});
    const auto f = ScalarField::sample(g, [](double x, double y) { return std::cos(two_pi * (x - y)); });
    const auto same = check_vector_identities(v, v, f);
    EXPECT_LT(same.curl_of_wedge, 1e-12);
    EXPECT_LT(same.curl_of_scaled_wedge, 1e-12);
    const auto cst = check_vector_identities(VectorField::constant(g, {1, 2}), VectorField::constant(g, {-1, 0.5}), ScalarField(g, 3.0));
    EXPECT_LT(cst.curl_of_wedge, 1e-12);
    EXPECT_LT(cst.curl_of_scaled_wedge, 1e-12);
    EXPECT_THROW(check_vector_identities(VectorField::constant(TorusGrid(1, 8), {1, 0}), VectorField::constant(TorusGrid(1, 8), {1, 0}),
                                         ScalarField(TorusGrid(1, 8))),
                 Error);
}

TEST(VectorIdentities, ResidualsRefine) {
    auto res = [](int n) {
        TorusGrid g(2, n);
        const auto v = VectorField({ScalarField::sample(g, [](double x, double y) { return std::sin(two_pi * x) * std::cos(two_pi * y); }),
                                    ScalarField::sample(g, [](double x, double y) { return std::cos(two_pi * x) + std::sin(two_pi * y); })});
        const auto w = VectorField({ScalarField::sample(g, [](double x, double y) { return std::cos(two_pi * (x + y)); }),
                                    ScalarField::sample(g, [](double x, double y) { return std::sin(2 * two_pi * x) * std::cos(two_pi * y); })});
        const auto f = ScalarField::sample(g, [](double x, double y) { return std::cos(two_pi * (x - y)) + std::sin(two_pi * x); });
        return check_vector_identities(v, w, f);
    };
    const auto a = res(16), b = res(32);
    EXPECT_GT(a.curl_of_wedge / b.curl_of_wedge, 2.0);
    EXPECT_GT(a.curl_of_scaled_wedge / b.curl_of_scaled_wedge, 2.0);
}
