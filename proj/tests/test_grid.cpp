#include "fbp/grid.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace fbp;

namespace {

ScalarField random_field(const TorusGrid& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ScalarField f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = u(rng);
    return f;
}

} // namespace

TEST(TorusGrid, RejectsBadSizes) {
    EXPECT_THROW(TorusGrid(1, 3), Error);
    EXPECT_THROW(TorusGrid(1, 5), Error);
    EXPECT_THROW(TorusGrid(3, 8), Error);
    EXPECT_NO_THROW(TorusGrid(2, 4));
}

TEST(ScalarField, RejectsNonFinite) {
    TorusGrid g(1, 4);
    EXPECT_THROW(ScalarField(g, std::vector<double>{0, 1, NAN, 2}), Error);
    EXPECT_THROW(ScalarField(g, std::vector<double>{0, 1}), Error);
}

TEST(Laplacian, ConstantIsZero) {
    TorusGrid g(2, 8);
    EXPECT_LT(laplacian(ScalarField(g, 3.7)).max_abs(), 1e-12);
}

TEST(Laplacian, CosineOnFourNodes) {
    // Stencil by hand: nodes cos = 1, 0, -1, 0; h = 1/4 -> -(0 - 2 + 0) * 16 = 32 at node 0.
    TorusGrid g(1, 4);
    const auto f = ScalarField::sample(g, [](double x, double) { return std::cos(two_pi * x); });
    const auto l = laplacian(f);
    const double expected[4] = {32.0, 0.0, -32.0, 0.0};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(l[std::size_t(i)], expected[i], 1e-12);
}

TEST(Laplacian, TwoDimensionalReducesToOneDimensional) {
    TorusGrid g1(1, 16), g2(2, 16);
    auto prof = [](double x) { return std::sin(two_pi * x) + 0.3 * std::cos(3 * two_pi * x); };
    const auto l1 = laplacian(ScalarField::sample(g1, [&](double x, double) { return prof(x); }));
    const auto l2 = laplacian(ScalarField::sample(g2, [&](double x, double) { return prof(x); }));
    for (std::size_t i = 0; i < l2.size(); ++i) EXPECT_NEAR(l2[i], l1[std::size_t(g2.node(i, 0))], 1e-10);
}

TEST(Laplacian, ZeroMeanAndSelfAdjoint) {
    std::mt19937_64 rng(7);
    for (int d : {1, 2}) {
        TorusGrid g(d, 16);
        for (int trial = 0; trial < 20; ++trial) {
            const auto f = random_field(g, rng), h = random_field(g, rng);
            EXPECT_NEAR(integrate(laplacian(f)), 0.0, 1e-10);
            EXPECT_NEAR(integrate(laplacian(f) * h), integrate(f * laplacian(h)), 1e-9);
        }
    }
}

TEST(Gradient, Examples) {
    TorusGrid g(1, 4);
    EXPECT_LT(gradient(ScalarField(g, 2.0)).max_abs(), 1e-15);
    const auto f = ScalarField::sample(g, [](double x, double) { return std::sin(two_pi * x); });
    const auto df = gradient(f)[0];
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(df[i], 4.0 * std::cos(two_pi * g.coord(i, 0)), 1e-12);

    TorusGrid g2(2, 8);
    const auto f2 = ScalarField::sample(g2, [](double x, double) { return std::sin(two_pi * x); });
    EXPECT_EQ(gradient(f2)[1].max_abs(), 0.0);
}

TEST(Integrate, Examples) {
    for (int d : {1, 2}) {
        TorusGrid g(d, 8);
        EXPECT_NEAR(integrate(ScalarField(g, 1.0)), 1.0, 1e-15);
        for (int k = 1; k < 8; ++k) {
            const auto c = ScalarField::sample(g, [k](double x, double) { return std::cos(two_pi * k * x); });
            EXPECT_NEAR(integrate(c), 0.0, 1e-14);
        }
        const auto c2 = ScalarField::sample(g, [](double x, double) { return std::pow(std::cos(two_pi * x), 2); });
        EXPECT_NEAR(integrate(c2), 0.5, 1e-15);
    }
}

TEST(FourierEigenpair, Eigenvalues) {
    TorusGrid g4(1, 4);
    EXPECT_NEAR(fourier_eigenpair(g4, {1, 0}).lambda, 32.0, 1e-12);
    TorusGrid big(1, 4096);
    EXPECT_NEAR(fourier_eigenpair(big, {1, 0}).lambda, 4 * M_PI * M_PI, 1e-5);
    EXPECT_THROW(fourier_eigenpair(g4, {0, 0}), Error);
    EXPECT_THROW(fourier_eigenpair(TorusGrid(1, 8), {4, 0}), Error);
    EXPECT_THROW(fourier_eigenpair(TorusGrid(2, 8), {1, -4}), Error);
}

TEST(FourierEigenpair, ExactDiscreteEigenvector) {
    // Sample rounding (eps_mach times the trig argument, up to 2 pi |k|) is
    // amplified by the stencil norm 4 d / h^2.
    for (int n : {4, 8, 16, 32, 64, 128, 256, 512}) {
        for (int d : {1, 2}) {
            if (d == 2 && n > 128) continue;
            TorusGrid g(d, n);
            for (std::array<int, 2> k : {std::array<int, 2>{1, 0}, {1, 1}, {n / 2 - 1, 1}}) {
                for (Trig kind : {Trig::Cos, Trig::Sin}) {
                    const auto [f, lambda] = fourier_eigenpair(g, k, kind);
                    const double res = (laplacian(f) - lambda * f).max_abs();
                    const double bound = 4.0 * std::numeric_limits<double>::epsilon() * (4.0 * d * n * n) *
                                         (1.0 + two_pi * (std::abs(k[0]) + std::abs(k[1])));
                    EXPECT_LT(res, bound) << "n=" << n << " d=" << d << " k=" << k[0] << "," << k[1];
                }
            }
        }
    }
}

TEST(SkewGradient, RejectsOneDimension) {
    TorusGrid g(1, 8);
    EXPECT_THROW(skew_gradient(ScalarField(g)), Error);
    EXPECT_THROW(cross_scalar(gradient(ScalarField(g)), gradient(ScalarField(g))), Error);
}

TEST(SkewGradient, Examples) {
    TorusGrid g(2, 8);
    EXPECT_LT(skew_gradient(ScalarField(g, 5.0)).max_abs(), 1e-15);
    const auto s = ScalarField::sample(g, [](double, double y) { return std::sin(two_pi * y); });
    EXPECT_EQ(skew_gradient(s)[1].max_abs(), 0.0);
}

TEST(SkewGradient, ConvergesToSymbolicDerivative) {
    auto err = [](int n) {
        TorusGrid g(2, n);
        const auto s = ScalarField::sample(g, [](double x, double y) { return std::cos(two_pi * x) * std::cos(two_pi * y); });
        const auto v = skew_gradient(s);
        const auto e0 = ScalarField::sample(g, [](double x, double y) { return -two_pi * std::cos(two_pi * x) * std::sin(two_pi * y); });
        const auto e1 = ScalarField::sample(g, [](double x, double y) { return two_pi * std::sin(two_pi * x) * std::cos(two_pi * y); });
        return std::max((v[0] - e0).max_abs(), (v[1] - e1).max_abs());
    };
    const double e16 = err(16), e32 = err(32);
    EXPECT_LT(e32, 0.3);
    EXPECT_NEAR(e16 / e32, 4.0, 0.2);
}

TEST(SkewGradient, DivergenceFree) {
    std::mt19937_64 rng(11);
    TorusGrid g(2, 16);
    for (int trial = 0; trial < 10; ++trial)
        EXPECT_LT(divergence(skew_gradient(random_field(g, rng))).max_abs(), 1e-11);
}

TEST(CrossScalar, Examples) {
    TorusGrid g(2, 8);
    std::mt19937_64 rng(3);
    const VectorField v({random_field(g, rng), random_field(g, rng)});
    EXPECT_EQ(cross_scalar(v, v).max_abs(), 0.0);
    const auto c = cross_scalar(VectorField::constant(g, {1, 0}), VectorField::constant(g, {0, 1}));
    EXPECT_EQ(c.min(), 1.0);
    EXPECT_EQ(c.max(), 1.0);
    const auto a = ScalarField::sample(g, [](double x, double) { return std::sin(two_pi * x); });
    const auto b = ScalarField::sample(g, [](double x, double) { return std::cos(2 * two_pi * x); });
    EXPECT_LT(cross_scalar(gradient(a), gradient(b)).max_abs(), 1e-12);
}

TEST(FilterSmallModes, KeepsDominantModesDropsNoise) {
    TorusGrid g(2, 16);
    auto f = ScalarField::sample(g, [](double x, double y) { return 1.0 + std::cos(two_pi * x) + 0.5 * std::sin(two_pi * 2 * y); });
    auto noisy = f;
    noisy[5] += 1e-17;
    EXPECT_LT((filter_small_modes(noisy, 1e-10) - f).max_abs(), 1e-13);
}
