#pragma once

// Maps between the three formulations: Phi -> U by Legendre transform in t,
// U -> theta = dU/dz, theta -> level sets h_t and fluxes rho_t -> Phi.

#include "fbp/obstacle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace fbp {

/// U(x, z) = max_j (z t_j - Phi(x, t_j) + Phi(x, 0)), the conjugate of the
/// piecewise-linear interpolant in t, by a monotone scan per column.
inline SlabField legendre_phi_to_u(const PathInH& path, const SlabGrid& slab) {
    require(path.grid() == slab.base(), "path and slab use different grids");
    const int m = path.m();
    require(m >= 2, "Legendre transform needs m >= 2");
    const double dt = path.dt();
    const auto& g = slab.base();
    SlabField U(slab);
    std::vector<double> col(std::size_t(m + 1));
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (int j = 0; j <= m; ++j) col[std::size_t(j)] = path[j][i];
        for (int j = 1; j < m; ++j) {
            const double dd = col[std::size_t(j + 1)] - 2.0 * col[std::size_t(j)] + col[std::size_t(j - 1)];
            if (!(dd > 0.0))
                throw Error(ErrorKind::NotStrictlyConvexInT,
                            "column " + std::to_string(i) + ", t = " + std::to_string(j * dt));
        }
        const double s_lo = (col[1] - col[0]) / dt, s_hi = (col[std::size_t(m)] - col[std::size_t(m - 1)]) / dt;
        if (!(std::max(std::abs(s_lo), std::abs(s_hi)) < slab.M()))
            throw Error(ErrorKind::SlabTooSmall, "|dPhi/dt| reaches " +
                                                     std::to_string(std::max(std::abs(s_lo), std::abs(s_hi))) +
                                                     " >= M = " + std::to_string(slab.M()));
        int best = 0;
        for (int jz = 0; jz <= slab.mz(); ++jz) {
            const double z = slab.z(jz);
            auto val = [&](int j) { return z * j * dt - col[std::size_t(j)]; };
            while (best < m && val(best + 1) >= val(best)) ++best;
            U.at(i, jz) = val(best) + col[0];
        }
    }
    return U;
}

/// theta = dU/dz with the free set it was computed on.
struct ThetaField {
    SlabField theta;
    std::vector<std::uint8_t> mask;
};

namespace detail {

/// First and last free node of column i, or {-1, -1}.
inline std::pair<int, int> free_range(const std::vector<std::uint8_t>& mask, const SlabGrid& s, std::size_t i) {
    int a = -1, b = -1;
    for (int j = 0; j <= s.mz(); ++j)
        if (mask[s.index(i, j)]) {
            if (a < 0) a = j;
            b = j;
        }
    return {a, b};
}

/// theta continued linearly past the free range of each column, so that
/// difference stencils near the free boundary see a smooth function.
inline SlabField extend_theta(const ThetaField& th) {
    const auto& s = th.theta.slab();
    SlabField e = th.theta;
    for (std::size_t i = 0; i < s.base().size(); ++i) {
        const auto [a, b] = free_range(th.mask, s, i);
        require(a >= 0 && b - a >= 2, "column " + std::to_string(i) + " has fewer than three free nodes; refine m_z");
        const double lo = th.theta.at(i, a + 1) - th.theta.at(i, a);
        const double hi = th.theta.at(i, b) - th.theta.at(i, b - 1);
        for (int j = 0; j < a; ++j) e.at(i, j) = th.theta.at(i, a) - lo * (a - j);
        for (int j = b + 1; j <= s.mz(); ++j) e.at(i, j) = th.theta.at(i, b) + hi * (j - b);
    }
    return e;
}

/// Centred z- and x-derivatives of a slab field (one-sided second order at the caps).
struct SlabGradient {
    SlabField dz;
    std::vector<SlabField> dx;
};

inline SlabGradient slab_gradient(const SlabField& f) {
    const auto& s = f.slab();
    const auto& g = s.base();
    SlabGradient r{SlabField(s), std::vector<SlabField>(std::size_t(g.dim()), SlabField(s))};
    const double i2k = 0.5 / s.k(), i2h = 0.5 / g.h();
    const int mz = s.mz();
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (int j = 0; j <= mz; ++j) {
            double d;
            if (j == 0) d = -3.0 * f.at(i, 0) + 4.0 * f.at(i, 1) - f.at(i, 2);
            else if (j == mz) d = 3.0 * f.at(i, mz) - 4.0 * f.at(i, mz - 1) + f.at(i, mz - 2);
            else d = f.at(i, j + 1) - f.at(i, j - 1);
            r.dz.at(i, j) = d * i2k;
            for (int a = 0; a < g.dim(); ++a)
                r.dx[std::size_t(a)].at(i, j) = (f.at(g.shift(i, a, 1), j) - f.at(g.shift(i, a, -1), j)) * i2h;
        }
    }
    return r;
}

/// Linear interpolation of column i of f at height z.
inline double at_height(const SlabField& f, std::size_t i, double z) {
    const auto& s = f.slab();
    const double u = std::clamp((z + s.M()) / s.k(), 0.0, double(s.mz()));
    const int j = std::min(int(u), s.mz() - 1);
    const double w = u - j;
    return (1.0 - w) * f.at(i, j) + w * f.at(i, j + 1);
}

} // namespace detail

/// theta = dU/dz: centred on free nodes whose neighbours are free, one-sided
/// second order at the ends of the free range; 0 below and 1 above it.
inline ThetaField u_to_theta(const SlabField& U, const std::vector<std::uint8_t>& mask) {
    const auto& s = U.slab();
    require(mask.size() == s.size(), "mask does not match the slab");
    SlabField th(s);
    const double i2k = 0.5 / s.k();
    for (std::size_t i = 0; i < s.base().size(); ++i) {
        const auto [a, b] = detail::free_range(mask, s, i);
        for (int j = 0; j <= s.mz(); ++j) {
            if (a < 0) {
                th.at(i, j) = U.at(i, j) > 0.0 ? 1.0 : 0.0;
                continue;
            }
            if (j < a) th.at(i, j) = 0.0;
            else if (j > b) th.at(i, j) = 1.0;
            else if (j > a && j < b) th.at(i, j) = (U.at(i, j + 1) - U.at(i, j - 1)) * i2k;
            else if (b - a >= 2 && j == a) th.at(i, j) = (-3.0 * U.at(i, a) + 4.0 * U.at(i, a + 1) - U.at(i, a + 2)) * i2k;
            else if (b - a >= 2 && j == b) th.at(i, j) = (3.0 * U.at(i, b) - 4.0 * U.at(i, b - 1) + U.at(i, b - 2)) * i2k;
            else th.at(i, j) = (U.at(i, std::min(j + 1, s.mz())) - U.at(i, std::max(j - 1, 0))) * i2k;
        }
    }
    return {th, mask};
}

/// h_t and rho_t at the levels t_j = j / m.
struct LevelSetFamily {
    std::vector<ScalarField> h;
    std::vector<ScalarField> rho;

    int m() const noexcept { return int(h.size()) - 1; }
};

/// h_t(x) where the (linearly continued) theta column crosses level t.
inline std::vector<ScalarField> theta_level_sets(const ThetaField& th, int m) {
    require(m >= 2, "need m >= 2 levels");
    const auto& s = th.theta.slab();
    const auto& g = s.base();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto [a, b] = detail::free_range(th.mask, s, i);
        for (int j = std::max(a, 0) + 1; j <= b; ++j)
            if (!(th.theta.at(i, j) > th.theta.at(i, j - 1)))
                throw Error(ErrorKind::NonMonotoneTheta,
                            "x index " + std::to_string(i) + ", z = " + std::to_string(s.z(j)));
    }
    const SlabField ext = detail::extend_theta(th);
    std::vector<ScalarField> h(std::size_t(m + 1), ScalarField(g));
    for (std::size_t i = 0; i < g.size(); ++i) {
        int j = 0;
        for (int l = 0; l <= m; ++l) {
            const double t = double(l) / m;
            while (j + 1 < s.mz() && ext.at(i, j + 1) <= t) ++j;
            const double lo = ext.at(i, j), hi = ext.at(i, j + 1);
            if (!(t >= lo && t <= hi) || !(hi > lo))
                throw Error(ErrorKind::SlabTooSmall, "level " + std::to_string(t) + " not inside the slab");
            h[std::size_t(l)][i] = s.z(j) + (t - lo) / (hi - lo) * s.k();
        }
    }
    return h;
}

/// rho_t = eps d_z theta + |grad_X theta|^2 / d_z theta on the graph of h_t.
inline ScalarField flux(const ThetaField& th, const ScalarField& h_t, double eps) {
    require(eps > 0.0, "eps must be positive");
    const auto& g = th.theta.slab().base();
    require(h_t.grid() == g, "level set on a different grid");
    const auto grad = detail::slab_gradient(detail::extend_theta(th));
    ScalarField rho(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double dz = detail::at_height(grad.dz, i, h_t[i]);
        if (!(dz > 0.0))
            throw Error(ErrorKind::VanishingVerticalDerivative,
                        "x index " + std::to_string(i) + ", z = " + std::to_string(h_t[i]));
        double gx = 0.0;
        for (const auto& d : grad.dx) {
            const double v = detail::at_height(d, i, h_t[i]);
            gx += v * v;
        }
        rho[i] = eps * dz + gx / dz;
    }
    return rho;
}

/// Level sets and fluxes at t_j = j / m.
inline LevelSetFamily level_set_family(const ThetaField& th, int m, double eps) {
    LevelSetFamily f{theta_level_sets(th, m), {}};
    for (const auto& h : f.h) f.rho.push_back(flux(th, h, eps));
    return f;
}

/// Mean-zero phi with 1 - Lap phi = rho, by conjugate gradients.
inline Potential poisson_solve(const ScalarField& rho, double tol = 1e-12) {
    const auto& g = rho.grid();
    const double mass = integrate(rho);
    if (std::abs(mass - 1.0) > 1e-8) throw Error(ErrorKind::NotNormalized, "integral of rho is " + std::to_string(mass));
    if (!(rho.min() > 0.0)) throw Error(ErrorKind::NotPositive, "rho has non-positive values");
    ScalarField b = 1.0 - rho;
    b = b + (-mean(b));
    ScalarField x(g), r = b, p = r;
    double rr = integrate(r * r);
    const int max_iter = 10 * int(g.size()) + 100;
    for (int it = 0; it < max_iter && r.max_abs() > tol; ++it) {
        const ScalarField ap = laplacian(p);
        const double alpha = rr / integrate(p * ap);
        x += alpha * p;
        r -= alpha * ap;
        const double rr_new = integrate(r * r);
        p = r + (rr_new / rr) * p;
        rr = rr_new;
    }
    if (r.max_abs() > tol) throw Error(ErrorKind::NotConverged, "Poisson CG residual " + std::to_string(r.max_abs()));
    return Potential(x + (-mean(x)));
}

struct Reconstruction {
    PathInH path;
    /// max |rho_t - (1 - Lap phi_t)| per level.
    std::vector<double> rho_mismatch;
};

/// phi_0 = poisson_solve(rho0), phi_t = phi_0 + trapezoid integral of h.
inline Reconstruction theta_to_phi(const LevelSetFamily& levels, const ScalarField& rho0) {
    const int m = levels.m();
    require(m >= 2 && levels.rho.size() == levels.h.size(), "invalid level-set family");
    const double dt = 1.0 / m;
    std::vector<ScalarField> phi{poisson_solve(rho0).field()};
    for (int j = 1; j <= m; ++j)
        phi.push_back(phi.back() + (0.5 * dt) * (levels.h[std::size_t(j - 1)] + levels.h[std::size_t(j)]));
    std::vector<double> mismatch;
    for (int j = 0; j <= m; ++j) mismatch.push_back((levels.rho[std::size_t(j)] - density(phi[std::size_t(j)])).max_abs());
    return {PathInH(std::move(phi)), std::move(mismatch)};
}

struct LevelIdentityReport {
    double theta_on_graph = 0.0;      // d_i theta + d_z theta d_i h
    double vertical_speed = 0.0;      // d_z theta d_t h - 1
    double conjugate_hessians = 0.0;  // d_z^2 U d_t^2 Phi - 1 at z = d_t Phi
    double flux_law = 0.0;            // d_t rho_t + Lap h_t, max norm
    double flux_law_l2 = 0.0;         // same, L2 over x and the selected levels
    int levels = 0;
};

/// Residuals of the level-set identities over interior levels l = 1..m-1
/// with t_lo <= l/m <= t_hi.
inline LevelIdentityReport check_level_identities(const ThetaField& th, const LevelSetFamily& levels,
                                                  const PathInH& path, double t_lo = 0.0, double t_hi = 1.0) {
    const int m = levels.m();
    require(path.m() == m, "path and level family differ in m");
    require(t_lo <= t_hi, "empty level window");
    const auto& g = th.theta.slab().base();
    const auto grad = detail::slab_gradient(detail::extend_theta(th));
    const double dt = 1.0 / m;
    LevelIdentityReport rep;
    double l2 = 0.0;
    for (int l = 1; l < m; ++l) {
        if (l * dt < t_lo - 1e-12 || l * dt > t_hi + 1e-12) continue;
        ++rep.levels;
        const ScalarField& h = levels.h[std::size_t(l)];
        const ScalarField ht = time_derivative(levels.h, l, dt);
        const VectorField gh = gradient(h);
        const ScalarField pt = time_derivative(path.slices(), l, dt);
        const ScalarField ptt = second_time_derivative(path.slices(), l, dt);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double dz = detail::at_height(grad.dz, i, h[i]);
            for (int a = 0; a < g.dim(); ++a)
                rep.theta_on_graph = std::max(rep.theta_on_graph,
                                              std::abs(detail::at_height(grad.dx[std::size_t(a)], i, h[i]) + dz * gh[a][i]));
            rep.vertical_speed = std::max(rep.vertical_speed, std::abs(dz * ht[i] - 1.0));
            rep.conjugate_hessians =
                std::max(rep.conjugate_hessians, std::abs(detail::at_height(grad.dz, i, pt[i]) * ptt[i] - 1.0));
        }
        const ScalarField res = time_derivative(levels.rho, l, dt) + laplacian(h);
        rep.flux_law = std::max(rep.flux_law, res.max_abs());
        l2 += integrate(res * res) * dt;
    }
    rep.flux_law_l2 = std::sqrt(l2);
    return rep;
}

/// E_M(U) - E(Phi) for a path from phi0 to phi1 and its Legendre transform:
/// M int rho0 (phi0 - phi1) + M/2 int |grad(phi1 - phi0)|^2 + (M^2/2 + eps M/2) vol - eps int phi1.
inline double energy_gap_constant(const Potential& phi0, const Potential& phi1, double eps, double M) {
    const ScalarField d = phi1.field() - phi0.field();
    return M * integrate(phi0.density() * (-1.0 * d)) + 0.5 * M * integrate(d * laplacian(d)) +
           (0.5 * M * M + 0.5 * eps * M) * phi0.grid().volume() - eps * integrate(phi1.field());
}

} // namespace fbp
