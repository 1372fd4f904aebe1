#pragma once

// The obstacle (variational inequality) form of the free boundary problem on
// the slab X x [-M, M]: obstacle L, the energy E_M, projected SOR, free
// boundary extraction and the one-parameter family of obstacle problems on X.

#include "fbp/space_h.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace fbp {

class SlabGrid {
public:
    SlabGrid(TorusGrid base, double half_height, int mz) : base_(base), M_(half_height), mz_(mz) {
        require(half_height > 0.0 && std::isfinite(half_height), "slab half-height must be positive");
        require(mz >= 8 && mz % 2 == 0, "m_z must be even and >= 8");
    }

    const TorusGrid& base() const noexcept { return base_; }
    double M() const noexcept { return M_; }
    int mz() const noexcept { return mz_; }
    double k() const noexcept { return 2.0 * M_ / mz_; }
    double z(int j) const noexcept { return -M_ + j * k(); }
    /// Nodes per column.
    std::size_t column_size() const noexcept { return std::size_t(mz_ + 1); }
    std::size_t size() const noexcept { return base_.size() * column_size(); }
    std::size_t index(std::size_t i, int j) const noexcept { return i * column_size() + std::size_t(j); }

    friend bool operator==(const SlabGrid&, const SlabGrid&) = default;

private:
    TorusGrid base_;
    double M_;
    int mz_;
};

/// Values on X x {z_j}, stored column by column.
class SlabField {
public:
    explicit SlabField(SlabGrid s, double value = 0.0) : s_(s), v_(s.size(), value) {}
    SlabField(SlabGrid s, std::vector<double> values) : s_(s), v_(std::move(values)) {
        require(v_.size() == s_.size(), "slab field has the wrong number of samples");
        for (double x : v_) require(std::isfinite(x), "slab field has non-finite values");
    }

    /// f(x1, x2, z) at every node.
    static SlabField sample(const SlabGrid& s, const std::function<double(double, double, double)>& f) {
        SlabField r(s);
        const auto& g = s.base();
        for (std::size_t i = 0; i < g.size(); ++i)
            for (int j = 0; j <= s.mz(); ++j)
                r.at(i, j) = f(g.coord(i, 0), g.dim() == 2 ? g.coord(i, 1) : 0.0, s.z(j));
        return r;
    }

    const SlabGrid& slab() const noexcept { return s_; }
    double& at(std::size_t i, int j) { return v_[s_.index(i, j)]; }
    double at(std::size_t i, int j) const { return v_[s_.index(i, j)]; }
    const std::vector<double>& values() const noexcept { return v_; }
    std::vector<double>& values() noexcept { return v_; }

    /// Horizontal slice z = z_j as a field on X.
    ScalarField level(int j) const {
        ScalarField r(s_.base());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = at(i, j);
        return r;
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : v_) m = std::max(m, std::abs(x));
        return m;
    }
    double min() const { return *std::min_element(v_.begin(), v_.end()); }

    SlabField& operator-=(const SlabField& o) {
        require(s_ == o.s_, "slab fields on different slabs");
        for (std::size_t n = 0; n < v_.size(); ++n) v_[n] -= o.v_[n];
        return *this;
    }
    friend SlabField operator-(SlabField a, const SlabField& b) { return a -= b; }

private:
    SlabGrid s_;
    std::vector<double> v_;
};

/// L(x, z) = max(phi0 - phi1 + z, 0).
inline SlabField obstacle_L(const Potential& phi0, const Potential& phi1, const SlabGrid& slab) {
    require(phi0.grid() == slab.base() && phi1.grid() == slab.base(), "potentials and slab use different grids");
    SlabField L(slab);
    for (std::size_t i = 0; i < slab.base().size(); ++i) {
        const double a = phi0.field()[i] - phi1.field()[i];
        for (int j = 0; j <= slab.mz(); ++j) L.at(i, j) = std::max(a + slab.z(j), 0.0);
    }
    return L;
}

/// Obstacle problem with caps U = 0 at z = -M and U = L at z = +M.
class ObstacleProblem {
public:
    ObstacleProblem(SlabField L, ScalarField rho0, double eps) : L_(std::move(L)), rho0_(std::move(rho0)), eps_(eps) {
        const auto& s = L_.slab();
        require(rho0_.grid() == s.base(), "rho0 and slab use different grids");
        require(eps > 0.0, "eps must be positive");
        require(rho0_.min() > 0.0, "rho0 must be positive", ErrorKind::NotPositive);
        const double mass = integrate(rho0_);
        if (std::abs(mass - 1.0) > 1e-10)
            throw Error(ErrorKind::NotNormalized, "integral of rho0 is " + std::to_string(mass));
        for (std::size_t i = 0; i < s.base().size(); ++i)
            require(L_.at(i, 0) == 0.0, "obstacle must vanish on the bottom cap");
    }

    /// rho0 = 1 - Lap phi0 and L from (phi0, phi1).
    static ObstacleProblem from_potentials(const Potential& phi0, const Potential& phi1, const SlabGrid& slab,
                                           double eps) {
        return ObstacleProblem(obstacle_L(phi0, phi1, slab), phi0.density(), eps);
    }

    const SlabGrid& slab() const noexcept { return L_.slab(); }
    const SlabField& L() const noexcept { return L_; }
    const ScalarField& rho0() const noexcept { return rho0_; }
    double eps() const noexcept { return eps_; }

private:
    SlabField L_;
    ScalarField rho0_;
    double eps_;
};

/// Discrete E_M: integral of 1/2 |grad_X U|^2 + (eps/2) U_z^2 + rho0 U.
/// Forward differences on X and on z-intervals, trapezoid in z, so the
/// Euler-Lagrange residual is exactly Delta_eps U + rho0.
inline double energy_EM(const SlabField& U, const ObstacleProblem& p) {
    const auto& s = p.slab();
    require(U.slab() == s, "U lives on a different slab");
    const auto& g = s.base();
    const double k = s.k(), h = g.h(), eps = p.eps();
    double total = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double col = 0.0;
        for (int j = 0; j < s.mz(); ++j) {
            const double dz = (U.at(i, j + 1) - U.at(i, j)) / k;
            col += 0.5 * eps * dz * dz * k;
        }
        for (int j = 0; j <= s.mz(); ++j) {
            double gx = 0.0;
            for (int a = 0; a < g.dim(); ++a) {
                const double d = (U.at(g.shift(i, a, 1), j) - U.at(i, j)) / h;
                gx += d * d;
            }
            const double w = (j == 0 || j == s.mz()) ? 0.5 : 1.0;
            col += w * k * (0.5 * gx + p.rho0()[i] * U.at(i, j));
        }
        total += col;
    }
    return total * g.cell_volume();
}

/// Delta_eps U + rho0 at node (i, j), 0 < j < m_z, with Delta_eps = -eps d_z^2 + Lap_X.
inline double el_residual_at(const SlabField& U, const ObstacleProblem& p, std::size_t i, int j) {
    const auto& s = p.slab();
    const auto& g = s.base();
    const double ik2 = 1.0 / (s.k() * s.k()), ih2 = 1.0 / (g.h() * g.h());
    double lap = 0.0;
    for (int a = 0; a < g.dim(); ++a)
        lap += (2.0 * U.at(i, j) - U.at(g.shift(i, a, 1), j) - U.at(g.shift(i, a, -1), j)) * ih2;
    return -p.eps() * (U.at(i, j + 1) - 2.0 * U.at(i, j) + U.at(i, j - 1)) * ik2 + lap + p.rho0()[i];
}

struct Complementarity {
    double min_U_minus_L = 0.0;
    double min_residual = 0.0;
    /// max |min(Delta_eps U + rho0, U - L)| over interior nodes.
    double max_complementarity = 0.0;
};

inline Complementarity complementarity(const SlabField& U, const ObstacleProblem& p) {
    const auto& s = p.slab();
    Complementarity c{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 0.0};
    for (std::size_t i = 0; i < s.base().size(); ++i)
        for (int j = 1; j < s.mz(); ++j) {
            const double gap = U.at(i, j) - p.L().at(i, j), r = el_residual_at(U, p, i, j);
            c.min_U_minus_L = std::min(c.min_U_minus_L, gap);
            c.min_residual = std::min(c.min_residual, r);
            c.max_complementarity = std::max(c.max_complementarity, std::abs(std::min(r, gap)));
        }
    return c;
}

struct PsorOptions {
    double omega = 1.5;
    double tol = 1e-10;
    int max_sweeps = 200000;
    /// Sweeps between convergence checks.
    int check_every = 10;
    /// Record energy_EM after every sweep (costs one energy evaluation per sweep).
    bool record_energy = false;
    /// Start from a converged solve on the slab with halved m_z and n when both stay valid.
    bool nested = true;
};

struct PsorResult {
    SlabField U;
    int sweeps = 0;
    Complementarity residual;
    std::vector<double> energy;
};

namespace detail {

inline void psor_sweeps(SlabField& U, const ObstacleProblem& p, const PsorOptions& opt, PsorResult& res) {
    const auto& s = p.slab();
    const auto& g = s.base();
    const double ik2 = 1.0 / (s.k() * s.k()), ih2 = 1.0 / (g.h() * g.h());
    const double diag = 2.0 * p.eps() * ik2 + 2.0 * g.dim() * ih2;
    const double w = opt.omega;
    const auto& L = p.L();
    while (true) {
        for (int sweep = 0; sweep < opt.check_every; ++sweep) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                std::size_t nb[4];
                for (int a = 0; a < g.dim(); ++a) {
                    nb[2 * a] = g.shift(i, a, 1);
                    nb[2 * a + 1] = g.shift(i, a, -1);
                }
                for (int j = 1; j < s.mz(); ++j) {
                    double side = 0.0;
                    for (int q = 0; q < 2 * g.dim(); ++q) side += U.at(nb[q], j);
                    const double gs =
                        (p.eps() * (U.at(i, j + 1) + U.at(i, j - 1)) * ik2 + side * ih2 - p.rho0()[i]) / diag;
                    double& u = U.at(i, j);
                    u = std::max(L.at(i, j), u + w * (gs - u));
                }
            }
            ++res.sweeps;
            if (opt.record_energy) res.energy.push_back(energy_EM(U, p));
        }
        res.residual = complementarity(U, p);
        if (res.residual.max_complementarity <= opt.tol && res.residual.min_residual >= -opt.tol) return;
        if (res.sweeps >= opt.max_sweeps)
            throw Error(ErrorKind::NotConverged, "PSOR after " + std::to_string(res.sweeps) +
                                                     " sweeps, complementarity residual " +
                                                     std::to_string(res.residual.max_complementarity));
    }
}

/// Piecewise-linear prolongation from the slab with halved m_z (and n when `coarse_x`).
inline SlabField prolong(const SlabField& c, const SlabGrid& fine, bool coarse_x) {
    SlabField f(fine);
    const auto& g = fine.base();
    const auto& cg = c.slab().base();
    for (std::size_t i = 0; i < g.size(); ++i) {
        // Average of the (up to 4) coarse columns surrounding the fine node.
        std::vector<std::size_t> cols;
        if (!coarse_x) {
            cols.push_back(i);
        } else {
            const int i1 = g.node(i, 0), i2 = g.dim() == 2 ? g.node(i, 1) : 0;
            for (int a : {i1 / 2, (i1 + 1) / 2})
                for (int b : (g.dim() == 2 ? std::vector<int>{i2 / 2, (i2 + 1) / 2} : std::vector<int>{0}))
                    cols.push_back(cg.index(a, b));
        }
        for (int j = 0; j <= fine.mz(); ++j) {
            double v = 0.0;
            for (std::size_t ci : cols)
                v += (j % 2 == 0) ? c.at(ci, j / 2) : 0.5 * (c.at(ci, j / 2) + c.at(ci, j / 2 + 1));
            f.at(i, j) = v / double(cols.size());
        }
    }
    return f;
}

} // namespace detail

/// Projected SOR for min E_M over {U >= L} with the cap values fixed.
inline PsorResult solve_psor(const ObstacleProblem& p, const PsorOptions& opt = {}) {
    require(opt.omega > 0.0 && opt.omega < 2.0, "omega must lie in (0, 2)");
    require(opt.tol > 0.0 && opt.max_sweeps >= 1 && opt.check_every >= 1, "bad PSOR options");
    const auto& s = p.slab();
    const auto& g = s.base();

    SlabField U = p.L();
    const bool coarse_z = s.mz() / 2 >= 8 && (s.mz() / 2) % 2 == 0;
    if (opt.nested && coarse_z) {
        const bool coarse_x = g.n() / 2 >= 4 && (g.n() / 2) % 2 == 0;
        const TorusGrid cg(g.dim(), coarse_x ? g.n() / 2 : g.n());
        const SlabGrid cs(cg, s.M(), s.mz() / 2);
        SlabField cL(cs);
        ScalarField crho(cg);
        for (std::size_t ci = 0; ci < cg.size(); ++ci) {
            const std::size_t fi = coarse_x ? g.index(2 * cg.node(ci, 0), cg.dim() == 2 ? 2 * cg.node(ci, 1) : 0) : ci;
            crho[ci] = p.rho0()[fi];
            for (int j = 0; j <= cs.mz(); ++j) cL.at(ci, j) = p.L().at(fi, 2 * j);
        }
        crho = (1.0 / integrate(crho)) * crho;
        PsorOptions copt = opt;
        copt.record_energy = false;
        copt.tol = std::max(opt.tol, 1e-8);
        try {
            const auto coarse = solve_psor(ObstacleProblem(cL, crho, p.eps()), copt);
            U = detail::prolong(coarse.U, s, coarse_x);
            for (std::size_t i = 0; i < g.size(); ++i)
                for (int j = 0; j <= s.mz(); ++j) U.at(i, j) = std::max(U.at(i, j), p.L().at(i, j));
        } catch (const Error&) {
            U = p.L(); // fall back to a cold start
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            U.at(i, 0) = 0.0;
            U.at(i, s.mz()) = p.L().at(i, s.mz());
        }
    }

    PsorResult res{U, 0, {}, {}};
    if (opt.record_energy) res.energy.push_back(energy_EM(res.U, p));
    detail::psor_sweeps(res.U, p, opt, res);

    for (std::size_t i = 0; i < g.size(); ++i)
        for (int j : {1, 2, s.mz() - 2, s.mz() - 1})
            if (res.U.at(i, j) - p.L().at(i, j) > opt.tol)
                throw Error(ErrorKind::FreeBoundaryTouchesSlab,
                            "U > L at z = " + std::to_string(s.z(j)) + "; increase M");
    return res;
}

struct ActiveSet {
    /// 1 where U - L > tol, per slab node.
    std::vector<std::uint8_t> mask;
    ScalarField H0;
    ScalarField H1;
};

/// Free boundaries per column. Near a free boundary U - L grows
/// quadratically, so its square root is extrapolated linearly to zero.
inline ActiveSet active_set(const SlabField& U, const SlabField& L, double tol) {
    require(U.slab() == L.slab(), "U and L on different slabs");
    const auto& s = U.slab();
    const auto& g = s.base();
    ActiveSet out{std::vector<std::uint8_t>(s.size(), 0), ScalarField(g), ScalarField(g)};
    for (std::size_t i = 0; i < g.size(); ++i) {
        int first = -1, last = -1;
        for (int j = 0; j <= s.mz(); ++j) {
            const double gap = U.at(i, j) - L.at(i, j);
            require(gap >= -tol, "U below the obstacle at z = " + std::to_string(s.z(j)));
            if (gap > tol) {
                out.mask[s.index(i, j)] = 1;
                if (first < 0) first = j;
                else if (last != j - 1)
                    throw Error(ErrorKind::NonContiguousActiveSet, "column " + std::to_string(i));
                last = j;
            }
        }
        if (first < 0) {
            const double top = L.at(i, s.mz());
            out.H0[i] = out.H1[i] = top > 0.0 ? s.z(s.mz()) - top : s.M();
            continue;
        }
        auto root = [&](int inner, int outer) {
            // Zero of sqrt(U - L) through the two innermost-active nodes, kept in the bracketing cell.
            const double a = std::sqrt(U.at(i, inner) - L.at(i, inner));
            const int nxt = inner + (inner - outer);
            const double b = (nxt > first - 1 && nxt < last + 1) ? std::sqrt(U.at(i, nxt) - L.at(i, nxt)) : a;
            const double zi = s.z(inner), zo = s.z(outer);
            double z = zo;
            if (b > a) z = zi - a * (s.z(nxt) - zi) / (b - a);
            return std::clamp(z, std::min(zi, zo), std::max(zi, zo));
        };
        out.H0[i] = first > 0 ? root(first, first - 1) : s.z(0);
        out.H1[i] = last < s.mz() ? root(last, last + 1) : s.z(s.mz());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Family of obstacle problems on X

struct FamilyMember {
    double z = 0.0;
    ScalarField u;
    /// 1 where u > lambda_z + tol.
    std::vector<std::uint8_t> free_set;
    int sweeps = 0;
};

struct FamilySweep {
    std::vector<FamilyMember> members;
    /// |u_{z_{i+1}} - u_{z_i}|_inf / (z_{i+1} - z_i).
    std::vector<double> difference_quotient;
};

/// For each z minimizes J(u) = integral of 1/2 |grad u|^2 + rho u over
/// {u >= max(lambda, z)} by projected Gauss-Seidel on X.
inline FamilySweep family_sweep(const ScalarField& lambda, const ScalarField& rho, const std::vector<double>& z_list,
                                double tol = 1e-10, int max_sweeps = 1000000, double omega = 1.5) {
    require(lambda.grid() == rho.grid(), "lambda and rho on different grids");
    require(rho.min() > 0.0, "rho must be positive", ErrorKind::NotPositive);
    require(omega > 0.0 && omega < 2.0, "omega must lie in (0, 2)");
    const auto& g = lambda.grid();
    const double ih2 = 1.0 / (g.h() * g.h()), diag = 2.0 * g.dim() * ih2;
    FamilySweep out;
    for (double z : z_list) {
        const ScalarField obst = lambda.map([z](double l) { return std::max(l, z); });
        ScalarField u = out.members.empty() ? obst : out.members.back().u;
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::max(u[i], obst[i]);
        int sweeps = 0;
        while (true) {
            for (std::size_t i = 0; i < u.size(); ++i) {
                double side = 0.0;
                for (int a = 0; a < g.dim(); ++a) side += u[g.shift(i, a, 1)] + u[g.shift(i, a, -1)];
                const double gs = (side * ih2 - rho[i]) / diag;
                u[i] = std::max(obst[i], u[i] + omega * (gs - u[i]));
            }
            ++sweeps;
            const ScalarField r = laplacian(u) + rho;
            double worst = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i) {
                worst = std::max(worst, std::abs(std::min(r[i], u[i] - obst[i])));
                worst = std::max(worst, -r[i]);
            }
            if (worst <= tol) break;
            if (sweeps >= max_sweeps)
                throw Error(ErrorKind::NotConverged, "family member z = " + std::to_string(z) + ", residual " +
                                                         std::to_string(worst));
        }
        FamilyMember mem{z, u, std::vector<std::uint8_t>(u.size(), 0), sweeps};
        for (std::size_t i = 0; i < u.size(); ++i) mem.free_set[i] = u[i] - obst[i] > tol ? 1 : 0;
        out.members.push_back(std::move(mem));
    }
    for (std::size_t n = 1; n < out.members.size(); ++n) {
        const auto& a = out.members[n - 1];
        const auto& b = out.members[n];
        out.difference_quotient.push_back((b.u - a.u).max_abs() / std::abs(b.z - a.z));
    }
    return out;
}

} // namespace fbp
