#pragma once

// Dirichlet problem q(Phi) = eps on X x [0,1] by damped Newton inside a
// continuation in the boundary data, plus the Lorentzian quadratic Q and the
// convexity checks built on it.

#include "fbp/space_h.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace fbp {

/// q(Phi) = Phi_tt (1 - Lap Phi) - |grad Phi_t|^2 on interior slices.
inline std::vector<ScalarField> q_operator(const PathInH& path) { return el_residual(path, 0.0); }

/// Directional derivative Dq[psi] on interior slices; psi has m+1 slices.
inline std::vector<ScalarField> q_linearization(const PathInH& path, const std::vector<ScalarField>& psi) {
    const int m = path.m();
    require(m >= 2, "q_linearization needs m >= 2");
    require(int(psi.size()) == m + 1, "psi must have m + 1 slices");
    const double dt = path.dt();
    std::vector<ScalarField> out;
    for (int j = 1; j < m; ++j) {
        const ScalarField ptt = second_time_derivative(path.slices(), j, dt);
        const VectorField gpt = gradient(time_derivative(path.slices(), j, dt));
        const ScalarField stt = second_time_derivative(psi, j, dt);
        const VectorField gst = gradient(time_derivative(psi, j, dt));
        out.push_back(stt * density(path[j]) - ptt * laplacian(psi[std::size_t(j)]) - 2.0 * dot(gpt, gst));
    }
    return out;
}

struct NewtonOptions {
    double tol = 1e-9;
    int max_iter = 30;
    double backtrack = 0.5;
    /// Smallest damping factor tried before the step counts as failed.
    double min_damping = 1.0 / 1024;
};

struct PhiProblem {
    ScalarField phi0;
    ScalarField phi1;
    double eps = 1.0;
    int m = 16;
    NewtonOptions newton{};
    double margin = default_margin;
    /// First continuation step; halved on failure down to min_step.
    double initial_step = 0.25;
    double min_step = std::ldexp(1.0, -20);
    /// Fixed continuation values (increasing, ending at 1). No adaptivity:
    /// a Newton failure at any of them throws NewtonDiverged.
    std::vector<double> schedule{};
};

struct PhiSolution {
    PathInH path;
    double residual = 0.0;
    int newton_iterations = 0;
    /// Continuation values at which Newton converged, starting at 0.
    std::vector<double> accepted_s;
};

namespace detail {

/// Max |q(Phi) - eps| over interior nodes.
inline double q_residual_norm(const std::vector<ScalarField>& slices, double eps) {
    const int m = int(slices.size()) - 1;
    const double dt = 1.0 / m;
    double r = 0.0;
    for (int j = 1; j < m; ++j) {
        const ScalarField ptt = second_time_derivative(slices, j, dt);
        const VectorField g = gradient(time_derivative(slices, j, dt));
        r = std::max(r, (ptt * density(slices[std::size_t(j)]) - dot(g, g) + (-eps)).max_abs());
    }
    return r;
}

/// Every slice admissible and Phi_tt > 0 at interior nodes.
inline bool in_solution_cone(const std::vector<ScalarField>& slices, double margin) {
    const int m = int(slices.size()) - 1;
    for (const auto& s : slices)
        if (!s.all_finite() || !(min_density(s) >= margin)) return false;
    for (int j = 1; j < m; ++j)
        if (!(second_time_derivative(slices, j, 1.0 / m).min() > 0.0)) return false;
    return true;
}

/// Jacobian of the interior residual with respect to the interior slices,
/// unknown (j, i) at column (j - 1) * size + i.
inline Eigen::SparseMatrix<double> q_jacobian(const std::vector<ScalarField>& slices) {
    const int m = int(slices.size()) - 1;
    const TorusGrid& g = slices.front().grid();
    const std::size_t N = g.size();
    const int d = g.dim();
    const double dt = 1.0 / m, idt2 = 1.0 / (dt * dt), ih2 = 1.0 / (g.h() * g.h()), i2h = 0.5 / g.h();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(std::size_t(m - 1) * N * std::size_t(3 + 6 * d));
    auto col = [N](int j, std::size_t i) { return Eigen::Index(std::size_t(j - 1) * N + i); };
    for (int j = 1; j < m; ++j) {
        const ScalarField rho = density(slices[std::size_t(j)]);
        const ScalarField ptt = second_time_derivative(slices, j, dt);
        const VectorField gpt = gradient(time_derivative(slices, j, dt));
        for (std::size_t i = 0; i < N; ++i) {
            const Eigen::Index row = col(j, i);
            trip.emplace_back(row, col(j, i), -2.0 * rho[i] * idt2 - ptt[i] * 2.0 * d * ih2);
            for (int a = 0; a < d; ++a)
                for (int st : {-1, 1}) trip.emplace_back(row, col(j, g.shift(i, a, st)), ptt[i] * ih2);
            for (int nb : {-1, 1}) {
                const int jj = j + nb;
                if (jj < 1 || jj > m - 1) continue;
                trip.emplace_back(row, col(jj, i), rho[i] * idt2);
                // -|grad Phi_t|^2 with Phi_t = (Phi_{j+1} - Phi_{j-1}) / (2 dt).
                for (int a = 0; a < d; ++a) {
                    const double c = -2.0 * gpt[a][i] * (nb * 0.5 / dt) * i2h;
                    trip.emplace_back(row, col(jj, g.shift(i, a, 1)), c);
                    trip.emplace_back(row, col(jj, g.shift(i, a, -1)), -c);
                }
            }
        }
    }
    Eigen::SparseMatrix<double> J(Eigen::Index(std::size_t(m - 1) * N), Eigen::Index(std::size_t(m - 1) * N));
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
}

struct NewtonOutcome {
    bool converged = false;
    int iterations = 0;
    double residual = std::numeric_limits<double>::infinity();
};

/// Damped Newton on the interior slices, boundary slices held fixed.
inline NewtonOutcome newton_solve(std::vector<ScalarField>& slices, double eps, const NewtonOptions& opt,
                                  double margin) {
    const int m = int(slices.size()) - 1;
    const std::size_t N = slices.front().size();
    NewtonOutcome out;
    if (!in_solution_cone(slices, margin)) return out;
    out.residual = q_residual_norm(slices, eps);
    while (out.residual > opt.tol) {
        if (out.iterations >= opt.max_iter) return out;
        ++out.iterations;
        Eigen::VectorXd F(Eigen::Index(std::size_t(m - 1) * N));
        const double dt = 1.0 / m;
        for (int j = 1; j < m; ++j) {
            const ScalarField ptt = second_time_derivative(slices, j, dt);
            const VectorField gp = gradient(time_derivative(slices, j, dt));
            const ScalarField r = ptt * density(slices[std::size_t(j)]) - dot(gp, gp) + (-eps);
            for (std::size_t i = 0; i < N; ++i) F[Eigen::Index(std::size_t(j - 1) * N + i)] = r[i];
        }
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(q_jacobian(slices));
        if (lu.info() != Eigen::Success) return out;
        const Eigen::VectorXd delta = lu.solve(-F);
        if (lu.info() != Eigen::Success || !delta.allFinite()) return out;

        bool accepted = false;
        for (double alpha = 1.0; alpha >= opt.min_damping; alpha *= opt.backtrack) {
            std::vector<ScalarField> trial = slices;
            for (int j = 1; j < m; ++j)
                for (std::size_t i = 0; i < N; ++i)
                    trial[std::size_t(j)][i] += alpha * delta[Eigen::Index(std::size_t(j - 1) * N + i)];
            if (!in_solution_cone(trial, margin)) continue;
            const double r = q_residual_norm(trial, eps);
            if (r < (1.0 - 1e-4 * alpha) * out.residual) {
                slices = std::move(trial);
                out.residual = r;
                accepted = true;
                break;
            }
        }
        if (!accepted) return out;
    }
    out.converged = true;
    return out;
}

} // namespace detail

/// Solves q(Phi) = eps with Phi(0) = phi0, Phi(1) = phi1. Continuation runs
/// over boundary data (s phi0, s phi1) from the exact seed (eps/2) t (t - 1).
inline PhiSolution solve_dirichlet(const PhiProblem& pb) {
    require(pb.eps > 0.0, "eps must be positive");
    require(pb.m >= 2, "m must be >= 2");
    require(pb.phi0.grid() == pb.phi1.grid(), "boundary data on different grids");
    require(pb.initial_step > 0.0 && pb.initial_step <= 1.0, "initial continuation step must lie in (0, 1]");
    require(pb.newton.tol > 0.0 && pb.newton.max_iter >= 1, "bad Newton options");
    require(pb.newton.backtrack > 0.0 && pb.newton.backtrack < 1.0, "backtrack factor must lie in (0, 1)");
    (void)Potential(pb.phi0, pb.margin);
    (void)Potential(pb.phi1, pb.margin);
    const bool fixed = !pb.schedule.empty();
    if (fixed) {
        for (std::size_t k = 0; k < pb.schedule.size(); ++k)
            require(pb.schedule[k] > (k ? pb.schedule[k - 1] : 0.0) && pb.schedule[k] <= 1.0,
                    "schedule must increase within (0, 1]");
        require(pb.schedule.back() == 1.0, "schedule must end at 1");
    }

    const TorusGrid& g = pb.phi0.grid();
    const int m = pb.m;
    std::vector<ScalarField> cur;
    for (int j = 0; j <= m; ++j) {
        const double t = double(j) / m;
        cur.emplace_back(g, 0.5 * pb.eps * t * (t - 1.0));
    }
    auto boundary_shift = [&](double ds) {
        std::vector<ScalarField> b;
        for (int j = 0; j <= m; ++j) {
            const double t = double(j) / m;
            b.push_back(ds * ((1.0 - t) * pb.phi0 + t * pb.phi1));
        }
        return b;
    };

    PhiSolution sol{PathInH(cur, pb.margin), 0.0, 0, {0.0}};
    double s = 0.0, step = pb.initial_step;
    std::size_t next = 0;
    while (s < 1.0) {
        const double target = fixed ? pb.schedule[next] : std::min(1.0, s + step);
        std::vector<ScalarField> trial = cur;
        const auto shift = boundary_shift(target - s);
        for (int j = 0; j <= m; ++j) trial[std::size_t(j)] += shift[std::size_t(j)];
        // Boundary slices carry the exact data, free of accumulated rounding.
        trial.front() = target * pb.phi0;
        trial.back() = target * pb.phi1;
        const auto res = detail::newton_solve(trial, pb.eps, pb.newton, pb.margin);
        sol.newton_iterations += res.iterations;
        if (res.converged) {
            cur = std::move(trial);
            s = target;
            sol.residual = res.residual;
            sol.accepted_s.push_back(s);
            ++next;
            if (!fixed) step = std::min(2.0 * step, pb.initial_step);
            continue;
        }
        if (fixed)
            throw Error(ErrorKind::NewtonDiverged,
                        "s = " + std::to_string(target) + ", residual = " + std::to_string(res.residual));
        step *= 0.5;
        if (step < pb.min_step)
            throw Error(ErrorKind::StepTooSmall, "continuation step below " + std::to_string(pb.min_step) +
                                                     " at s = " + std::to_string(s) +
                                                     ", last residual = " + std::to_string(res.residual));
    }
    sol.path = PathInH(std::move(cur), pb.margin);
    return sol;
}

// ---------------------------------------------------------------------------
// Lorentzian quadratic

class SymMatrix {
public:
    explicit SymMatrix(int size) : n_(size), a_(std::size_t(size) * std::size_t(size), 0.0) {
        require(size >= 1, "matrix size must be >= 1");
    }

    int size() const noexcept { return n_; }
    double operator()(int i, int j) const { return a_[idx(i, j)]; }

    /// Writes both (i, j) and (j, i).
    void set(int i, int j, double v) {
        a_[idx(i, j)] = v;
        a_[idx(j, i)] = v;
    }

    friend SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) {
        require(a.n_ == b.n_, "matrix sizes differ");
        SymMatrix r(a.n_);
        for (std::size_t k = 0; k < r.a_.size(); ++k) r.a_[k] = a.a_[k] + b.a_[k];
        return r;
    }
    friend SymMatrix operator*(double c, SymMatrix a) {
        for (double& v : a.a_) v *= c;
        return a;
    }
    friend SymMatrix operator-(const SymMatrix& a, const SymMatrix& b) { return a + (-1.0) * b; }

private:
    std::size_t idx(int i, int j) const {
        require(i >= 0 && j >= 0 && i < n_ && j < n_, "matrix index out of range");
        return std::size_t(i) * std::size_t(n_) + std::size_t(j);
    }

    int n_;
    std::vector<double> a_;
};

/// Q(A) = A_00 sum_{i>=1} A_ii - sum_{i>=1} A_i0^2.
inline double lorentz_q(const SymMatrix& a) {
    double tr = 0.0, off = 0.0;
    for (int i = 1; i < a.size(); ++i) {
        tr += a(i, i);
        off += a(i, 0) * a(i, 0);
    }
    return a(0, 0) * tr - off;
}

/// Matrix [[Phi_tt, d_t d_i Phi], [., delta_ij / d + d_i d_j Phi]] of second
/// differences at interior slice j, node i. Its Q equals the discrete q(Phi).
inline SymMatrix q_matrix(const PathInH& path, int j, std::size_t i) {
    require(j >= 1 && j < path.m(), "q_matrix only at interior slices");
    const TorusGrid& g = path.grid();
    const int d = g.dim();
    const double dt = path.dt();
    const ScalarField& p = path[j];
    const ScalarField pt = time_derivative(path.slices(), j, dt);
    const double ih2 = 1.0 / (g.h() * g.h()), i4h2 = 0.25 * ih2;
    SymMatrix a(d + 1);
    a.set(0, 0, second_time_derivative(path.slices(), j, dt)[i]);
    for (int r = 0; r < d; ++r) {
        a.set(r + 1, 0, (pt[g.shift(i, r, 1)] - pt[g.shift(i, r, -1)]) * (0.5 / g.h()));
        for (int c = r; c < d; ++c) {
            double v;
            if (r == c) {
                v = 1.0 / d + (p[g.shift(i, r, 1)] - 2.0 * p[i] + p[g.shift(i, r, -1)]) * ih2;
            } else {
                auto at = [&](int sr, int sc) { return p[g.shift(g.shift(i, r, sr), c, sc)]; };
                v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) * i4h2;
            }
            a.set(r + 1, c + 1, v);
        }
    }
    return a;
}

/// Minimum of lorentz_q(q_matrix) over all interior nodes.
inline double min_q_positivity(const PathInH& path) {
    double lo = std::numeric_limits<double>::infinity();
    for (int j = 1; j < path.m(); ++j)
        for (std::size_t i = 0; i < path.grid().size(); ++i) lo = std::min(lo, lorentz_q(q_matrix(path, j, i)));
    return lo;
}

struct ConvexityReport {
    std::vector<double> s;
    std::vector<double> action;
    /// Minimum over samples of the scaled second difference of the action.
    double min_second_difference = 0.0;
    /// Minimum of q(Phi_s) - eps over interior nodes and interior samples.
    double min_q_excess = 0.0;
};

/// Samples the segment s path_a + (1 - s) path_b at s = k / (samples - 1).
inline ConvexityReport convexity_report(const PathInH& a, const PathInH& b, double eps, int samples) {
    require(samples >= 3, "convexity report needs at least 3 samples");
    require(a.m() == b.m() && a.grid() == b.grid(), "paths differ in shape");
    require(a.m() >= 2, "paths need m >= 2");
    const double btol = 1e-12;
    require((a[0] - b[0]).max_abs() <= btol && (a[a.m()] - b[b.m()]).max_abs() <= btol,
            "paths must share boundary slices");

    ConvexityReport rep;
    rep.min_second_difference = std::numeric_limits<double>::infinity();
    rep.min_q_excess = std::numeric_limits<double>::infinity();
    for (int k = 0; k < samples; ++k) {
        const double s = double(k) / (samples - 1);
        std::vector<ScalarField> sl;
        for (int j = 0; j <= a.m(); ++j) sl.push_back(s * a[j] + (1.0 - s) * b[j]);
        const PathInH p(std::move(sl), std::min(a.margin(), b.margin()));
        rep.s.push_back(s);
        rep.action.push_back(action(p, eps));
        if (k > 0 && k + 1 < samples)
            for (const auto& q : q_operator(p)) rep.min_q_excess = std::min(rep.min_q_excess, (q + (-eps)).min());
    }
    const double ds = 1.0 / (samples - 1);
    for (int k = 1; k + 1 < samples; ++k) {
        const double dd = (rep.action[std::size_t(k + 1)] - 2.0 * rep.action[std::size_t(k)] +
                           rep.action[std::size_t(k - 1)]) / (ds * ds);
        rep.min_second_difference = std::min(rep.min_second_difference, dd);
    }
    return rep;
}

} // namespace fbp
