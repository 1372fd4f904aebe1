#pragma once

// Finite-dimensional Nahm equations for u(n): forward integration, adjoint-orbit
// invariants, the action on positive Hermitian matrices and its minimisers.

#include "fbp/error.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace fbp {

using CMat = Eigen::MatrixXcd;
using cplx = std::complex<double>;

inline CMat bracket(const CMat& a, const CMat& b) { return a * b - b * a; }
inline CMat skew_part(const CMat& a) { return 0.5 * (a - a.adjoint()); }
inline CMat herm_part(const CMat& a) { return 0.5 * (a + a.adjoint()); }

/// T_0..T_3 at time t; T_0 is the gauge field (zero in the ungauged system).
struct NahmState {
    std::array<CMat, 4> T;
    double t = 0.0;

    int n() const { return int(T[1].rows()); }
    CMat complex_pair() const { return T[2] + cplx(0, 1) * T[3]; }
};

inline NahmState make_state(const CMat& T1, const CMat& T2, const CMat& T3, double t = 0.0) {
    require(T1.rows() == T1.cols() && T2.rows() == T1.rows() && T3.rows() == T1.rows() && T2.cols() == T1.rows() &&
                T3.cols() == T1.rows(),
            "Nahm matrices must be square and of one size");
    return {{CMat::Zero(T1.rows(), T1.rows()), T1, T2, T3}, t};
}

/// Largest deviation of T_0..T_3 from skew-Hermitian.
inline double skew_defect(const NahmState& s) {
    double d = 0.0;
    for (const auto& T : s.T) d = std::max(d, (T + T.adjoint()).cwiseAbs().maxCoeff());
    return d;
}

/// dT_i/dt = [T_j, T_k] - [T_0, T_i] over cyclic (i, j, k); the T_0 term only when gauged.
inline std::array<CMat, 4> nahm_rhs(const NahmState& s, bool gauged) {
    const int n = s.n();
    std::array<CMat, 4> d{CMat::Zero(n, n), CMat(), CMat(), CMat()};
    for (int i = 1; i <= 3; ++i) {
        const int j = i % 3 + 1, k = j % 3 + 1;
        d[std::size_t(i)] = bracket(s.T[std::size_t(j)], s.T[std::size_t(k)]);
        if (gauged) d[std::size_t(i)] -= bracket(s.T[0], s.T[std::size_t(i)]);
    }
    return d;
}

inline double state_norm(const NahmState& s) {
    double r = 0.0;
    for (const auto& T : s.T) r = std::max(r, T.norm());
    return r;
}

/// RK4 for the ungauged system on [t0, t1], projecting back to skew-Hermitian
/// after every step. Records every `record_every`-th state plus the last.
inline std::vector<NahmState> integrate_nahm(NahmState init, double t1, double dt, int record_every = 1) {
    require(dt > 0.0, "dt must be positive");
    require(t1 >= init.t, "t1 must not precede the initial time");
    require(record_every >= 1, "record_every must be >= 1");
    require(skew_defect(init) < 1e-10, "initial data must be skew-Hermitian");
    init.T[0].setZero();
    const int steps = std::max(1, int(std::ceil((t1 - init.t) / dt - 1e-9)));
    const double h = (t1 - init.t) / steps;
    std::vector<NahmState> out{init};
    NahmState s = init;
    auto axpy = [](const NahmState& a, const std::array<CMat, 4>& d, double c) {
        NahmState r = a;
        for (std::size_t i = 1; i < 4; ++i) r.T[i] += c * d[i];
        return r;
    };
    for (int step = 1; step <= steps; ++step) {
        const auto k1 = nahm_rhs(s, false);
        const auto k2 = nahm_rhs(axpy(s, k1, 0.5 * h), false);
        const auto k3 = nahm_rhs(axpy(s, k2, 0.5 * h), false);
        const auto k4 = nahm_rhs(axpy(s, k3, h), false);
        for (std::size_t i = 1; i < 4; ++i) s.T[i] = skew_part(s.T[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        s.t = init.t + step * h;
        const double nrm = state_norm(s);
        if (!(nrm <= 1e12)) throw Error(ErrorKind::BlowUp, "|T| = " + std::to_string(nrm) + " at t = " + std::to_string(s.t));
        if (step % record_every == 0 || step == steps) out.push_back(s);
    }
    return out;
}

/// Eigenvalues of T_2 + i T_3, sorted by real then imaginary part.
inline std::vector<cplx> spectral_invariants(const NahmState& s) {
    Eigen::ComplexEigenSolver<CMat> es(s.complex_pair(), false);
    std::vector<cplx> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    std::sort(ev.begin(), ev.end(), [](cplx a, cplx b) { return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag(); });
    return ev;
}

/// Tr (T_2 + i T_3)^k for k = 1..n.
inline std::vector<cplx> trace_invariants(const NahmState& s) {
    const CMat C = s.complex_pair();
    CMat P = C;
    std::vector<cplx> r;
    for (int k = 1; k <= s.n(); ++k, P = P * C) r.push_back(P.trace());
    return r;
}

/// Largest change between two eigenvalue lists, relative to max(1, |a|).
/// Each entry of a is paired with the closest unused entry of b.
inline double invariant_drift(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    require(a.size() == b.size(), "invariant lists differ in length");
    std::vector<bool> used(b.size(), false);
    double scale = 1.0, d = 0.0;
    for (auto z : a) scale = std::max(scale, std::abs(z));
    for (auto z : a) {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b.size(); ++j)
            if (!used[j] && std::abs(z - b[j]) < bd) bd = std::abs(z - b[j]), best = j;
        used[best] = true;
        d = std::max(d, bd);
    }
    return d / scale;
}

namespace detail {

inline std::string sci(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", x);
    return buf;
}

inline void check_hermitian_pd(const CMat& h, const std::string& what) {
    require(h.rows() == h.cols(), what + " is not square");
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    require((h - h.adjoint()).cwiseAbs().maxCoeff() <= 1e-10 * scale, what + " is not Hermitian");
    Eigen::SelfAdjointEigenSolver<CMat> es(herm_part(h), Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 1e-10))
        throw Error(ErrorKind::Singular, what + " has smallest eigenvalue " + std::to_string(es.eigenvalues().minCoeff()));
}

/// f(h) for Hermitian h via the spectral decomposition.
template <class F>
CMat hermitian_function(const CMat& h, F f) {
    Eigen::SelfAdjointEigenSolver<CMat> es(herm_part(h));
    const Eigen::VectorXd lam = es.eigenvalues();
    Eigen::VectorXcd fl(lam.size());
    for (Eigen::Index i = 0; i < lam.size(); ++i) fl[i] = f(lam[i]);
    return es.eigenvectors() * fl.asDiagonal() * es.eigenvectors().adjoint();
}

} // namespace detail

inline CMat hermitian_sqrt(const CMat& h) {
    return detail::hermitian_function(h, [](double x) { return std::sqrt(x); });
}
inline CMat hermitian_exp(const CMat& s) {
    return detail::hermitian_function(s, [](double x) { return std::exp(x); });
}
inline CMat hermitian_log(const CMat& h) {
    return detail::hermitian_function(h, [](double x) { return std::log(x); });
}

/// V_B(h) = Tr(h B h^-1 B*) = |g B g^-1|^2 with g = h^(1/2).
inline double vb(const CMat& h, const CMat& B) {
    detail::check_hermitian_pd(h, "h");
    require(B.rows() == h.rows() && B.cols() == h.cols(), "B and h differ in size");
    const CMat g = hermitian_sqrt(h);
    return (g * B * g.inverse()).squaredNorm();
}

/// h_j at t_j = j / m, all positive definite, with the orbit datum B.
class HermitianPath {
public:
    HermitianPath(std::vector<CMat> h, CMat B) : h_(std::move(h)), B_(std::move(B)) {
        require(h_.size() >= 3, "a path needs at least three nodes");
        const auto n = h_[0].rows();
        require(B_.rows() == n && B_.cols() == n, "B has the wrong size");
        for (std::size_t j = 0; j < h_.size(); ++j) {
            require(h_[j].rows() == n, "path matrices differ in size");
            detail::check_hermitian_pd(h_[j], "h_" + std::to_string(j));
        }
    }

    int m() const noexcept { return int(h_.size()) - 1; }
    int n() const noexcept { return int(B_.rows()); }
    double dt() const noexcept { return 1.0 / m(); }
    const CMat& operator[](int j) const { return h_[std::size_t(j)]; }
    const std::vector<CMat>& nodes() const noexcept { return h_; }
    const CMat& B() const noexcept { return B_; }

private:
    std::vector<CMat> h_;
    CMat B_;
};

/// h_0^(1/2) exp(t log(h_0^(-1/2) h_1 h_0^(-1/2))) h_0^(1/2).
inline CMat geodesic(const CMat& h0, const CMat& h1, double t) {
    const CMat r = hermitian_sqrt(h0), ri = r.inverse();
    const CMat L = hermitian_log(herm_part(ri * h1 * ri));
    return herm_part(r * hermitian_exp(t * L) * r);
}

namespace detail {

/// Kinetic term of one interval with midpoint metric:
/// Tr((M^-1 D)^2) / (2 dt), M = (a + b) / 2, D = b - a.
inline double interval_kinetic(const CMat& a, const CMat& b, double dt) {
    const CMat X = (0.5 * (a + b)).inverse() * (b - a);
    return 0.5 * (X * X).trace().real() / dt;
}

} // namespace detail

/// 1/2 int Tr((h^-1 h')^2) dt + int V_B(h) dt on the node grid: interval
/// differences with a midpoint metric for the first, trapezoid for the second.
inline double action_h(const HermitianPath& p) {
    const double dt = p.dt();
    double e = 0.0;
    for (int j = 0; j < p.m(); ++j) e += detail::interval_kinetic(p[j], p[j + 1], dt);
    for (int j = 0; j <= p.m(); ++j) e += (j == 0 || j == p.m() ? 0.5 : 1.0) * dt * vb(p[j], p.B());
    return e;
}

/// Hermitian gradient of action_h with respect to each node h_j, so that
/// dE = sum_j Tr(grad_j dh_j) for Hermitian dh_j.
inline std::vector<CMat> action_h_gradient(const HermitianPath& p) {
    const int m = p.m(), n = p.n();
    const double dt = p.dt();
    std::vector<CMat> g(std::size_t(m + 1), CMat::Zero(n, n));
    for (int j = 0; j < m; ++j) {
        const CMat Mi = (0.5 * (p[j] + p[j + 1])).inverse();
        const CMat D = p[j + 1] - p[j];
        const CMat P = Mi * D * Mi;
        const CMat Q = P * D * Mi;
        g[std::size_t(j + 1)] += (P - 0.5 * Q) / dt;
        g[std::size_t(j)] += (-P - 0.5 * Q) / dt;
    }
    const CMat& B = p.B();
    for (int j = 0; j <= m; ++j) {
        const CMat hi = p[j].inverse();
        const double w = (j == 0 || j == m ? 0.5 : 1.0) * dt;
        g[std::size_t(j)] += w * (B * hi * B.adjoint() - hi * B.adjoint() * p[j] * B * hi);
    }
    for (auto& x : g) x = herm_part(x);
    return g;
}

/// Gradient with respect to S where h = exp(S): Daleckii-Krein pullback of G.
inline CMat exp_pullback(const CMat& S, const CMat& G) {
    Eigen::SelfAdjointEigenSolver<CMat> es(herm_part(S));
    const Eigen::VectorXd lam = es.eigenvalues();
    const CMat& U = es.eigenvectors();
    CMat Gt = U.adjoint() * G * U;
    for (Eigen::Index a = 0; a < lam.size(); ++a)
        for (Eigen::Index b = 0; b < lam.size(); ++b) {
            const double d = lam[a] - lam[b];
            const double q = std::abs(d) > 1e-12 * std::max(1.0, std::abs(lam[a]))
                                 ? (std::exp(lam[a]) - std::exp(lam[b])) / d
                                 : std::exp(0.5 * (lam[a] + lam[b]));
            Gt(a, b) *= q;
        }
    return herm_part(U * Gt * U.adjoint());
}

struct BvpOptions {
    double tol = 1e-8;
    int max_iter = 5000;
    double armijo = 1e-4;
    double min_step = 1e-12;
    /// Start from the geodesic between the endpoints; otherwise from
    /// S_j = (1 - t_j) log h_0 + t_j log h_1.
    bool geodesic_guess = true;
};

struct BvpResult {
    HermitianPath path;
    double action = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    /// Action after every accepted step (first entry: the initial guess).
    std::vector<double> history;
};

/// Discrete minimiser of action_h with h_0, h_m fixed. Interior nodes are
/// h_j = exp(S_j); the S-gradient is preconditioned by the inverse of the
/// discrete t-Laplacian (dt^-1 tridiag(-1, 2, -1)) and a backtracking Armijo
/// search picks the step. Converged when max_j |dE/dS_j|_F / dt < tol.
inline BvpResult solve_bvp(const CMat& h0, const CMat& h1, const CMat& B, int m, const BvpOptions& opt = {}) {
    require(m >= 8, "solve_bvp needs m >= 8");
    detail::check_hermitian_pd(h0, "h0");
    detail::check_hermitian_pd(h1, "h1");
    require(h1.rows() == h0.rows() && B.rows() == h0.rows() && B.cols() == h0.rows(), "matrix sizes differ");
    const int n = int(h0.rows());
    const double dt = 1.0 / m;

    std::vector<CMat> S(std::size_t(m + 1));
    const CMat L0 = hermitian_log(h0), L1 = hermitian_log(h1);
    for (int j = 1; j < m; ++j)
        S[std::size_t(j)] = opt.geodesic_guess ? hermitian_log(geodesic(h0, h1, j * dt))
                                               : CMat(herm_part((1.0 - j * dt) * L0 + (j * dt) * L1));
    auto build = [&](const std::vector<CMat>& s) {
        std::vector<CMat> h(std::size_t(m + 1));
        h[0] = herm_part(h0);
        h[std::size_t(m)] = herm_part(h1);
        for (int j = 1; j < m; ++j) h[std::size_t(j)] = herm_part(hermitian_exp(s[std::size_t(j)]));
        return HermitianPath(std::move(h), B);
    };
    auto s_gradient = [&](const HermitianPath& p, const std::vector<CMat>& s) {
        const auto gh = action_h_gradient(p);
        std::vector<CMat> gs(std::size_t(m + 1), CMat::Zero(n, n));
        for (int j = 1; j < m; ++j) gs[std::size_t(j)] = exp_pullback(s[std::size_t(j)], gh[std::size_t(j)]);
        return gs;
    };
    auto max_norm = [&](const std::vector<CMat>& g) {
        double r = 0.0;
        for (int j = 1; j < m; ++j) r = std::max(r, g[std::size_t(j)].norm());
        return r / dt;
    };
    // Thomas algorithm for dt^-1 tridiag(-1, 2, -1) on nodes 1..m-1, entrywise.
    auto precondition = [&](const std::vector<CMat>& g) {
        const double off = -1.0 / dt;
        std::vector<double> c(static_cast<std::size_t>(m + 1), 0.0);
        std::vector<CMat> x(static_cast<std::size_t>(m + 1), CMat::Zero(n, n));
        for (int r = 1; r < m; ++r) {
            const double piv = 2.0 / dt - off * c[std::size_t(r - 1)];
            c[std::size_t(r)] = off / piv;
            x[std::size_t(r)] = (g[std::size_t(r)] - off * x[std::size_t(r - 1)]) / piv;
        }
        for (int r = m - 2; r >= 1; --r) x[std::size_t(r)] -= c[std::size_t(r)] * x[std::size_t(r + 1)];
        return x;
    };

    HermitianPath path = build(S);
    double E = action_h(path);
    auto g = s_gradient(path, S);
    BvpResult res{path, E, max_norm(g), 0, {E}};
    while (res.gradient_norm >= opt.tol) {
        if (res.iterations >= opt.max_iter)
            throw Error(ErrorKind::NotConverged, "descent stopped at gradient norm " + detail::sci(res.gradient_norm));
        const auto dir = precondition(g);
        double slope = 0.0;
        for (int j = 1; j < m; ++j) slope += (g[std::size_t(j)].adjoint() * dir[std::size_t(j)]).trace().real();
        bool accepted = false;
        for (double a = 1.0; a >= opt.min_step; a *= 0.5) {
            std::vector<CMat> trial = S;
            for (int j = 1; j < m; ++j) trial[std::size_t(j)] = herm_part(S[std::size_t(j)] - a * dir[std::size_t(j)]);
            HermitianPath tp = build(trial);
            const double Et = action_h(tp);
            bool ok = Et <= E - opt.armijo * a * slope;
            // Near the minimum the decrease is below rounding; also accept
            // steps that keep E within rounding and shrink the gradient.
            std::vector<CMat> gt;
            if (ok || Et <= E + 1e-14 * std::max(1.0, std::abs(E))) {
                gt = s_gradient(tp, trial);
                ok = ok || max_norm(gt) < res.gradient_norm;
            }
            if (ok) {
                S = std::move(trial);
                path = std::move(tp);
                E = Et;
                g = gt;
                accepted = true;
                break;
            }
        }
        if (!accepted)
            throw Error(ErrorKind::NotConverged, "line search failed at gradient norm " + detail::sci(res.gradient_norm));
        ++res.iterations;
        res.gradient_norm = max_norm(g);
        res.history.push_back(E);
    }
    res.path = path;
    res.action = E;
    return res;
}

struct NahmReconstruction {
    std::vector<NahmState> trajectory;
    /// max over nodes 2..m-2 and i of |dT_i/dt + [T_0, T_i] - [T_j, T_k]|_F.
    /// The outer two nodes on each side differentiate one-sided T values a
    /// second time, which is only first order.
    double residual = 0.0;
};

namespace detail {

/// d/dt of a node sequence: centred inside, one-sided second order at the ends.
inline CMat node_derivative(const std::vector<CMat>& f, int j, double dt) {
    const int m = int(f.size()) - 1;
    const auto at = [&](int k) -> const CMat& { return f[std::size_t(k)]; };
    if (j == 0) return (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * dt);
    if (j == m) return (3.0 * at(m) - 4.0 * at(m - 1) + at(m - 2)) / (2.0 * dt);
    return (at(j + 1) - at(j - 1)) / (2.0 * dt);
}

} // namespace detail

/// Nahm data from a Hermitian path with g = h^(1/2): G = g' g^-1,
/// T_0 = -(G - G*)/2, T_1 = -i(G + G*)/2, C = g B g^-1, T_2 + i T_3 = C.
inline NahmReconstruction reconstruct_nahm(const HermitianPath& p) {
    const int m = p.m();
    require(m >= 4, "reconstruction needs m >= 4");
    const double dt = p.dt();
    const cplx I(0, 1);
    std::vector<CMat> g;
    for (const auto& h : p.nodes()) g.push_back(hermitian_sqrt(h));
    NahmReconstruction out;
    std::array<std::vector<CMat>, 4> T;
    for (int j = 0; j <= m; ++j) {
        const CMat gi = g[std::size_t(j)].inverse();
        const CMat G = detail::node_derivative(g, j, dt) * gi;
        const CMat C = g[std::size_t(j)] * p.B() * gi;
        NahmState s{{-0.5 * (G - G.adjoint()), -0.5 * I * (G + G.adjoint()), 0.5 * (C - C.adjoint()),
                     -0.5 * I * (C + C.adjoint())},
                    j * dt};
        for (std::size_t i = 0; i < 4; ++i) T[i].push_back(s.T[i]);
        out.trajectory.push_back(std::move(s));
    }
    for (int j = 2; j <= m - 2; ++j) {
        const auto rhs = nahm_rhs(out.trajectory[std::size_t(j)], true);
        for (std::size_t i = 1; i < 4; ++i)
            out.residual = std::max(out.residual, (detail::node_derivative(T[i], j, dt) - rhs[i]).norm());
    }
    return out;
}

} // namespace fbp
