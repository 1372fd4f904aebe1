#pragma once

// The manifold H of potentials phi with 1 - Lap(phi) > 0, its L2(d mu_phi)
// metric, the particle action with potential -eps V, the Euler-Lagrange
// flow, the Levi-Civita connection and curvature.

#include "fbp/grid.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace fbp {

inline constexpr double default_margin = 1e-8;

/// Pointwise density 1 - Lap(phi) of d mu_phi against d mu.
inline ScalarField density(const ScalarField& phi) { return 1.0 - laplacian(phi); }

inline double min_density(const ScalarField& phi) { return density(phi).min(); }

/// An admissible potential: min(1 - Lap(phi)) >= margin.
class Potential {
public:
    explicit Potential(ScalarField phi, double margin = default_margin)
        : phi_(std::move(phi)), margin_(margin) {
        require(margin > 0.0, "admissibility margin must be positive");
        require(phi_.all_finite(), "potential has non-finite values");
        const double m = min_density(phi_);
        if (!(m >= margin_))
            throw Error(ErrorKind::Inadmissible,
                        "min(1 - Lap phi) = " + std::to_string(m) + " below margin");
    }

    const ScalarField& field() const noexcept { return phi_; }
    double margin() const noexcept { return margin_; }
    const TorusGrid& grid() const noexcept { return phi_.grid(); }
    ScalarField density() const { return fbp::density(phi_); }

private:
    ScalarField phi_;
    double margin_;
};

/// Slices Phi_j = Phi(., j/m), j = 0..m, every one admissible.
class PathInH {
public:
    explicit PathInH(std::vector<ScalarField> slices, double margin = default_margin)
        : s_(std::move(slices)), margin_(margin) {
        require(s_.size() >= 2, "a path needs at least two slices");
        for (std::size_t j = 0; j < s_.size(); ++j) {
            require(s_[j].grid() == s_.front().grid(), "path slices on different grids");
            const double md = min_density(s_[j]);
            if (!(md >= margin_))
                throw Error(ErrorKind::Inadmissible, "slice " + std::to_string(j) +
                                                         " has min(1 - Lap Phi) = " + std::to_string(md));
        }
    }

    /// Builds Phi(x, t_j) = f(x1, x2, t_j).
    static PathInH sample(const TorusGrid& g, int m, const std::function<double(double, double, double)>& f,
                          double margin = default_margin) {
        require(m >= 1, "path needs m >= 1");
        std::vector<ScalarField> s;
        for (int j = 0; j <= m; ++j) {
            const double t = double(j) / m;
            s.push_back(ScalarField::sample(g, [&](double x1, double x2) { return f(x1, x2, t); }));
        }
        return PathInH(std::move(s), margin);
    }

    int m() const noexcept { return int(s_.size()) - 1; }
    double dt() const noexcept { return 1.0 / m(); }
    const TorusGrid& grid() const noexcept { return s_.front().grid(); }
    const ScalarField& operator[](int j) const { return s_.at(std::size_t(j)); }
    const std::vector<ScalarField>& slices() const noexcept { return s_; }
    double margin() const noexcept { return margin_; }

private:
    std::vector<ScalarField> s_;
    double margin_;
};

struct TrajectoryState {
    ScalarField phi;
    ScalarField phi_dot;
    double t = 0.0;
};

// ---------------------------------------------------------------------------
// Time stencils on a family of slices spaced dt apart.

/// First t-derivative at slice j: centred inside, one-sided second order at the ends.
inline ScalarField time_derivative(const std::vector<ScalarField>& s, int j, double dt) {
    const int m = int(s.size()) - 1;
    require(m >= 2, "time derivative needs at least three slices");
    if (j == 0) return (-3.0 * s[0] + 4.0 * s[1] - s[2]) * (0.5 / dt);
    if (j == m) return (3.0 * s[std::size_t(m)] - 4.0 * s[std::size_t(m - 1)] + s[std::size_t(m - 2)]) * (0.5 / dt);
    return (s[std::size_t(j + 1)] - s[std::size_t(j - 1)]) * (0.5 / dt);
}

inline ScalarField second_time_derivative(const std::vector<ScalarField>& s, int j, double dt) {
    require(j >= 1 && j + 1 < int(s.size()), "second t-derivative only at interior slices");
    return (s[std::size_t(j + 1)] - 2.0 * s[std::size_t(j)] + s[std::size_t(j - 1)]) * (1.0 / (dt * dt));
}

// ---------------------------------------------------------------------------
// Metric, potential and action

inline double metric_norm_sq(const Potential& phi, const ScalarField& alpha) {
    return integrate(alpha * alpha * phi.density());
}

/// V(phi) = integral of phi.
inline double potential_V(const ScalarField& phi) { return integrate(phi); }

/// Trapezoid in t of 1/2 |phi_dot|^2_phi + eps V(phi).
inline double action(const PathInH& path, double eps) {
    require(eps >= 0.0, "eps must be non-negative");
    const int m = path.m();
    require(m >= 2, "action needs m >= 2");
    const double dt = path.dt();
    double total = 0.0;
    for (int j = 0; j <= m; ++j) {
        const auto& phi = path[j];
        const ScalarField v = time_derivative(path.slices(), j, dt);
        const double lag = 0.5 * integrate(v * v * density(phi)) + eps * potential_V(phi);
        total += (j == 0 || j == m ? 0.5 : 1.0) * lag;
    }
    return total * dt;
}

/// Phi_tt (1 - Lap Phi) - |grad Phi_t|^2 - eps on interior slices 1..m-1.
inline std::vector<ScalarField> el_residual(const PathInH& path, double eps) {
    const int m = path.m();
    require(m >= 2, "el_residual needs m >= 2");
    const double dt = path.dt();
    std::vector<ScalarField> out;
    for (int j = 1; j < m; ++j) {
        const ScalarField ptt = second_time_derivative(path.slices(), j, dt);
        const ScalarField pt = time_derivative(path.slices(), j, dt);
        const VectorField g = gradient(pt);
        out.push_back(ptt * density(path[j]) - dot(g, g) + (-eps));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Connection

/// W_t = -grad(phi_dot) / (1 - Lap phi).
inline VectorField transport_field(const ScalarField& phi, const ScalarField& phi_dot) {
    const ScalarField g = density(phi).map([](double r) {
        require(r > 0.0, "division by non-positive density", ErrorKind::Inadmissible);
        return -1.0 / r;
    });
    return g * gradient(phi_dot);
}

/// D_t psi = d psi/dt + (W_t, grad psi) along the path, at every slice.
inline std::vector<ScalarField> covariant_derivative(const PathInH& path, const std::vector<ScalarField>& psi) {
    require(psi.size() == path.slices().size(), "psi family and path differ in length");
    const double dt = path.dt();
    std::vector<ScalarField> out;
    for (int j = 0; j <= path.m(); ++j) {
        const VectorField w = transport_field(path[j], time_derivative(path.slices(), j, dt));
        out.push_back(time_derivative(psi, j, dt) + directional(w, psi[std::size_t(j)]));
    }
    return out;
}

/// Metric-compatibility defect at every slice:
/// d/dt <psi, chi>_phi - <D_t psi, chi>_phi - <psi, D_t chi>_phi.
inline std::vector<double> metric_compatibility_defect(const PathInH& path, const std::vector<ScalarField>& psi,
                                                       const std::vector<ScalarField>& chi) {
    const double dt = path.dt();
    const int m = path.m();
    std::vector<double> ip;
    for (int j = 0; j <= m; ++j) ip.push_back(integrate(psi[std::size_t(j)] * chi[std::size_t(j)] * density(path[j])));
    const auto dpsi = covariant_derivative(path, psi);
    const auto dchi = covariant_derivative(path, chi);
    std::vector<double> out;
    for (int j = 1; j < m; ++j) {
        const double lhs = (ip[std::size_t(j + 1)] - ip[std::size_t(j - 1)]) / (2.0 * dt);
        const double rhs = integrate((dpsi[std::size_t(j)] * chi[std::size_t(j)] + psi[std::size_t(j)] * dchi[std::size_t(j)]) *
                                     density(path[j]));
        out.push_back(lhs - rhs);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Euler-Lagrange flow

struct FlowOptions {
    double margin = default_margin;
    /// Relative Fourier-filter threshold applied after each step; 0 disables it.
    double filter = 1e-15;
    /// Keep every k-th state (the final state is always kept).
    int record_every = 1;
};

/// phi_ddot = (|grad phi_dot|^2 + eps) / (1 - Lap phi).
inline ScalarField flow_acceleration(const ScalarField& phi, const ScalarField& v, double eps) {
    const VectorField g = gradient(v);
    return (dot(g, g) + eps) / density(phi);
}

/// Classical RK4 on (phi, phi_dot). Throws AdmissibilityLost when
/// min(1 - Lap phi) drops below the margin.
inline std::vector<TrajectoryState> forward_flow(const TrajectoryState& init, double eps, double dt, int steps,
                                                 const FlowOptions& opt = {}) {
    require(dt > 0.0, "dt must be positive");
    require(steps >= 0, "steps must be non-negative");
    require(eps >= 0.0, "eps must be non-negative");
    require(opt.record_every >= 1, "record_every must be >= 1");
    (void)Potential(init.phi, opt.margin);

    std::vector<TrajectoryState> out{init};
    ScalarField p = init.phi, v = init.phi_dot;
    double t = init.t;
    for (int s = 1; s <= steps; ++s) {
        const ScalarField k1p = v, k1v = flow_acceleration(p, v, eps);
        const ScalarField p2 = p + (0.5 * dt) * k1p, v2 = v + (0.5 * dt) * k1v;
        const ScalarField k2p = v2, k2v = flow_acceleration(p2, v2, eps);
        const ScalarField p3 = p + (0.5 * dt) * k2p, v3 = v + (0.5 * dt) * k2v;
        const ScalarField k3p = v3, k3v = flow_acceleration(p3, v3, eps);
        const ScalarField p4 = p + dt * k3p, v4 = v + dt * k3v;
        const ScalarField k4p = v4, k4v = flow_acceleration(p4, v4, eps);
        p += (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        v += (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        t = init.t + s * dt;
        if (opt.filter > 0.0) {
            p = filter_small_modes(p, opt.filter);
            v = filter_small_modes(v, opt.filter);
        }
        const double md = (p.all_finite() && v.all_finite()) ? min_density(p) : -1.0;
        if (!(md >= opt.margin))
            throw Error(ErrorKind::AdmissibilityLost,
                        "step " + std::to_string(s) + " (t = " + std::to_string(t) + "), min(1 - Lap phi) = " +
                            std::to_string(md));
        if (s % opt.record_every == 0 || s == steps) out.push_back({p, v, t});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Curvature (d = 2)

/// nu_{alpha,beta} = g skew_gradient(g grad(alpha) x grad(beta)), g = 1/(1 - Lap phi).
inline VectorField curvature_vector(const Potential& phi, const ScalarField& alpha, const ScalarField& beta) {
    require(phi.grid().dim() == 2, "curvature needs d = 2");
    const ScalarField g = phi.density().map([](double r) { return 1.0 / r; });
    return g * skew_gradient(g * cross_scalar(gradient(alpha), gradient(beta)));
}

/// K = -integral of |d alpha ^ d beta|^2 / (1 - Lap phi).
inline double sectional_curvature(const Potential& phi, const ScalarField& alpha, const ScalarField& beta) {
    require(phi.grid().dim() == 2, "sectional curvature needs d = 2");
    const ScalarField c = cross_scalar(gradient(alpha), gradient(beta));
    return -integrate(c * c / phi.density());
}

/// (D_t D_s - D_s D_t) psi at (0,0) on the family phi + s alpha + t beta with
/// psi held fixed, s- and t-derivatives by central differences of width `step`.
inline ScalarField covariant_commutator(const Potential& phi, const ScalarField& alpha, const ScalarField& beta,
                                        const ScalarField& psi, double step) {
    require(phi.grid().dim() == 2, "commutator check needs d = 2");
    // (W_dir(s,t), grad psi) where W_dir = -grad(dir)/(1 - Lap(phi + s alpha + t beta)).
    auto transported = [&](const ScalarField& dir, double s, double t) {
        const ScalarField p = phi.field() + s * alpha + t * beta;
        return directional(transport_field(p, dir), psi);
    };
    const ScalarField dt_psi = transported(beta, 0.0, 0.0);
    const ScalarField ds_psi = transported(alpha, 0.0, 0.0);
    const ScalarField d_s_of_dt = (transported(beta, step, 0.0) - transported(beta, -step, 0.0)) * (0.5 / step);
    const ScalarField d_t_of_ds = (transported(alpha, 0.0, step) - transported(alpha, 0.0, -step)) * (0.5 / step);
    const ScalarField ds_dt = d_s_of_dt + directional(transport_field(phi.field(), alpha), dt_psi);
    const ScalarField dt_ds = d_t_of_ds + directional(transport_field(phi.field(), beta), ds_psi);
    return dt_ds - ds_dt;
}

struct IdentityResiduals {
    double curl_of_wedge = 0.0;        // curl(v x w) vs [v,w] + (div v) w - (div w) v
    double curl_of_scaled_wedge = 0.0; // curl(f v x w) vs f curl(v x w) + (v, grad f) w - (w, grad f) v
};

/// Lie bracket [v, w] = (v . grad) w - (w . grad) v.
inline VectorField lie_bracket(const VectorField& v, const VectorField& w) {
    std::vector<ScalarField> c;
    for (int a = 0; a < v.dim(); ++a) c.push_back(directional(v, w[a]) - directional(w, v[a]));
    return VectorField(std::move(c));
}

/// curl on bivectors in the orientation for which both vector identities hold
/// with the bracket above; it is the negative of skew_gradient.
inline VectorField curl(const ScalarField& bivector) {
    const VectorField s = skew_gradient(bivector);
    return VectorField({-s[0], -s[1]});
}

inline IdentityResiduals check_vector_identities(const VectorField& v, const VectorField& w, const ScalarField& f) {
    require(v.grid().dim() == 2, "vector identities need d = 2");
    const ScalarField vw = cross_scalar(v, w);
    const VectorField lhs8 = curl(vw);
    const VectorField rhs8 = lie_bracket(v, w) + divergence(v) * w - divergence(w) * v;
    const VectorField lhs9 = curl(f * vw);
    const VectorField rhs9 = f * lhs8 + directional(v, f) * w - directional(w, f) * v;
    return {(lhs8 - rhs8).max_abs(), (lhs9 - rhs9).max_abs()};
}

// ---------------------------------------------------------------------------
// Conserved quantities of the flow

/// integral of exp(sqrt(lambda/eps) phi_dot) f_lambda (1 - Lap phi), discrete eigenpair.
inline double conserved_quantity(const ScalarField& phi, const ScalarField& phi_dot, std::array<int, 2> k,
                                 double eps, Trig kind = Trig::Cos) {
    require(eps > 0.0, "conserved quantity needs eps > 0");
    const auto [f, lambda] = fourier_eigenpair(phi.grid(), k, kind);
    const double c = std::sqrt(lambda / eps);
    return integrate(phi_dot.map([c](double v) { return std::exp(c * v); }) * f * density(phi));
}

/// Same integrand with |f_lambda|; a positive scale for relative drift.
inline double conserved_quantity_scale(const ScalarField& phi, const ScalarField& phi_dot, std::array<int, 2> k,
                                       double eps, Trig kind = Trig::Cos) {
    require(eps > 0.0, "conserved quantity needs eps > 0");
    const auto [f, lambda] = fourier_eigenpair(phi.grid(), k, kind);
    const double c = std::sqrt(lambda / eps);
    return integrate(phi_dot.map([c](double v) { return std::exp(c * v); }) * f.map([](double x) { return std::abs(x); }) *
                     density(phi));
}

} // namespace fbp
