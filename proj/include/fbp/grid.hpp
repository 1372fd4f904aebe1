#pragma once

// Periodic finite-difference calculus on the unit flat torus T^d, d in {1, 2}.
//
// Node (i1[, i2]) sits at (i1 h[, i2 h]) with h = 1/n; the flat index is
// i1 for d = 1 and i1 * n + i2 for d = 2. Every operator is second-order
// centred with periodic wrap. The Laplacian carries the positive sign
// convention, laplacian(f) = -sum_i d_i^2 f.

#include "fbp/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace fbp {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

class TorusGrid {
public:
    TorusGrid(int dim, int nodes) : d_(dim), n_(nodes) {
        require(dim == 1 || dim == 2, "torus dimension must be 1 or 2");
        require(nodes >= 4 && nodes % 2 == 0, "nodes per axis must be even and >= 4");
    }

    int dim() const noexcept { return d_; }
    int n() const noexcept { return n_; }
    double h() const noexcept { return 1.0 / n_; }
    std::size_t size() const noexcept { return d_ == 1 ? std::size_t(n_) : std::size_t(n_) * n_; }
    double cell_volume() const noexcept { return d_ == 1 ? h() : h() * h(); }
    double volume() const noexcept { return 1.0; }

    /// Integer coordinate of a flat index along an axis (0-based axis).
    int node(std::size_t idx, int axis) const noexcept {
        if (d_ == 1) return int(idx);
        return axis == 0 ? int(idx / n_) : int(idx % n_);
    }
    double coord(std::size_t idx, int axis) const noexcept { return node(idx, axis) * h(); }

    std::size_t index(int i1, int i2 = 0) const noexcept {
        i1 = wrap(i1);
        if (d_ == 1) return std::size_t(i1);
        return std::size_t(i1) * n_ + std::size_t(wrap(i2));
    }

    /// Flat index of the node displaced by `step` along `axis`, periodically.
    std::size_t shift(std::size_t idx, int axis, int step) const noexcept {
        if (d_ == 1) return std::size_t(wrap(int(idx) + step));
        int i1 = int(idx / n_), i2 = int(idx % n_);
        if (axis == 0) i1 += step;
        else i2 += step;
        return index(i1, i2);
    }

    friend bool operator==(const TorusGrid&, const TorusGrid&) = default;

private:
    int wrap(int i) const noexcept { return ((i % n_) + n_) % n_; }

    int d_;
    int n_;
};

class ScalarField {
public:
    explicit ScalarField(const TorusGrid& g, double value = 0.0) : grid_(g), v_(g.size(), value) {}

    ScalarField(const TorusGrid& g, std::vector<double> values) : grid_(g), v_(std::move(values)) {
        require(v_.size() == g.size(), "field sample count does not match grid");
        for (double x : v_) require(std::isfinite(x), "non-finite field value");
    }

    /// Samples f(x1) or f(x1, x2) at the grid nodes.
    static ScalarField sample(const TorusGrid& g, const std::function<double(double, double)>& f) {
        std::vector<double> v(g.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = f(g.coord(i, 0), g.dim() == 2 ? g.coord(i, 1) : 0.0);
        return ScalarField(g, std::move(v));
    }

    const TorusGrid& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return v_.size(); }
    double operator[](std::size_t i) const noexcept { return v_[i]; }
    double& operator[](std::size_t i) noexcept { return v_[i]; }
    std::span<const double> values() const noexcept { return v_; }
    std::span<double> values() noexcept { return v_; }

    bool all_finite() const {
        return std::all_of(v_.begin(), v_.end(), [](double x) { return std::isfinite(x); });
    }
    double min() const { return *std::min_element(v_.begin(), v_.end()); }
    double max() const { return *std::max_element(v_.begin(), v_.end()); }
    double max_abs() const {
        double m = 0.0;
        for (double x : v_) m = std::max(m, std::abs(x));
        return m;
    }

    ScalarField& operator+=(const ScalarField& o) { return zip(o, [](double a, double b) { return a + b; }); }
    ScalarField& operator-=(const ScalarField& o) { return zip(o, [](double a, double b) { return a - b; }); }
    ScalarField& operator*=(const ScalarField& o) { return zip(o, [](double a, double b) { return a * b; }); }
    ScalarField& operator/=(const ScalarField& o) { return zip(o, [](double a, double b) { return a / b; }); }
    ScalarField& operator+=(double c) { for (double& x : v_) x += c; return *this; }
    ScalarField& operator*=(double c) { for (double& x : v_) x *= c; return *this; }

    template <class F>
    ScalarField map(F&& f) const {
        ScalarField r(grid_);
        for (std::size_t i = 0; i < v_.size(); ++i) r.v_[i] = f(v_[i]);
        return r;
    }

private:
    template <class Op>
    ScalarField& zip(const ScalarField& o, Op op) {
        require(o.grid_ == grid_, "fields live on different grids");
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] = op(v_[i], o.v_[i]);
        return *this;
    }

    TorusGrid grid_;
    std::vector<double> v_;
};

inline ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
inline ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
inline ScalarField operator*(ScalarField a, const ScalarField& b) { return a *= b; }
inline ScalarField operator/(ScalarField a, const ScalarField& b) { return a /= b; }
inline ScalarField operator*(double c, ScalarField a) { return a *= c; }
inline ScalarField operator*(ScalarField a, double c) { return a *= c; }
inline ScalarField operator+(ScalarField a, double c) { return a += c; }
inline ScalarField operator+(double c, ScalarField a) { return a += c; }
inline ScalarField operator-(double c, ScalarField a) { a *= -1.0; return a += c; }
inline ScalarField operator-(ScalarField a) { return a *= -1.0; }

/// d component fields on one grid.
class VectorField {
public:
    explicit VectorField(std::vector<ScalarField> comps) : c_(std::move(comps)) {
        require(!c_.empty(), "vector field needs at least one component");
        for (const auto& f : c_) require(f.grid() == c_.front().grid(), "components on different grids");
        require(int(c_.size()) == c_.front().grid().dim(), "component count must equal dimension");
    }
    static VectorField constant(const TorusGrid& g, std::array<double, 2> v) {
        std::vector<ScalarField> c;
        for (int a = 0; a < g.dim(); ++a) c.emplace_back(g, v[a]);
        return VectorField(std::move(c));
    }

    const TorusGrid& grid() const noexcept { return c_.front().grid(); }
    int dim() const noexcept { return int(c_.size()); }
    const ScalarField& operator[](int a) const { return c_.at(std::size_t(a)); }
    ScalarField& operator[](int a) { return c_.at(std::size_t(a)); }

    double max_abs() const {
        double m = 0.0;
        for (const auto& f : c_) m = std::max(m, f.max_abs());
        return m;
    }

private:
    std::vector<ScalarField> c_;
};

inline VectorField operator-(const VectorField& a, const VectorField& b) {
    std::vector<ScalarField> c;
    for (int i = 0; i < a.dim(); ++i) c.push_back(a[i] - b[i]);
    return VectorField(std::move(c));
}
inline VectorField operator+(const VectorField& a, const VectorField& b) {
    std::vector<ScalarField> c;
    for (int i = 0; i < a.dim(); ++i) c.push_back(a[i] + b[i]);
    return VectorField(std::move(c));
}
inline VectorField operator*(const ScalarField& f, const VectorField& v) {
    std::vector<ScalarField> c;
    for (int i = 0; i < v.dim(); ++i) c.push_back(f * v[i]);
    return VectorField(std::move(c));
}

// ---------------------------------------------------------------------------
// Difference operators

/// Centred first difference along one axis.
inline ScalarField partial(const ScalarField& f, int axis) {
    const auto& g = f.grid();
    ScalarField r(g);
    const double s = 0.5 / g.h();
    for (std::size_t i = 0; i < f.size(); ++i)
        r[i] = (f[g.shift(i, axis, 1)] - f[g.shift(i, axis, -1)]) * s;
    return r;
}

/// Three-point second difference along one axis.
inline ScalarField second_partial(const ScalarField& f, int axis) {
    const auto& g = f.grid();
    ScalarField r(g);
    const double s = 1.0 / (g.h() * g.h());
    for (std::size_t i = 0; i < f.size(); ++i)
        r[i] = (f[g.shift(i, axis, 1)] - 2.0 * f[i] + f[g.shift(i, axis, -1)]) * s;
    return r;
}

inline ScalarField laplacian(const ScalarField& f) {
    ScalarField r(f.grid());
    for (int a = 0; a < f.grid().dim(); ++a) r -= second_partial(f, a);
    return r;
}

inline VectorField gradient(const ScalarField& f) {
    std::vector<ScalarField> c;
    for (int a = 0; a < f.grid().dim(); ++a) c.push_back(partial(f, a));
    return VectorField(std::move(c));
}

inline ScalarField divergence(const VectorField& v) {
    ScalarField r(v.grid());
    for (int a = 0; a < v.dim(); ++a) r += partial(v[a], a);
    return r;
}

/// Pointwise Euclidean inner product (v, w).
inline ScalarField dot(const VectorField& v, const VectorField& w) {
    require(v.grid() == w.grid() && v.dim() == w.dim(), "vector fields do not match");
    ScalarField r(v.grid());
    for (int a = 0; a < v.dim(); ++a) r += v[a] * w[a];
    return r;
}

/// Directional derivative (v, grad f).
inline ScalarField directional(const VectorField& v, const ScalarField& f) { return dot(v, gradient(f)); }

inline double integrate(const ScalarField& f) {
    double s = 0.0;
    for (double x : f.values()) s += x;
    return s * f.grid().cell_volume();
}

inline double mean(const ScalarField& f) { return integrate(f) / f.grid().volume(); }

// ---------------------------------------------------------------------------
// Fourier modes

enum class Trig { Cos, Sin };

struct Eigenpair {
    ScalarField f;
    double lambda;
};

/// Discrete eigenvalue of the 3-point stencil for wave number k on n nodes.
inline double stencil_symbol(int k, int n) {
    const double h = 1.0 / n;
    return (2.0 - 2.0 * std::cos(two_pi * k * h)) / (h * h);
}

/// cos(2 pi k.x) or sin(2 pi k.x) with its exact discrete Laplacian eigenvalue.
inline Eigenpair fourier_eigenpair(const TorusGrid& g, std::array<int, 2> k, Trig kind = Trig::Cos) {
    if (g.dim() == 1) k[1] = 0;
    require(k[0] != 0 || k[1] != 0, "wave vector k = 0 has eigenvalue 0");
    for (int a = 0; a < g.dim(); ++a)
        require(std::abs(k[a]) < g.n() / 2, "wave number aliases on this grid (|k_i| >= n/2)");
    double lambda = 0.0;
    for (int a = 0; a < g.dim(); ++a) lambda += stencil_symbol(k[a], g.n());
    auto f = ScalarField::sample(g, [&](double x1, double x2) {
        const double arg = two_pi * (k[0] * x1 + k[1] * x2);
        return kind == Trig::Cos ? std::cos(arg) : std::sin(arg);
    });
    return {std::move(f), lambda};
}

// ---------------------------------------------------------------------------
// Two-dimensional exterior calculus

/// (d_2 s, -d_1 s): curl on Lambda^2 TX identified with functions (d = 2 only).
inline VectorField skew_gradient(const ScalarField& s) {
    require(s.grid().dim() == 2, "skew_gradient needs d = 2 (Lambda^2 TX is trivial in d = 1)");
    return VectorField({partial(s, 1), -partial(s, 0)});
}

/// v1 w2 - v2 w1 pointwise (d = 2 only).
inline ScalarField cross_scalar(const VectorField& v, const VectorField& w) {
    require(v.grid().dim() == 2, "cross_scalar needs d = 2");
    require(v.grid() == w.grid(), "vector fields on different grids");
    return v[0] * w[1] - v[1] * w[0];
}

// ---------------------------------------------------------------------------
// Spectral filtering

namespace detail {

// Naive separable DFT; grids here are small (n <= 256) and this runs once per
// time step at most.
inline void dft_1d(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    std::vector<std::complex<double>> out(n);
    const double sgn = inverse ? 1.0 : -1.0;
    std::vector<std::complex<double>> tw(n);
    for (std::size_t j = 0; j < n; ++j) tw[j] = std::polar(1.0, sgn * two_pi * double(j) / double(n));
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a[j] * tw[(j * k) % n];
        out[k] = s;
    }
    if (inverse)
        for (auto& x : out) x /= double(n);
    a.swap(out);
}

inline void dft(std::vector<std::complex<double>>& a, const TorusGrid& g, bool inverse) {
    const std::size_t n = std::size_t(g.n());
    if (g.dim() == 1) { dft_1d(a, inverse); return; }
    std::vector<std::complex<double>> line(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) line[j] = a[i * n + j];
        dft_1d(line, inverse);
        for (std::size_t j = 0; j < n; ++j) a[i * n + j] = line[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) line[i] = a[i * n + j];
        dft_1d(line, inverse);
        for (std::size_t i = 0; i < n; ++i) a[i * n + j] = line[i];
    }
}

} // namespace detail

/// Zeroes every Fourier coefficient whose modulus is below `rel_threshold`
/// times the largest non-constant coefficient (Krasny filter).
inline ScalarField filter_small_modes(const ScalarField& f, double rel_threshold) {
    const auto& g = f.grid();
    std::vector<std::complex<double>> a(f.values().begin(), f.values().end());
    detail::dft(a, g, false);
    double peak = 0.0;
    for (std::size_t i = 1; i < a.size(); ++i) peak = std::max(peak, std::abs(a[i]));
    const double cut = rel_threshold * std::max(peak, std::abs(a[0]));
    for (std::size_t i = 1; i < a.size(); ++i)
        if (std::abs(a[i]) < cut) a[i] = 0.0;
    detail::dft(a, g, true);
    ScalarField r(g);
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i].real();
    return r;
}

} // namespace fbp
