#pragma once

// Batch scenarios: JSON configuration in, a JSON report plus CSV tables out.

#include "fbp/nahm.hpp"
#include "fbp/phi_solver.hpp"
#include "fbp/transforms.hpp"

#include <json.hpp>

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fbp::scenario {

using json = nlohmann::json;

/// Malformed or out-of-contract configuration (exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Table {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

struct Check {
    std::string name;
    double value;
    double threshold;
    /// true: pass when value <= threshold; false: pass when value >= threshold.
    bool upper = true;

    bool pass() const { return upper ? value <= threshold : value >= threshold; }
};

struct Outcome {
    json results = json::object();
    std::vector<Check> checks;
    std::vector<Table> tables;
    /// One line per stage for standard output.
    std::vector<std::string> log;
};

enum class Status { Ok, CheckFailed, SolverFailure, ConfigError };

inline const char* to_string(Status s) {
    switch (s) {
    case Status::Ok: return "ok";
    case Status::CheckFailed: return "check_failed";
    case Status::SolverFailure: return "solver_failure";
    case Status::ConfigError: return "config_error";
    }
    return "unknown";
}

inline int exit_code(Status s) {
    switch (s) {
    case Status::Ok: return 0;
    case Status::ConfigError: return 2;
    default: return 1;
    }
}

// ---------------------------------------------------------------------------
// Configuration access

/// Rejects keys of `obj` outside `allowed`.
inline void only_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items())
        if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

inline const json& section(const json& cfg, const char* key) {
    static const json empty = json::object();
    return cfg.contains(key) ? cfg.at(key) : empty;
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

template <class T>
T get_req(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
    return get_or<T>(obj, key, T{}, where);
}

/// Uniform doubles from raw 64-bit draws, identical on every standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    double normal() {
        const double u1 = 1.0 - uniform(), u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

private:
    std::mt19937_64 gen_;
};

struct Context {
    json cfg;
    std::uint64_t seed = 0;
    Rng rng{0};
};

// ---------------------------------------------------------------------------
// Field recipes

enum class FieldRole { Potential, Density, Plain };

/// Fourier recipe, inline values or seeded random modes.
///  Potential: amplitude a of mode k contributes (a / lambda_k) cos(...), i.e.
///             a density perturbation of size a.
///  Density:   1 + sum a cos(...) unless "mean" is given.
///  Plain:     sum a cos(...) + mean (default 0).
inline ScalarField make_field(const TorusGrid& g, const json& recipe, FieldRole role, Rng& rng, const std::string& where) {
    only_keys(recipe, where, {"modes", "values", "random", "mean"});
    const int ways = int(recipe.contains("modes")) + int(recipe.contains("values")) + int(recipe.contains("random"));
    if (ways > 1) throw ConfigError(where + ": give only one of modes / values / random");
    const double mean = get_or<double>(recipe, "mean", role == FieldRole::Density ? 1.0 : 0.0, where);
    if (recipe.contains("values")) {
        std::vector<double> v;
        try {
            v = recipe.at("values").get<std::vector<double>>();
        } catch (const json::exception&) {
            throw ConfigError(where + ".values: expected a list of numbers");
        }
        if (v.size() != g.size())
            throw ConfigError(where + ".values: expected " + std::to_string(g.size()) + " entries, got " +
                              std::to_string(v.size()));
        return ScalarField(g, std::move(v)) + (recipe.contains("mean") ? mean : 0.0);
    }
    struct Mode {
        std::array<int, 2> k;
        double a, phase;
        bool sine;
    };
    std::vector<Mode> modes;
    if (recipe.contains("modes")) {
        if (!recipe.at("modes").is_array()) throw ConfigError(where + ".modes: expected a list");
        int idx = 0;
        for (const auto& m : recipe.at("modes")) {
            const std::string w = where + ".modes[" + std::to_string(idx++) + "]";
            only_keys(m, w, {"k", "amplitude", "phase", "trig"});
            std::array<int, 2> k{0, 0};
            const json& kj = m.contains("k") ? m.at("k") : throw ConfigError(w + ": missing 'k'");
            if (kj.is_number_integer()) k[0] = kj.get<int>();
            else if (kj.is_array() && kj.size() == std::size_t(g.dim()) && kj[0].is_number_integer()) {
                k[0] = kj[0].get<int>();
                if (g.dim() == 2) k[1] = kj[1].get<int>();
            } else
                throw ConfigError(w + ".k: expected an integer or a list of d integers");
            if (k[0] == 0 && k[1] == 0) throw ConfigError(w + ".k: the zero mode is set by 'mean'");
            for (int c : k)
                if (std::abs(c) >= g.n() / 2) throw ConfigError(w + ".k: |k| must stay below n/2");
            const std::string trig = get_or<std::string>(m, "trig", "cos", w);
            if (trig != "cos" && trig != "sin") throw ConfigError(w + ".trig: expected cos or sin");
            modes.push_back({k, get_req<double>(m, "amplitude", w), get_or<double>(m, "phase", 0.0, w), trig == "sin"});
        }
    } else if (recipe.contains("random")) {
        const json& r = recipe.at("random");
        only_keys(r, where + ".random", {"modes", "amplitude"});
        const int kmax = get_or<int>(r, "modes", 3, where + ".random");
        const double amp = get_req<double>(r, "amplitude", where + ".random");
        if (kmax < 1 || kmax >= g.n() / 2) throw ConfigError(where + ".random.modes: must lie in [1, n/2)");
        std::vector<std::array<int, 2>> ks;
        for (int k1 = 0; k1 <= kmax; ++k1)
            for (int k2 = (g.dim() == 2 ? -kmax : 0); k2 <= (g.dim() == 2 ? kmax : 0); ++k2)
                if (k1 > 0 || k2 > 0) ks.push_back({k1, k2});
        // spread the budget so that the summed amplitude stays below amp
        for (const auto& k : ks) {
            const double a = amp * rng.uniform(-1.0, 1.0) / double(ks.size());
            modes.push_back({k, a, rng.uniform(0.0, two_pi), false});
        }
    }
    ScalarField f(g, mean);
    for (const auto& md : modes) {
        const auto ep = fourier_eigenpair(g, md.k, Trig::Cos);
        const double c = role == FieldRole::Potential ? md.a / ep.lambda : md.a;
        f += ScalarField::sample(g, [&](double x, double y) {
            const double arg = two_pi * (md.k[0] * x + md.k[1] * y) + md.phase;
            return c * (md.sine ? std::sin(arg) : std::cos(arg));
        });
    }
    return f;
}

/// A boundary potential given either as "phi<i>" (potential recipe) or
/// "rho<i>" (density recipe, inverted by the Poisson solve).
inline Potential boundary_potential(const TorusGrid& g, const json& data, int i, Context& ctx) {
    const std::string pk = "phi" + std::to_string(i), rk = "rho" + std::to_string(i);
    if (data.contains(pk) && data.contains(rk)) throw ConfigError("data: give only one of " + pk + " / " + rk);
    if (data.contains(rk)) return poisson_solve(make_field(g, data.at(rk), FieldRole::Density, ctx.rng, "data." + rk));
    if (data.contains(pk)) return Potential(make_field(g, data.at(pk), FieldRole::Potential, ctx.rng, "data." + pk));
    return Potential(ScalarField(g));
}

// ---------------------------------------------------------------------------
// Grid and options

struct GridParams {
    int d = 1, n = 32, m = 32, mz = 64;
    double M = 1.0;
};

inline GridParams grid_params(const json& cfg) {
    const json& g = section(cfg, "grid");
    only_keys(g, "grid", {"d", "n", "m", "mz", "M"});
    GridParams s;
    s.d = get_or(g, "d", s.d, "grid");
    s.n = get_or(g, "n", s.n, "grid");
    s.m = get_or(g, "m", s.m, "grid");
    s.mz = get_or(g, "mz", s.mz, "grid");
    s.M = get_or(g, "M", s.M, "grid");
    if (s.d != 1 && s.d != 2) throw ConfigError("grid.d: must be 1 or 2");
    if (s.n < 4 || s.n % 2) throw ConfigError("grid.n: must be even and >= 4");
    if (s.m < 2) throw ConfigError("grid.m: must be >= 2");
    if (s.mz < 8 || s.mz % 2) throw ConfigError("grid.mz: must be even and >= 8");
    if (!(s.M > 0.0)) throw ConfigError("grid.M: must be positive");
    return s;
}

inline double eps_of(const json& cfg, bool allow_zero = false) {
    const double e = get_or<double>(cfg, "eps", 1.0, "config");
    if (allow_zero ? !(e >= 0.0) : !(e > 0.0)) throw ConfigError(allow_zero ? "eps: must be >= 0" : "eps: must be positive");
    return e;
}

inline double check_threshold(const json& cfg, const char* key, double fallback) {
    return get_or<double>(section(cfg, "checks"), key, fallback, "checks");
}

inline PhiProblem phi_problem(const json& cfg, const Potential& p0, const Potential& p1, double eps, int m) {
    const json& s = section(section(cfg, "solver"), "newton");
    only_keys(s, "solver.newton", {"tol", "max_iter", "initial_step", "min_step", "schedule"});
    PhiProblem pr{p0.field(), p1.field(), eps, m};
    pr.newton.tol = get_or(s, "tol", pr.newton.tol, "solver.newton");
    pr.newton.max_iter = get_or(s, "max_iter", pr.newton.max_iter, "solver.newton");
    pr.initial_step = get_or(s, "initial_step", pr.initial_step, "solver.newton");
    pr.min_step = get_or(s, "min_step", pr.min_step, "solver.newton");
    pr.schedule = get_or(s, "schedule", pr.schedule, "solver.newton");
    return pr;
}

inline PsorOptions psor_options(const json& cfg) {
    const json& s = section(section(cfg, "solver"), "psor");
    only_keys(s, "solver.psor", {"omega", "tol", "max_sweeps", "nested"});
    PsorOptions o;
    o.omega = get_or(s, "omega", o.omega, "solver.psor");
    o.tol = get_or(s, "tol", o.tol, "solver.psor");
    o.max_sweeps = get_or(s, "max_sweeps", o.max_sweeps, "solver.psor");
    o.nested = get_or(s, "nested", o.nested, "solver.psor");
    if (!(o.omega > 0.0 && o.omega < 2.0)) throw ConfigError("solver.psor.omega: must lie in (0, 2)");
    return o;
}

// ---------------------------------------------------------------------------
// Output helpers

inline void append_field_rows(Table& t, const ScalarField& f, double third) {
    const auto& g = f.grid();
    for (std::size_t i = 0; i < g.size(); ++i) {
        std::vector<double> row{g.coord(i, 0)};
        if (g.dim() == 2) row.push_back(g.coord(i, 1));
        row.push_back(third);
        row.push_back(f[i]);
        t.rows.push_back(std::move(row));
    }
}

inline std::vector<std::string> field_header(int d, const char* third, const char* value = "value") {
    std::vector<std::string> h{"x1"};
    if (d == 2) h.push_back("x2");
    h.push_back(third);
    h.push_back(value);
    return h;
}

inline Table path_table(const std::string& name, const PathInH& path) {
    Table t{name, field_header(path.grid().dim(), "t"), {}};
    for (int j = 0; j <= path.m(); ++j) append_field_rows(t, path[j], double(j) / path.m());
    return t;
}

inline json field_json(const ScalarField& f) { return json(std::vector<double>(f.values().begin(), f.values().end())); }

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Scenarios

inline PhiSolution run_phi(const json& cfg, const Potential& p0, const Potential& p1, double eps, int m, Outcome& out) {
    Stopwatch sw;
    auto sol = solve_dirichlet(phi_problem(cfg, p0, p1, eps, m));
    out.log.push_back("solve_dirichlet: newton_iterations=" + std::to_string(sol.newton_iterations) +
                      " residual=" + fmt(sol.residual) + " time=" + fmt(sw.seconds()) + "s");
    return sol;
}

inline void solve_phi(Context& ctx, Outcome& out) {
    const json& cfg = ctx.cfg;
    only_keys(section(cfg, "data"), "data", {"phi0", "phi1", "rho0", "rho1"});
    only_keys(section(cfg, "solver"), "solver", {"newton"});
    only_keys(section(cfg, "checks"), "checks", {"residual", "min_q"});
    const GridParams gs = grid_params(cfg);
    const TorusGrid g(gs.d, gs.n);
    const double eps = eps_of(cfg);
    const Potential p0 = boundary_potential(g, section(cfg, "data"), 0, ctx);
    const Potential p1 = boundary_potential(g, section(cfg, "data"), 1, ctx);
    const PhiSolution sol = run_phi(cfg, p0, p1, eps, gs.m, out);
    const double q = min_q_positivity(sol.path);
    double min_rho = std::numeric_limits<double>::infinity();
    for (const auto& s : sol.path.slices()) min_rho = std::min(min_rho, min_density(s));
    out.results["newton_iterations"] = sol.newton_iterations;
    out.results["continuation"] = sol.accepted_s;
    out.results["residual"] = sol.residual;
    out.results["action"] = action(sol.path, eps);
    out.results["min_density"] = min_rho;
    out.results["min_q_positivity"] = q;
    out.checks.push_back({"residual", sol.residual, check_threshold(cfg, "residual", 1e-8)});
    out.checks.push_back({"min_q_positivity", q, check_threshold(cfg, "min_q", 0.0), false});
    out.tables.push_back(path_table("phi", sol.path));
}

inline void obstacle_results(const ObstacleProblem& pb, const PsorResult& ps, Outcome& out) {
    const auto as = active_set(ps.U, pb.L(), 1e-9);
    const auto& s = pb.slab();
    out.results["sweeps"] = ps.sweeps;
    out.results["energy_EM"] = energy_EM(ps.U, pb);
    out.results["complementarity"] = {{"min_U_minus_L", ps.residual.min_U_minus_L},
                                      {"min_residual", ps.residual.min_residual},
                                      {"max_complementarity", ps.residual.max_complementarity}};
    out.results["H0"] = field_json(as.H0);
    out.results["H1"] = field_json(as.H1);
    Table fb{"free_boundary", {"x1"}, {}};
    if (s.base().dim() == 2) fb.header.push_back("x2");
    fb.header.push_back("H0");
    fb.header.push_back("H1");
    for (std::size_t i = 0; i < s.base().size(); ++i) {
        std::vector<double> row{s.base().coord(i, 0)};
        if (s.base().dim() == 2) row.push_back(s.base().coord(i, 1));
        row.push_back(as.H0[i]);
        row.push_back(as.H1[i]);
        fb.rows.push_back(std::move(row));
    }
    out.tables.push_back(std::move(fb));
}

inline void solve_obstacle(Context& ctx, Outcome& out) {
    const json& cfg = ctx.cfg;
    only_keys(section(cfg, "data"), "data", {"phi0", "phi1", "rho0", "rho1"});
    only_keys(section(cfg, "solver"), "solver", {"psor"});
    only_keys(section(cfg, "checks"), "checks", {"complementarity"});
    const GridParams gs = grid_params(cfg);
    const TorusGrid g(gs.d, gs.n);
    const SlabGrid slab(g, gs.M, gs.mz);
    const double eps = eps_of(cfg);
    const Potential p0 = boundary_potential(g, section(cfg, "data"), 0, ctx);
    const Potential p1 = boundary_potential(g, section(cfg, "data"), 1, ctx);
    const auto pb = ObstacleProblem::from_potentials(p0, p1, slab, eps);
    Stopwatch sw;
    const auto ps = solve_psor(pb, psor_options(cfg));
    out.log.push_back("solve_psor: sweeps=" + std::to_string(ps.sweeps) +
                      " complementarity=" + fmt(ps.residual.max_complementarity) + " time=" + fmt(sw.seconds()) + "s");
    obstacle_results(pb, ps, out);
    out.checks.push_back({"complementarity", ps.residual.max_complementarity,
                          check_threshold(cfg, "complementarity", 10 * psor_options(cfg).tol)});
    Table u{"U", field_header(gs.d, "z"), {}};
    for (int j = 0; j <= slab.mz(); ++j) append_field_rows(u, ps.U.level(j), slab.z(j));
    out.tables.push_back(std::move(u));
}

inline void roundtrip(Context& ctx, Outcome& out) {
    const json& cfg = ctx.cfg;
    only_keys(section(cfg, "data"), "data", {"phi0", "phi1", "rho0", "rho1"});
    only_keys(section(cfg, "solver"), "solver", {"newton", "psor"});
    only_keys(section(cfg, "checks"), "checks", {"legendre_vs_psor", "roundtrip", "flux_mass", "rho_mismatch"});
    const GridParams gs = grid_params(cfg);
    const TorusGrid g(gs.d, gs.n);
    const SlabGrid slab(g, gs.M, gs.mz);
    const double eps = eps_of(cfg);
    const Potential p0 = boundary_potential(g, section(cfg, "data"), 0, ctx);
    const Potential p1 = boundary_potential(g, section(cfg, "data"), 1, ctx);
    const PhiSolution sol = run_phi(cfg, p0, p1, eps, gs.m, out);

    Stopwatch sw;
    const SlabField UL = legendre_phi_to_u(sol.path, slab);
    const auto pb = ObstacleProblem::from_potentials(p0, p1, slab, eps);
    const auto ps = solve_psor(pb, psor_options(cfg));
    const double e_a = (UL - ps.U).max_abs();
    out.log.push_back("legendre vs psor: max|dU|=" + fmt(e_a) + " sweeps=" + std::to_string(ps.sweeps) +
                      " time=" + fmt(sw.seconds()) + "s");

    sw = Stopwatch();
    const auto asL = active_set(UL, pb.L(), 1e-9);
    const auto thL = u_to_theta(UL, asL.mask);
    const auto lvL = level_set_family(thL, gs.m, eps);
    const auto rec = theta_to_phi(lvL, p0.density());
    const double c = mean(rec.path[0] - sol.path[0]);
    double e_b = 0.0;
    for (int j = 0; j <= gs.m; ++j) e_b = std::max(e_b, (rec.path[j] - sol.path[j] + (-c)).max_abs());
    out.log.push_back("round trip: max|dPhi|=" + fmt(e_b) + " time=" + fmt(sw.seconds()) + "s");

    // fluxes of the obstacle solution
    const auto as = active_set(ps.U, pb.L(), 1e-12);
    const auto th = u_to_theta(ps.U, as.mask);
    const auto lv = level_set_family(th, gs.m, eps);
    const auto rep = check_level_identities(th, lv, sol.path, 0.125, 0.875);
    const auto rep_full = check_level_identities(th, lv, sol.path);
    Table levels{"levels", {"t", "mass_error", "rho_mismatch"}, {}};
    Table hs{"level_sets", field_header(gs.d, "t", "h"), {}};
    // the end levels sit on the free boundary, where capture is first order;
    // checks use the same interior window as the identity report
    double mass = 0.0, mismatch = 0.0, mass_in = 0.0, mismatch_in = 0.0;
    for (int j = 0; j <= gs.m; ++j) {
        const double t = double(j) / gs.m;
        const double me = std::abs(integrate(lv.rho[std::size_t(j)]) - 1.0);
        const double mm = (lv.rho[std::size_t(j)] - density(sol.path[j])).max_abs();
        mass = std::max(mass, me);
        mismatch = std::max(mismatch, mm);
        if (t >= 0.125 && t <= 0.875) {
            mass_in = std::max(mass_in, me);
            mismatch_in = std::max(mismatch_in, mm);
        }
        levels.rows.push_back({t, me, mm});
        append_field_rows(hs, lv.h[std::size_t(j)], t);
    }
    out.results["legendre_vs_psor"] = e_a;
    out.results["roundtrip_error"] = e_b;
    out.results["additive_constant"] = c;
    out.results["max_flux_mass_error"] = mass;
    out.results["max_rho_mismatch"] = mismatch;
    out.results["interior_flux_mass_error"] = mass_in;
    out.results["interior_rho_mismatch"] = mismatch_in;
    out.results["identities"] = {{"theta_on_graph", rep.theta_on_graph},
                                 {"vertical_speed", rep.vertical_speed},
                                 {"conjugate_hessians", rep.conjugate_hessians},
                                 {"flux_law", rep.flux_law},
                                 {"flux_law_l2", rep.flux_law_l2},
                                 {"window", {0.125, 0.875}},
                                 {"flux_law_full_range", rep_full.flux_law}};
    obstacle_results(pb, ps, out);
    out.checks.push_back({"legendre_vs_psor", e_a, check_threshold(cfg, "legendre_vs_psor", 5e-3)});
    out.checks.push_back({"roundtrip", e_b, check_threshold(cfg, "roundtrip", 1e-2)});
    out.checks.push_back({"flux_mass_interior", mass_in, check_threshold(cfg, "flux_mass", 1e-3)});
    out.checks.push_back({"rho_mismatch_interior", mismatch_in, check_threshold(cfg, "rho_mismatch", 1e-2)});
    out.tables.push_back(std::move(levels));
    out.tables.push_back(std::move(hs));
    out.tables.push_back(path_table("phi", sol.path));
}

struct FlowSetup {
    TorusGrid g;
    double eps;
    TrajectoryState init;
    double dt;
    int steps;
    FlowOptions opt;
};

inline FlowSetup flow_setup(Context& ctx, std::initializer_list<const char*> data_keys) {
    const json& cfg = ctx.cfg;
    only_keys(section(cfg, "data"), "data", data_keys);
    only_keys(section(cfg, "solver"), "solver", {"dt", "t_end", "record_every", "filter", "margin"});
    const GridParams gs = grid_params(cfg);
    const TorusGrid g(gs.d, gs.n);
    const json& data = section(cfg, "data");
    const json& sv = section(cfg, "solver");
    const double eps = eps_of(cfg, true);
    ScalarField phi = data.contains("phi") ? make_field(g, data.at("phi"), FieldRole::Potential, ctx.rng, "data.phi")
                                           : ScalarField(g);
    ScalarField v = data.contains("phi_dot") ? make_field(g, data.at("phi_dot"), FieldRole::Plain, ctx.rng, "data.phi_dot")
                                             : ScalarField(g);
    const double dt = get_or(sv, "dt", 1e-3, "solver"), t_end = get_or(sv, "t_end", 1.0, "solver");
    if (!(dt > 0.0) || !(t_end > 0.0)) throw ConfigError("solver.dt and solver.t_end must be positive");
    FlowOptions opt;
    opt.record_every = get_or(sv, "record_every", 10, "solver");
    opt.filter = get_or(sv, "filter", opt.filter, "solver");
    opt.margin = get_or(sv, "margin", opt.margin, "solver");
    (void)Potential(phi, opt.margin);
    return {g, eps, {phi, v, 0.0}, dt, int(std::lround(t_end / dt)), opt};
}

inline void geodesic_flow(Context& ctx, Outcome& out) {
    only_keys(section(ctx.cfg, "checks"), "checks", {"v_convexity"});
    FlowSetup fs = flow_setup(ctx, {"phi", "phi_dot"});
    Stopwatch sw;
    const auto traj = forward_flow(fs.init, fs.eps, fs.dt, fs.steps, fs.opt);
    out.log.push_back("forward_flow: steps=" + std::to_string(fs.steps) + " time=" + fmt(sw.seconds()) + "s");
    Table tr{"trajectory", field_header(fs.g.dim(), "t"), {}};
    Table vt{"potential_V", {"t", "V", "min_density"}, {}};
    std::vector<double> V;
    for (const auto& s : traj) {
        append_field_rows(tr, s.phi, s.t);
        V.push_back(potential_V(s.phi));
        vt.rows.push_back({s.t, V.back(), min_density(s.phi)});
    }
    // second differences of V on the uniform record spacing
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j + 1 < V.size(); ++j)
        if (std::abs((traj[j + 1].t - traj[j].t) - (traj[j].t - traj[j - 1].t)) < 1e-12)
            worst = std::min(worst, V[j + 1] - 2 * V[j] + V[j - 1]);
    if (!std::isfinite(worst)) worst = 0.0;
    out.results["t_end"] = traj.back().t;
    out.results["V"] = V;
    out.results["min_second_difference_V"] = worst;
    out.checks.push_back({"v_convexity", worst, -check_threshold(ctx.cfg, "v_convexity", 1e-8), false});
    out.tables.push_back(std::move(vt));
    out.tables.push_back(std::move(tr));
}

inline std::vector<std::array<int, 2>> mode_list(const json& data, int d) {
    std::vector<std::array<int, 2>> ks;
    if (!data.contains("modes")) return {{1, 0}, {2, 0}, {3, 0}};
    for (const auto& k : data.at("modes")) {
        if (k.is_number_integer()) ks.push_back({k.get<int>(), 0});
        else if (k.is_array() && k.size() == std::size_t(d) && k[0].is_number_integer())
            ks.push_back({k[0].get<int>(), d == 2 ? k[1].get<int>() : 0});
        else
            throw ConfigError("data.modes: expected integers or lists of d integers");
    }
    return ks;
}

inline void conserve(Context& ctx, Outcome& out) {
    only_keys(section(ctx.cfg, "checks"), "checks", {"drift"});
    FlowSetup fs = flow_setup(ctx, {"phi", "phi_dot", "modes"});
    if (!(fs.eps > 0.0)) throw ConfigError("eps: the conserved quantities need eps > 0");
    const auto ks = mode_list(section(ctx.cfg, "data"), fs.g.dim());
    for (const auto& k : ks)
        if (k[0] == 0 && k[1] == 0) throw ConfigError("data.modes: k = 0 has no conserved quantity");
    Table q{"conserved", {"t"}, {}};
    for (const auto& k : ks) q.header.push_back("Q_" + std::to_string(k[0]) + (fs.g.dim() == 2 ? "_" + std::to_string(k[1]) : ""));
    std::vector<double> q0, scale, drift(ks.size(), 0.0);
    for (const auto& k : ks) {
        q0.push_back(conserved_quantity(fs.init.phi, fs.init.phi_dot, k, fs.eps));
        scale.push_back(conserved_quantity_scale(fs.init.phi, fs.init.phi_dot, k, fs.eps));
    }
    Stopwatch sw;
    std::string failure;
    std::vector<TrajectoryState> traj;
    try {
        traj = forward_flow(fs.init, fs.eps, fs.dt, fs.steps, fs.opt);
    } catch (const Error& e) {
        // keep the trace up to the failure; drift then counts as unbounded
        if (e.kind() != ErrorKind::AdmissibilityLost) throw;
        failure = e.what();
    }
    out.log.push_back("forward_flow: steps=" + std::to_string(fs.steps) + " time=" + fmt(sw.seconds()) + "s" +
                      (failure.empty() ? "" : " (" + failure + ")"));
    for (const auto& s : traj) {
        std::vector<double> row{s.t};
        for (std::size_t i = 0; i < ks.size(); ++i) {
            const double v = conserved_quantity(s.phi, s.phi_dot, ks[i], fs.eps);
            drift[i] = std::max(drift[i], std::abs(v - q0[i]) / scale[i]);
            row.push_back(v);
        }
        q.rows.push_back(std::move(row));
    }
    json per = json::array();
    for (std::size_t i = 0; i < ks.size(); ++i) {
        per.push_back({{"k", ks[i]}, {"initial", q0[i]}, {"relative_drift", failure.empty() ? drift[i] : INFINITY}});
        out.checks.push_back({"drift_k" + std::to_string(ks[i][0]) + (fs.g.dim() == 2 ? "_" + std::to_string(ks[i][1]) : ""),
                              failure.empty() ? drift[i] : std::numeric_limits<double>::infinity(),
                              check_threshold(ctx.cfg, "drift", 1e-6)});
    }
    out.results["modes"] = per;
    out.results["completed"] = failure.empty();
    if (!failure.empty()) out.results["failure"] = failure;
    out.tables.push_back(std::move(q));
}

/// Random admissible smooth field with kmax modes per axis.
inline ScalarField random_modes(const TorusGrid& g, Rng& rng, double amp, int kmax, bool potential) {
    json recipe = {{"random", {{"modes", kmax}, {"amplitude", amp}}}};
    return make_field(g, recipe, potential ? FieldRole::Potential : FieldRole::Plain, rng, "random");
}

inline void curvature(Context& ctx, Outcome& out) {
    const json& cfg = ctx.cfg;
    only_keys(section(cfg, "data"), "data", {"amplitude", "modes"});
    only_keys(section(cfg, "solver"), "solver", {"trials"});
    only_keys(section(cfg, "checks"), "checks", {"max_K", "reference"});
    const GridParams gs = grid_params(cfg);
    if (gs.d != 2) throw ConfigError("grid.d: curvature needs d = 2");
    const TorusGrid g(2, gs.n);
    const int trials = get_or(section(cfg, "solver"), "trials", 200, "solver");
    const double amp = get_or(section(cfg, "data"), "amplitude", 0.5, "data");
    const int kmax = get_or(section(cfg, "data"), "modes", 2, "data");
    if (trials < 1) throw ConfigError("solver.trials: must be >= 1");
    Table t{"curvature", {"trial", "K"}, {}};
    double kmax_seen = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < trials; ++i) {
        const Potential phi(random_modes(g, ctx.rng, amp, kmax, true));
        const ScalarField a = random_modes(g, ctx.rng, 1.0, kmax, false), b = random_modes(g, ctx.rng, 1.0, kmax, false);
        const double K = sectional_curvature(phi, a, b);
        kmax_seen = std::max(kmax_seen, K);
        t.rows.push_back({double(i), K});
    }
    const auto a = ScalarField::sample(g, [](double x, double) { return std::cos(two_pi * x); });
    const auto b = ScalarField::sample(g, [](double, double y) { return std::cos(two_pi * y); });
    // centred differences scale each derivative by sinc(2 pi / n)
    const double Kref = sectional_curvature(Potential(ScalarField(g)), a, b);
    const double sinc = std::sin(two_pi / gs.n) * gs.n / two_pi;
    const double rel = std::abs(Kref / (-4.0 * std::pow(M_PI, 4) * std::pow(sinc, 4)) - 1.0);
    out.results["trials"] = trials;
    out.results["max_K"] = kmax_seen;
    out.results["K_reference"] = Kref;
    out.results["K_reference_relative_error"] = rel;
    out.checks.push_back({"max_K", kmax_seen, check_threshold(cfg, "max_K", 1e-12)});
    out.checks.push_back({"K_reference", rel, check_threshold(cfg, "reference", 1e-9)});
    out.log.push_back("curvature: trials=" + std::to_string(trials) + " max K=" + fmt(kmax_seen) + " K_ref=" + fmt(Kref));
    out.tables.push_back(std::move(t));
}

/// Square complex matrix from [[a, b], ...] with entries either numbers or [re, im].
inline CMat make_matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty list of rows");
    const auto n = Eigen::Index(j.size());
    CMat a(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const json& row = j[std::size_t(r)];
        if (!row.is_array() || Eigen::Index(row.size()) != n) throw ConfigError(where + ": matrix must be square");
        for (Eigen::Index c = 0; c < n; ++c) {
            const json& e = row[std::size_t(c)];
            if (e.is_number()) a(r, c) = e.get<double>();
            else if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number())
                a(r, c) = cplx(e[0].get<double>(), e[1].get<double>());
            else
                throw ConfigError(where + ": entries must be numbers or [re, im]");
        }
    }
    return a;
}

inline CMat random_matrix(int n, Rng& rng, double scale) {
    CMat a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = cplx(scale * rng.normal(), scale * rng.normal());
    return a;
}

inline Table matrix_table(const std::string& name, const std::vector<std::pair<double, CMat>>& seq) {
    Table t{name, {"t", "row", "col", "re", "im"}, {}};
    for (const auto& [time, m] : seq)
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) t.rows.push_back({time, double(r), double(c), m(r, c).real(), m(r, c).imag()});
    return t;
}

inline json complex_list(const std::vector<cplx>& v) {
    json a = json::array();
    for (auto z : v) a.push_back({z.real(), z.imag()});
    return a;
}

inline void nahm_forward(Context& ctx, Outcome& out) {
    const json& cfg = ctx.cfg;
    const json& data = section(cfg, "data");
    only_keys(data, "data", {"T1", "T2", "T3", "pole", "random"});
    only_keys(section(cfg, "solver"), "solver", {"dt", "t_end", "record_every"});
    only_keys(section(cfg, "checks"), "checks", {"drift", "pole"});
    const json& sv = section(cfg, "solver");
    const double dt = get_or(sv, "dt", 1e-3, "solver"), t_end = get_or(sv, "t_end", 1.0, "solver");
    const int every = get_or(sv, "record_every", 10, "solver");
    if (!(dt > 0.0) || !(t_end > 0.0) || every < 1) throw ConfigError("solver: dt, t_end and record_every must be positive");
    NahmState s0;
    double pole_c = 0.0;
    if (data.contains("pole")) {
        only_keys(data.at("pole"), "data.pole", {"c"});
        pole_c = get_req<double>(data.at("pole"), "c", "data.pole");
        if (!(pole_c > 0.0)) throw ConfigError("data.pole.c: must be positive");
        CMat s1(2, 2), s2(2, 2), s3(2, 2);
        const cplx I(0, 1);
        s1 << 0, 1, 1, 0;
        s2 << 0, -I, I, 0;
        s3 << 1, 0, 0, -1;
        s0 = make_state(-0.5 * I * s1 / pole_c, -0.5 * I * s2 / pole_c, -0.5 * I * s3 / pole_c);
    } else if (data.contains("random")) {
        only_keys(data.at("random"), "data.random", {"n", "scale"});
        const int n = get_or(data.at("random"), "n", 3, "data.random");
        const double sc = get_or(data.at("random"), "scale", 0.25, "data.random");
        if (n < 1) throw ConfigError("data.random.n: must be >= 1");
        s0 = make_state(skew_part(random_matrix(n, ctx.rng, sc)), skew_part(random_matrix(n, ctx.rng, sc)),
                        skew_part(random_matrix(n, ctx.rng, sc)));
    } else {
        s0 = make_state(make_matrix(get_req<json>(data, "T1", "data"), "data.T1"),
                        make_matrix(get_req<json>(data, "T2", "data"), "data.T2"),
                        make_matrix(get_req<json>(data, "T3", "data"), "data.T3"));
        if (skew_defect(s0) > 1e-10) throw ConfigError("data: T1, T2, T3 must be skew-Hermitian");
    }
    Stopwatch sw;
    const auto traj = integrate_nahm(s0, t_end, dt, every);
    out.log.push_back("integrate_nahm: steps=" + std::to_string(int(std::lround(t_end / dt))) + " time=" + fmt(sw.seconds()) + "s");
    const auto ev0 = spectral_invariants(s0);
    Table inv{"invariants", {"t"}, {}};
    for (std::size_t k = 0; k < ev0.size(); ++k) {
        inv.header.push_back("re_" + std::to_string(k));
        inv.header.push_back("im_" + std::to_string(k));
    }
    double drift = 0.0, pole_err = 0.0;
    std::vector<std::pair<double, CMat>> t1;
    for (const auto& s : traj) {
        const auto ev = spectral_invariants(s);
        drift = std::max(drift, invariant_drift(ev0, ev));
        std::vector<double> row{s.t};
        for (auto z : ev) {
            row.push_back(z.real());
            row.push_back(z.imag());
        }
        inv.rows.push_back(std::move(row));
        t1.emplace_back(s.t, s.T[1]);
        if (pole_c > 0.0)
            for (std::size_t i = 1; i < 4; ++i)
                pole_err = std::max(pole_err, (s.T[i] - s0.T[i] * (pole_c / (pole_c - s.t))).cwiseAbs().maxCoeff());
    }
    out.results["n"] = s0.n();
    out.results["initial_invariants"] = complex_list(ev0);
    out.results["invariant_drift"] = drift;
    out.checks.push_back({"invariant_drift", drift, check_threshold(cfg, "drift", 1e-8)});
    if (pole_c > 0.0) {
        out.results["pole_error"] = pole_err;
        out.checks.push_back({"pole_solution", pole_err, check_threshold(cfg, "pole", 1e-8)});
    }
    out.tables.push_back(std::move(inv));
    out.tables.push_back(matrix_table("T1", t1));
}

inline void nahm_bvp(Context& ctx, Outcome& out) {
    const json& cfg = ctx.cfg;
    const json& data = section(cfg, "data");
    only_keys(data, "data", {"h0", "h1", "B", "random"});
    only_keys(section(cfg, "solver"), "solver", {"tol", "max_iter", "geodesic_guess"});
    only_keys(section(cfg, "checks"), "checks", {"residual", "geodesic"});
    const GridParams gs = grid_params(cfg);
    CMat h0, h1, B;
    if (data.contains("random")) {
        only_keys(data.at("random"), "data.random", {"n", "scale", "zero_B"});
        const int n = get_or(data.at("random"), "n", 3, "data.random");
        const double sc = get_or(data.at("random"), "scale", 0.2, "data.random");
        if (n < 1) throw ConfigError("data.random.n: must be >= 1");
        h0 = hermitian_exp(herm_part(random_matrix(n, ctx.rng, sc)));
        h1 = hermitian_exp(herm_part(random_matrix(n, ctx.rng, sc)));
        B = get_or(data.at("random"), "zero_B", false, "data.random") ? CMat(CMat::Zero(n, n)) : random_matrix(n, ctx.rng, sc);
    } else {
        h0 = make_matrix(get_req<json>(data, "h0", "data"), "data.h0");
        h1 = make_matrix(get_req<json>(data, "h1", "data"), "data.h1");
        B = data.contains("B") ? make_matrix(data.at("B"), "data.B") : CMat(CMat::Zero(h0.rows(), h0.rows()));
    }
    const json& sv = section(cfg, "solver");
    BvpOptions opt;
    opt.tol = get_or(sv, "tol", opt.tol, "solver");
    opt.max_iter = get_or(sv, "max_iter", opt.max_iter, "solver");
    opt.geodesic_guess = get_or(sv, "geodesic_guess", false, "solver");
    Stopwatch sw;
    const auto r = solve_bvp(h0, h1, B, gs.m, opt);
    const auto rec = reconstruct_nahm(r.path);
    out.log.push_back("solve_bvp: iterations=" + std::to_string(r.iterations) + " action=" + fmt(r.action) +
                      " residual(20)=" + fmt(rec.residual) + " time=" + fmt(sw.seconds()) + "s");
    out.results["iterations"] = r.iterations;
    out.results["action"] = r.action;
    out.results["gradient_norm"] = r.gradient_norm;
    out.results["action_history"] = r.history;
    out.results["nahm_residual"] = rec.residual;
    out.checks.push_back({"nahm_residual", rec.residual, check_threshold(cfg, "residual", 1e-3)});
    if (B.norm() == 0.0) {
        double dev = 0.0;
        for (int j = 0; j <= gs.m; ++j) dev = std::max(dev, (r.path[j] - geodesic(h0, h1, double(j) / gs.m)).cwiseAbs().maxCoeff());
        out.results["geodesic_deviation"] = dev;
        out.checks.push_back({"geodesic", dev, check_threshold(cfg, "geodesic", 1e-4)});
    }
    std::vector<std::pair<double, CMat>> seq;
    for (int j = 0; j <= gs.m; ++j) seq.emplace_back(double(j) / gs.m, r.path[j]);
    out.tables.push_back(matrix_table("h", seq));
}

inline void sweep_j(Context& ctx, Outcome& out) {
    const json& cfg = ctx.cfg;
    const json& data = section(cfg, "data");
    only_keys(data, "data", {"lambda", "rho", "z"});
    only_keys(section(cfg, "solver"), "solver", {"tol", "max_sweeps", "omega"});
    only_keys(section(cfg, "checks"), "checks", {});
    const GridParams gs = grid_params(cfg);
    const TorusGrid g(gs.d, gs.n);
    const ScalarField lambda = data.contains("lambda") ? make_field(g, data.at("lambda"), FieldRole::Plain, ctx.rng, "data.lambda")
                                                       : ScalarField(g);
    const ScalarField rho = data.contains("rho") ? make_field(g, data.at("rho"), FieldRole::Density, ctx.rng, "data.rho")
                                                 : ScalarField(g, 1.0);
    std::vector<double> zs;
    if (data.contains("z") && data.at("z").is_array()) zs = get_req<std::vector<double>>(data, "z", "data");
    else if (data.contains("z")) {
        only_keys(data.at("z"), "data.z", {"from", "to", "count"});
        const double a = get_req<double>(data.at("z"), "from", "data.z"), b = get_req<double>(data.at("z"), "to", "data.z");
        const int c = get_req<int>(data.at("z"), "count", "data.z");
        if (c < 2) throw ConfigError("data.z.count: must be >= 2");
        for (int i = 0; i < c; ++i) zs.push_back(a + (b - a) * i / (c - 1));
    } else
        throw ConfigError("data: missing 'z'");
    const json& sv = section(cfg, "solver");
    Stopwatch sw;
    const auto fam = family_sweep(lambda, rho, zs, get_or(sv, "tol", 1e-10, "solver"), get_or(sv, "max_sweeps", 1000000, "solver"),
                                  get_or(sv, "omega", 1.5, "solver"));
    out.log.push_back("family_sweep: members=" + std::to_string(fam.members.size()) + " time=" + fmt(sw.seconds()) + "s");
    Table mt{"members", {"z", "J", "free_fraction", "sweeps"}, {}};
    Table ut{"u", field_header(gs.d, "z"), {}};
    for (const auto& m : fam.members) {
        const VectorField gu = gradient(m.u);
        const double J = integrate(0.5 * dot(gu, gu) + rho * m.u);
        double free = 0.0;
        for (auto f : m.free_set) free += f;
        mt.rows.push_back({m.z, J, free / double(m.free_set.size()), double(m.sweeps)});
        append_field_rows(ut, m.u, m.z);
    }
    out.results["difference_quotient"] = fam.difference_quotient;
    out.results["members"] = fam.members.size();
    out.tables.push_back(std::move(mt));
    out.tables.push_back(std::move(ut));
}

inline const std::map<std::string, std::function<void(Context&, Outcome&)>>& registry() {
    static const std::map<std::string, std::function<void(Context&, Outcome&)>> r{
        {"solve-phi", solve_phi}, {"solve-obstacle", solve_obstacle}, {"roundtrip", roundtrip},
        {"geodesic", geodesic_flow},   {"curvature", curvature},           {"conserve", conserve},
        {"nahm-forward", nahm_forward}, {"nahm-bvp", nahm_bvp},       {"sweep-j", sweep_j}};
    return r;
}

// ---------------------------------------------------------------------------
// Driver

struct RunResult {
    Status status = Status::Ok;
    json report;
    std::vector<Table> tables;
    std::vector<std::string> log;
    std::string message;
};

/// Runs a parsed configuration; a seed override replaces the config seed.
inline RunResult run_config(const json& cfg, std::optional<std::uint64_t> seed_override = {}, int threads = 1) {
    RunResult rr;
    Outcome out;
    json& rep = rr.report;
    rep["threads"] = threads;
    try {
        only_keys(cfg, "config", {"kind", "seed", "grid", "eps", "data", "solver", "checks", "output"});
        const std::string kind = get_req<std::string>(cfg, "kind", "config");
        rep["kind"] = kind;
        const auto it = registry().find(kind);
        if (it == registry().end()) throw ConfigError("kind: unknown scenario '" + kind + "'");
        Context ctx;
        ctx.cfg = cfg;
        if (cfg.contains("seed") && !cfg.at("seed").is_number_unsigned())
            throw ConfigError("seed: must be a non-negative 64-bit integer");
        ctx.seed = seed_override ? *seed_override : get_or<std::uint64_t>(cfg, "seed", 0, "config");
        ctx.rng = Rng(ctx.seed);
        rep["seed"] = ctx.seed;
        rep["config"] = cfg;
        it->second(ctx, out);
        bool ok = true;
        for (const auto& c : out.checks) ok = ok && c.pass();
        rr.status = ok ? Status::Ok : Status::CheckFailed;
    } catch (const ConfigError& e) {
        rr.status = Status::ConfigError;
        rr.message = e.what();
        rep["error"] = {{"kind", "ConfigError"}, {"message", rr.message}};
    } catch (const Error& e) {
        rr.status = e.is_usage_error() ? Status::ConfigError : Status::SolverFailure;
        rr.message = e.kind() == ErrorKind::NotNormalized ? std::string("normalization violated: ") + e.what() : e.what();
        rep["error"] = {{"kind", to_string(e.kind())}, {"message", rr.message}};
    }
    rep["status"] = to_string(rr.status);
    rep["results"] = out.results;
    json checks = json::array();
    for (const auto& c : out.checks)
        checks.push_back({{"name", c.name},
                          {"value", c.value},
                          {"threshold", c.threshold},
                          {"comparison", c.upper ? "<=" : ">="},
                          {"pass", c.pass()}});
    rep["checks"] = checks;
    rr.tables = std::move(out.tables);
    rr.log = std::move(out.log);
    return rr;
}

inline std::string csv(const Table& t) {
    std::string s;
    for (std::size_t i = 0; i < t.header.size(); ++i) s += (i ? "," : "") + t.header[i];
    s += "\n";
    char buf[40];
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", row[i]);
            if (i) s += ",";
            s += buf;
        }
        s += "\n";
    }
    return s;
}

/// JSON text with non-finite numbers written as null (nlohmann's default).
inline std::string report_text(const json& report) { return report.dump(2) + "\n"; }

} // namespace fbp::scenario
