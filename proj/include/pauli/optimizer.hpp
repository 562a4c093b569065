// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pauli/geometry.hpp"
#include "pauli/rng.hpp"
#include "pauli/sampler.hpp"
#include "pauli/wavefunction.hpp"

namespace pauli {

/// Simulated-annealing schedule. Cooling is geometric per sweep; the run
/// stops at the first of T < t_end or n_sweeps sweeps. Proposal steps shrink
/// with temperature as step_scale * sqrt(T) (units of a on traps, radians on
/// the sphere).
struct AnnealSchedule {
    double t_start = 1.0;
    double t_end = 1e-4;
    int n_sweeps = 400;
    double cooling = 0.95;
    int steps_per_sweep = 200;
    double step_scale = 0.5;
    int restarts = 32;
    std::uint64_t seed = 0;
};

inline void validate(const AnnealSchedule& s) {
    if (!(s.t_start > s.t_end) || !(s.t_end > 0.0))
        throw std::invalid_argument("anneal schedule needs t_start > t_end > 0");
    if (s.n_sweeps < 1 || s.steps_per_sweep < 1 || s.restarts < 1)
        throw std::invalid_argument("anneal schedule counts must be positive");
    if (!(s.cooling > 0.0) || !(s.cooling < 1.0))
        throw std::invalid_argument("cooling factor must lie in (0,1)");
    if (!(s.step_scale > 0.0)) throw std::invalid_argument("step_scale must be positive");
}

/// A most-probable configuration: the located maximum of |Psi|^2.
struct Pattern {
    Configuration config;
    double log_density_at_max = -std::numeric_limits<double>::infinity();
};

/// Per-restart outcome of anneal(), for globality diagnostics.
struct AnnealReport {
    std::vector<double> restart_log_probs;  ///< refined log-density per restart
    int best_restart = 0;
    double best_fraction = 0.0;  ///< fraction of restarts within 1e-6 of the best
};

/// Deterministic polish: coordinate-wise pattern search with shrinking step.
/// Starts at step 0.1 (units of a on traps, radians on the sphere), halves
/// the step whenever a full pass over all coordinates yields no improvement,
/// and stops below 1e-7. Never decreases log_prob. Sphere moves walk along
/// geodesics in two tangent directions, so points stay exactly unit-norm.
inline Configuration refine(const OrbitalBasis& basis, const Configuration& config) {
    detail::check_system(basis, config);
    Configuration best = config;
    double best_lp = log_prob(basis, best);
    if (!std::isfinite(best_lp)) throw std::invalid_argument("refine: log_prob of input is not finite");

    const Geometry& g = basis.geometry;
    const bool trap = g.is_trap();
    const int n_dirs = trap ? g.dim() : 2;

    double step = 0.1;
    while (step >= 1e-7) {
        bool improved = false;
        for (int i = 0; i < best.size(); ++i) {
            for (int dir = 0; dir < n_dirs; ++dir) {
                for (int sign = -1; sign <= 1; sign += 2) {
                    Configuration cand = best;
                    if (trap) {
                        cand.points[i][dir] += sign * step * g.scale;
                    } else {
                        const Vec3 r = best.points[i];
                        Vec3 e = std::abs(r.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
                        const Vec3 t1 = (e - e.dot(r) * r).normalized();
                        const Vec3 t2 = r.cross(t1);
                        const Vec3& t = (dir == 0) ? t1 : t2;
                        cand.points[i] = std::cos(step) * r + sign * std::sin(step) * t;
                    }
                    const double lp = log_prob(basis, cand);
                    if (lp > best_lp) {
                        best = cand;
                        best_lp = lp;
                        improved = true;
                    }
                }
            }
        }
        if (!improved) step *= 0.5;
    }
    return best;
}

/// True when no single-coordinate perturbation of size eps (a or radians)
/// raises log_prob by more than gain_tol — the local-maximality contract a
/// Pattern satisfies.
inline bool is_local_maximum(const OrbitalBasis& basis, const Configuration& config,
                             double eps = 1e-4, double gain_tol = 1e-8) {
    const double lp0 = log_prob(basis, config);
    const Geometry& g = basis.geometry;
    const bool trap = g.is_trap();
    const int n_dirs = trap ? g.dim() : 2;
    for (int i = 0; i < config.size(); ++i) {
        for (int dir = 0; dir < n_dirs; ++dir) {
            for (int sign = -1; sign <= 1; sign += 2) {
                Configuration cand = config;
                if (trap) {
                    cand.points[i][dir] += sign * eps * g.scale;
                } else {
                    const Vec3 r = config.points[i];
                    Vec3 e = std::abs(r.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
                    const Vec3 t1 = (e - e.dot(r) * r).normalized();
                    const Vec3 t2 = r.cross(t1);
                    const Vec3& t = (dir == 0) ? t1 : t2;
                    cand.points[i] = std::cos(eps) * r + sign * std::sin(eps) * t;
                }
                if (log_prob(basis, cand) > lp0 + gain_tol) return false;
            }
        }
    }
    return true;
}

/// Locate the most probable configuration by multistart simulated annealing
/// (Metropolis steps with acceptance exp((logP' - logP)/T), single-particle
/// proposals, geometric cooling) followed by deterministic refinement of
/// each restart's best visit. Deterministic given schedule.seed; restart k
/// uses the independent stream (seed, k).
inline Pattern anneal(const OrbitalBasis& basis, const AnnealSchedule& schedule,
                      AnnealReport* report = nullptr) {
    validate(schedule);
    Pattern best_pattern;
    AnnealReport local_report;

    for (int r = 0; r < schedule.restarts; ++r) {
        Rng rng = Rng::for_stream(schedule.seed, static_cast<std::uint64_t>(r));
        Configuration current = detail::random_start(basis, rng);
        double lp = log_prob(basis, current);
        Configuration best = current;
        double best_lp = lp;

        double t = schedule.t_start;
        for (int sweep = 0; sweep < schedule.n_sweeps && t >= schedule.t_end; ++sweep) {
            const double sigma = schedule.step_scale * std::sqrt(t);
            SamplerParams move_params;
            move_params.step_sigma = sigma;
            move_params.update_mode = UpdateMode::SingleParticle;
            for (int step = 0; step < schedule.steps_per_sweep; ++step) {
                const Configuration proposal = propose_move(current, move_params, rng);
                const double lp_new = log_prob(basis, proposal);
                const double u = rng.uniform();
                const bool accept = std::isfinite(lp_new) &&
                                    (lp_new >= lp || std::exp((lp_new - lp) / t) >= u);
                if (accept) {
                    current = proposal;
                    lp = lp_new;
                    if (lp > best_lp) {
                        best = current;
                        best_lp = lp;
                    }
                }
            }
            t *= schedule.cooling;
        }

        const Configuration refined = refine(basis, best);
        const double refined_lp = log_prob(basis, refined);
        local_report.restart_log_probs.push_back(refined_lp);
        if (refined_lp > best_pattern.log_density_at_max) {
            best_pattern.config = refined;
            best_pattern.log_density_at_max = refined_lp;
            local_report.best_restart = r;
        }
    }

    int near_best = 0;
    for (double lp : local_report.restart_log_probs)
        if (lp >= best_pattern.log_density_at_max - 1e-6) ++near_best;
    local_report.best_fraction =
        static_cast<double>(near_best) / static_cast<double>(schedule.restarts);
    if (report) *report = local_report;
    return best_pattern;
}

}  // namespace pauli
