// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pauli/errors.hpp"
#include "pauli/geometry.hpp"
#include "pauli/rng.hpp"
#include "pauli/wavefunction.hpp"

namespace pauli {

/// Proposal style: move every particle per step (default) or a single
/// randomly chosen one (useful for mixing comparisons).
enum class UpdateMode { AllParticles, SingleParticle };

struct SamplerParams {
    double step_sigma = 0.25;  ///< trap: per-coordinate Gaussian std in units of a; sphere: rotation-angle std in radians
    long long burn_in = 10000;
    long long thin = 10;
    long long n_steps = 100000;
    std::uint64_t seed = 0;
    UpdateMode update_mode = UpdateMode::AllParticles;
};

inline void validate(const SamplerParams& p) {
    if (!(p.step_sigma > 0.0) || !std::isfinite(p.step_sigma))
        throw std::invalid_argument("step_sigma must be positive");
    if (p.burn_in < 0) throw std::invalid_argument("burn_in must be >= 0");
    if (p.thin < 1) throw std::invalid_argument("thin must be >= 1");
    if (p.n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
}

/// Ordered sample of configurations from one Markov chain. `geometry` and
/// `particles` duplicate what every element of `configs` shares, so empty
/// sets stay self-describing.
struct ShotSet {
    std::vector<Configuration> configs;
    SamplerParams params;
    double accept_rate = 0.0;
    Geometry geometry;
    int particles = 0;

    std::size_t size() const { return configs.size(); }
};

/// Symmetric Gaussian random-walk proposal for trap geometries: every
/// coordinate of every selected particle is perturbed by an independent
/// N(0, (step_sigma*a)^2) step. `only_particle` = -1 moves all particles.
inline Configuration propose_trap(const Configuration& config, double step_sigma, Rng& rng,
                                  int only_particle = -1) {
    if (!config.geometry.is_trap()) throw std::invalid_argument("propose_trap: geometry is not a trap");
    const int d = config.geometry.dim();
    const double sigma = step_sigma * config.geometry.scale;
    Configuration out = config;
    for (int i = 0; i < out.size(); ++i) {
        if (only_particle >= 0 && i != only_particle) continue;
        for (int k = 0; k < d; ++k) out.points[i][k] += sigma * rng.normal();
    }
    return out;
}

/// Uniform point on the unit sphere via theta = arccos(2u1 - 1),
/// phi = 2 pi u2.
inline Vec3 uniform_sphere_point(Rng& rng) {
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    return spherical_to_unit(std::acos(2.0 * u1 - 1.0), 2.0 * kPi * u2);
}

/// Great-circle random walk on the sphere: each selected particle r rotates
/// by a zero-mean Gaussian angle of std step_sigma about an axis
/// n = u - (u.r) r (u drawn uniformly on the sphere, redrawn while the
/// orthogonal component is degenerate), so the particle moves along a great
/// circle through r. The axis direction is independent of the angle's sign,
/// making the proposal symmetric.
inline Configuration propose_sphere(const Configuration& config, double step_sigma, Rng& rng,
                                    int only_particle = -1) {
    if (config.geometry.kind != GeometryKind::Sphere)
        throw std::invalid_argument("propose_sphere: geometry is not a sphere");
    Configuration out = config;
    for (int i = 0; i < out.size(); ++i) {
        if (only_particle >= 0 && i != only_particle) continue;
        const Vec3& r = config.points[i];
        Vec3 axis;
        double norm;
        do {
            const Vec3 u = uniform_sphere_point(rng);
            axis = u - u.dot(r) * r;
            norm = axis.norm();
        } while (norm < 1e-12);
        axis /= norm;
        const double angle = step_sigma * rng.normal();
        out.points[i] = (Eigen::AngleAxisd(angle, axis) * r).normalized();
    }
    return out;
}

/// Dispatch to the geometry-appropriate proposal; picks the particle itself
/// in single-particle mode (one uniform index draw before the move).
inline Configuration propose_move(const Configuration& config, const SamplerParams& params,
                                  Rng& rng) {
    int only = -1;
    if (params.update_mode == UpdateMode::SingleParticle)
        only = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(config.size())));
    if (config.geometry.is_trap()) return propose_trap(config, params.step_sigma, rng, only);
    return propose_sphere(config, params.step_sigma, rng, only);
}

namespace detail {

/// Draw a starting configuration with finite log_prob: particles uniform in
/// a ball of radius 3a (traps) or uniform on the sphere.
inline Configuration random_start(const OrbitalBasis& basis, Rng& rng) {
    const Geometry& g = basis.geometry;
    Configuration c;
    c.geometry = g;
    c.points.resize(basis.size(), Vec3::Zero());
    for (int attempt = 0; attempt < 1000; ++attempt) {
        for (Vec3& p : c.points) {
            if (g.is_trap()) {
                do {
                    p = Vec3::Zero();
                    for (int k = 0; k < g.dim(); ++k) p[k] = rng.uniform(-1.0, 1.0);
                } while (p.squaredNorm() > 1.0);
                p *= 3.0 * g.scale;
            } else {
                p = uniform_sphere_point(rng);
            }
        }
        if (std::isfinite(log_prob(basis, c))) return c;
    }
    throw NumericalError("metropolis_chain: could not find a finite-density start");
}

}  // namespace detail

/// Metropolis-Hastings chain targeting |Psi|^2. Acceptance: gamma =
/// exp(logP' - logP), accept iff gamma >= u with u uniform in [0,1); a
/// rejected step records a copy of the current configuration. Proposals with
/// non-finite log-density count as gamma = 0. Kept shots are those after
/// `burn_in` steps, one every `thin`; fully deterministic given the seed.
///
/// `init` may be empty (or have non-finite density), in which case the start
/// is resampled uniformly in a ball of radius 3a (traps) or on the sphere.
inline ShotSet metropolis_chain(const OrbitalBasis& basis, const Configuration& init,
                                const SamplerParams& params) {
    validate(params);
    Rng rng = Rng::for_stream(params.seed, 0);

    Configuration current;
    if (init.points.empty()) {
        current = detail::random_start(basis, rng);
    } else {
        detail::check_system(basis, init);
        current = init;
        if (!std::isfinite(log_prob(basis, current))) current = detail::random_start(basis, rng);
    }
    double logp = log_prob(basis, current);

    ShotSet shots;
    shots.params = params;
    shots.geometry = basis.geometry;
    shots.particles = static_cast<int>(basis.size());
    const long long n_kept = (params.n_steps - params.burn_in) / params.thin;
    if (n_kept > 0) shots.configs.reserve(static_cast<std::size_t>(n_kept));

    long long accepted = 0;
    for (long long t = 1; t <= params.n_steps; ++t) {
        const Configuration proposal = propose_move(current, params, rng);
        const double logp_new = log_prob(basis, proposal);
        const double u = rng.uniform();
        const bool accept =
            std::isfinite(logp_new) && (logp_new >= logp || std::exp(logp_new - logp) >= u);
        if (accept) {
            current = proposal;
            logp = logp_new;
            ++accepted;
        }
        if (t > params.burn_in && (t - params.burn_in) % params.thin == 0)
            shots.configs.push_back(current);
    }
    shots.accept_rate = static_cast<double>(accepted) / static_cast<double>(params.n_steps);
    return shots;
}

}  // namespace pauli
