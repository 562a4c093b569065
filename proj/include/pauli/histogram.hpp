// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pauli/errors.hpp"
#include "pauli/geometry.hpp"
#include "pauli/sampler.hpp"

namespace pauli {

// ---------------------------------------------------------------------------
// Mollweide equal-area projection
// ---------------------------------------------------------------------------

/// Mollweide projection of (theta, phi) — polar angle in [0, pi], azimuth
/// wrapped to (-pi, pi] — onto the ellipse x in [-2*sqrt(2), 2*sqrt(2)],
/// y in [-sqrt(2), sqrt(2)]. The auxiliary angle psi solves
/// 2 psi + sin(2 psi) = pi cos(theta), found by bracketed Newton iteration to
/// a residual of 1e-12; then x = (2 sqrt(2)/pi) phi cos(psi),
/// y = sqrt(2) sin(psi). Equal-area: d(x,y) = (2 sqrt(2)/pi) dOmega.
inline std::pair<double, double> mollweide_project(double theta, double phi) {
    if (!(theta >= 0.0 && theta <= kPi))
        throw std::invalid_argument("mollweide_project: theta outside [0, pi]");
    phi = wrap_angle(phi);
    const double target = kPi * std::cos(theta);

    // Solve f(psi) = 2 psi + sin(2 psi) - target = 0. f is strictly
    // increasing on (-pi/2, pi/2) with flat endpoints, so Newton steps are
    // safeguarded by bisection on the bracket.
    double lo = -0.5 * kPi, hi = 0.5 * kPi;
    double psi = std::asin(std::clamp(std::cos(theta), -1.0, 1.0));
    double f = 2.0 * psi + std::sin(2.0 * psi) - target;
    for (int it = 0; it < 100 && std::abs(f) > 1e-12; ++it) {
        if (f > 0.0) hi = psi;
        else lo = psi;
        const double df = 2.0 + 2.0 * std::cos(2.0 * psi);
        double next = (df > 1e-12) ? psi - f / df : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        psi = next;
        f = 2.0 * psi + std::sin(2.0 * psi) - target;
    }
    const double sqrt2 = std::sqrt(2.0);
    return {2.0 * sqrt2 / kPi * phi * std::cos(psi), sqrt2 * std::sin(psi)};
}

/// Inverse Mollweide: recovers (theta, phi) from ellipse coordinates.
/// Points outside the ellipse (beyond 1e-9 slack) are rejected.
inline std::pair<double, double> mollweide_unproject(double x, double y) {
    const double sqrt2 = std::sqrt(2.0);
    const double sy = y / sqrt2;
    if (std::abs(sy) > 1.0 + 1e-9)
        throw std::invalid_argument("mollweide_unproject: point outside ellipse");
    const double psi = std::asin(std::clamp(sy, -1.0, 1.0));
    const double cos_theta = std::clamp((2.0 * psi + std::sin(2.0 * psi)) / kPi, -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    const double cpsi = std::cos(psi);
    double phi = 0.0;
    if (cpsi > 1e-12) {
        phi = x * kPi / (2.0 * sqrt2 * cpsi);
        if (std::abs(phi) > kPi * (1.0 + 1e-9))
            throw std::invalid_argument("mollweide_unproject: point outside ellipse");
        phi = wrap_angle(phi);
    }
    return {theta, phi};
}

// ---------------------------------------------------------------------------
// Histogram grids
// ---------------------------------------------------------------------------

/// How ambient points map to the two histogram axes:
///   Cartesian — (x, y) trap coordinates (1D uses y = 0; 3D projects to xy);
///   ThetaPhi  — sphere points binned as (phi, theta), row measure weighted;
///   Lambert   — sphere points binned as (phi, cos theta); cylindrical
///               equal-area, so every bin covers the same solid angle;
///   Mollweide — sphere points through mollweide_project.
enum class Projection { Cartesian, ThetaPhi, Lambert, Mollweide };

inline const char* to_string(Projection p) {
    switch (p) {
        case Projection::Cartesian: return "cartesian";
        case Projection::ThetaPhi: return "theta_phi";
        case Projection::Lambert: return "lambert";
        case Projection::Mollweide: return "mollweide";
    }
    return "?";
}

inline Projection projection_from_string(const std::string& s) {
    if (s == "cartesian") return Projection::Cartesian;
    if (s == "theta_phi") return Projection::ThetaPhi;
    if (s == "lambert") return Projection::Lambert;
    if (s == "mollweide") return Projection::Mollweide;
    throw std::invalid_argument("unknown projection: " + s);
}

struct HistogramSpec {
    Projection projection = Projection::Cartesian;
    int nx = 128, ny = 128;
    double x_min = -4.0, x_max = 4.0;
    double y_min = -4.0, y_max = 4.0;

    static HistogramSpec cartesian(int nx, int ny, double x_min, double x_max, double y_min,
                                   double y_max) {
        return {Projection::Cartesian, nx, ny, x_min, x_max, y_min, y_max};
    }
    /// x axis = phi in (-pi, pi], y axis = theta in [0, pi].
    static HistogramSpec theta_phi(int n_theta, int n_phi) {
        return {Projection::ThetaPhi, n_phi, n_theta, -kPi, kPi, 0.0, kPi};
    }
    /// x axis = phi in (-pi, pi], y axis = cos(theta) in [-1, 1]; every bin
    /// covers the same solid angle.
    static HistogramSpec lambert(int n_z, int n_phi) {
        return {Projection::Lambert, n_phi, n_z, -kPi, kPi, -1.0, 1.0};
    }
    static HistogramSpec mollweide(int nx, int ny) {
        const double sqrt2 = std::sqrt(2.0);
        return {Projection::Mollweide, nx, ny, -2.0 * sqrt2, 2.0 * sqrt2, -sqrt2, sqrt2};
    }

    friend bool operator==(const HistogramSpec&, const HistogramSpec&) = default;
};

inline void validate(const HistogramSpec& s) {
    if (s.nx < 1 || s.ny < 1) throw std::invalid_argument("histogram needs at least one bin per axis");
    if (!(s.x_max > s.x_min) || !(s.y_max > s.y_min))
        throw std::invalid_argument("histogram axis range is empty");
}

/// Sensible default grid for a geometry: +/-4a Cartesian for traps (1D gets
/// a single y row), Mollweide ellipse for the sphere.
inline HistogramSpec default_histogram_spec(const Geometry& g, int nx = 128, int ny = 128) {
    switch (g.kind) {
        case GeometryKind::Harmonic1D:
            return HistogramSpec::cartesian(nx, 1, -4.0 * g.scale, 4.0 * g.scale, -0.5, 0.5);
        case GeometryKind::Harmonic2D:
        case GeometryKind::Harmonic3D:
            return HistogramSpec::cartesian(nx, ny, -4.0 * g.scale, 4.0 * g.scale,
                                            -4.0 * g.scale, 4.0 * g.scale);
        case GeometryKind::Sphere: return HistogramSpec::mollweide(nx, ny);
    }
    return {};
}

/// Dense 2D bin-count grid. Row-major: counts[iy * nx + ix]. Conservation:
/// sum(counts) + out_of_range = total_shots * particles_per_shot.
struct HistogramGrid {
    HistogramSpec spec;
    std::vector<std::int64_t> counts;
    std::int64_t total_shots = 0;
    int particles_per_shot = 0;
    std::int64_t out_of_range = 0;

    std::int64_t count(int ix, int iy) const { return counts[static_cast<std::size_t>(iy) * spec.nx + ix]; }
    std::int64_t& count(int ix, int iy) { return counts[static_cast<std::size_t>(iy) * spec.nx + ix]; }

    double x_edge(int i) const { return spec.x_min + (spec.x_max - spec.x_min) * i / spec.nx; }
    double y_edge(int j) const { return spec.y_min + (spec.y_max - spec.y_min) * j / spec.ny; }
    double x_center(int i) const { return spec.x_min + (spec.x_max - spec.x_min) * (i + 0.5) / spec.nx; }
    double y_center(int j) const { return spec.y_min + (spec.y_max - spec.y_min) * (j + 0.5) / spec.ny; }

    /// Measure of one bin on the underlying manifold: dx*dy for Cartesian,
    /// (equal-area) Mollweide, and Lambert (where dphi * dz is the solid
    /// angle); dphi * (cos(theta_lo) - cos(theta_hi)) solid angle for
    /// ThetaPhi rows.
    double bin_measure(int /*ix*/, int iy) const {
        const double dx = (spec.x_max - spec.x_min) / spec.nx;
        if (spec.projection != Projection::ThetaPhi)
            return dx * (spec.y_max - spec.y_min) / spec.ny;
        return dx * (std::cos(y_edge(iy)) - std::cos(y_edge(iy + 1)));
    }

    std::int64_t total_counts() const {
        std::int64_t s = 0;
        for (auto c : counts) s += c;
        return s;
    }
};

inline HistogramGrid make_histogram(const HistogramSpec& spec) {
    validate(spec);
    HistogramGrid g;
    g.spec = spec;
    g.counts.assign(static_cast<std::size_t>(spec.nx) * spec.ny, 0);
    return g;
}

/// Bin one ambient point (trap coordinates or sphere unit vector) according
/// to the grid's projection. Points on the closing edge fall in the last
/// bin; points outside the range increment out_of_range.
inline void histogram_insert(HistogramGrid& grid, const Vec3& point) {
    double u, v;
    switch (grid.spec.projection) {
        case Projection::Cartesian:
            u = point.x();
            v = point.y();
            break;
        case Projection::ThetaPhi: {
            double theta, phi;
            unit_to_spherical(point, theta, phi);
            u = (phi == -kPi) ? kPi : phi;
            v = theta;
            break;
        }
        case Projection::Lambert: {
            double theta, phi;
            unit_to_spherical(point, theta, phi);
            u = (phi == -kPi) ? kPi : phi;
            v = std::cos(theta);
            break;
        }
        case Projection::Mollweide: {
            double theta, phi;
            unit_to_spherical(point, theta, phi);
            const auto [x, y] = mollweide_project(theta, phi);
            u = x;
            v = y;
            break;
        }
        default: throw std::logic_error("unreachable");
    }
    const auto& s = grid.spec;
    if (u < s.x_min || u > s.x_max || v < s.y_min || v > s.y_max) {
        ++grid.out_of_range;
        return;
    }
    int ix = static_cast<int>((u - s.x_min) / (s.x_max - s.x_min) * s.nx);
    int iy = static_cast<int>((v - s.y_min) / (s.y_max - s.y_min) * s.ny);
    if (ix >= s.nx) ix = s.nx - 1;
    if (iy >= s.ny) iy = s.ny - 1;
    ++grid.count(ix, iy);
}

/// Histogram of a flat point list (e.g. aligned particle positions).
/// total_shots / particles_per_shot describe the provenance for the
/// conservation invariant.
inline HistogramGrid histogram(const std::vector<Vec3>& points, const HistogramSpec& spec,
                               std::int64_t total_shots, int particles_per_shot) {
    HistogramGrid grid = make_histogram(spec);
    grid.total_shots = total_shots;
    grid.particles_per_shot = particles_per_shot;
    for (const Vec3& p : points) histogram_insert(grid, p);
    return grid;
}

/// Histogram of every particle of every shot.
inline HistogramGrid histogram(const ShotSet& shots, const HistogramSpec& spec) {
    HistogramGrid grid = make_histogram(spec);
    grid.total_shots = static_cast<std::int64_t>(shots.size());
    grid.particles_per_shot = shots.particles;
    for (const Configuration& c : shots.configs)
        for (const Vec3& p : c.points) histogram_insert(grid, p);
    return grid;
}

}  // namespace pauli
