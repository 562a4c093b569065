// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace pauli {

using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = std::numbers::pi;

/// Supported single-particle geometries. `scale` is the oscillator length a
/// for the harmonic traps and the radius R for the sphere (natural units,
/// default 1).
enum class GeometryKind { Harmonic1D, Harmonic2D, Harmonic3D, Sphere };

struct Geometry {
    GeometryKind kind = GeometryKind::Harmonic2D;
    double scale = 1.0;

    /// Ambient coordinate count: 1, 2, 3 for the traps, 3 for the sphere
    /// (unit vectors embedded in R^3).
    int dim() const {
        switch (kind) {
            case GeometryKind::Harmonic1D: return 1;
            case GeometryKind::Harmonic2D: return 2;
            case GeometryKind::Harmonic3D: return 3;
            case GeometryKind::Sphere: return 3;
        }
        return 0;
    }

    bool is_trap() const { return kind != GeometryKind::Sphere; }

    friend bool operator==(const Geometry&, const Geometry&) = default;
};

inline Geometry harmonic_1d(double a = 1.0) { return {GeometryKind::Harmonic1D, a}; }
inline Geometry harmonic_2d(double a = 1.0) { return {GeometryKind::Harmonic2D, a}; }
inline Geometry harmonic_3d(double a = 1.0) { return {GeometryKind::Harmonic3D, a}; }
inline Geometry sphere_geometry(double radius = 1.0) { return {GeometryKind::Sphere, radius}; }

inline const char* to_string(GeometryKind kind) {
    switch (kind) {
        case GeometryKind::Harmonic1D: return "1d";
        case GeometryKind::Harmonic2D: return "2d";
        case GeometryKind::Harmonic3D: return "3d";
        case GeometryKind::Sphere: return "sphere";
    }
    return "?";
}

inline GeometryKind geometry_kind_from_string(const std::string& s) {
    if (s == "1d") return GeometryKind::Harmonic1D;
    if (s == "2d") return GeometryKind::Harmonic2D;
    if (s == "3d") return GeometryKind::Harmonic3D;
    if (s == "sphere") return GeometryKind::Sphere;
    throw std::invalid_argument("unknown geometry kind: " + s);
}

inline void validate(const Geometry& g) {
    if (!(g.scale > 0.0) || !std::isfinite(g.scale))
        throw std::invalid_argument("geometry scale must be positive and finite");
}

/// One simultaneous position measurement of all particles ("single shot").
/// Trap points live in the first dim() components (the rest stay zero);
/// sphere points are unit 3-vectors.
struct Configuration {
    Geometry geometry;
    std::vector<Vec3> points;

    int size() const { return static_cast<int>(points.size()); }

    friend bool operator==(const Configuration&, const Configuration&) = default;
};

inline constexpr double kSphereNormTol = 1e-9;

inline void validate(const Configuration& c) {
    validate(c.geometry);
    const int d = c.geometry.dim();
    for (const Vec3& p : c.points) {
        if (!p.allFinite()) throw std::invalid_argument("configuration has non-finite coordinates");
        for (int k = d; k < 3; ++k)
            if (p[k] != 0.0)
                throw std::invalid_argument("configuration point has nonzero component beyond geometry dimension");
        if (c.geometry.kind == GeometryKind::Sphere && std::abs(p.norm() - 1.0) > kSphereNormTol)
            throw std::invalid_argument("sphere point is not unit-norm");
    }
}

// ---------------------------------------------------------------------------
// Angles and unit vectors
// ---------------------------------------------------------------------------

/// Wrap an angle to (-pi, pi].
inline double wrap_angle(double x) {
    double w = std::remainder(x, 2.0 * kPi);
    if (w <= -kPi) w = kPi;
    return w;
}

inline Vec3 spherical_to_unit(double theta, double phi) {
    const double st = std::sin(theta);
    return {st * std::cos(phi), st * std::sin(phi), std::cos(theta)};
}

inline void unit_to_spherical(const Vec3& r, double& theta, double& phi) {
    const double z = std::clamp(r.z() / r.norm(), -1.0, 1.0);
    theta = std::acos(z);
    phi = (r.x() == 0.0 && r.y() == 0.0) ? 0.0 : std::atan2(r.y(), r.x());
}

/// Geodesic angle between two unit vectors, in [0, pi].
inline double geodesic_angle(const Vec3& a, const Vec3& b) {
    return std::acos(std::clamp(a.dot(b), -1.0, 1.0));
}

}  // namespace pauli
