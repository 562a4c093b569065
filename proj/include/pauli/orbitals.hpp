// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pauli/geometry.hpp"

namespace pauli {

/// Largest supported shell count (and hence largest Hermite order / spherical
/// harmonic degree). Keeps per-point evaluation tables on the stack.
inline constexpr int kMaxShells = 24;

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

inline double factorial(int n) {
    double f = 1.0;
    for (int k = 2; k <= n; ++k) f *= k;
    return f;
}

/// Physicists' Hermite polynomial H_n(x): H_0 = 1, H_1 = 2x,
/// H_{n+1} = 2x H_n - 2n H_{n-1}.
inline double hermite_eval(int n, double x) {
    if (n < 0) throw std::invalid_argument("hermite_eval: order must be >= 0");
    if (n == 0) return 1.0;
    double hm = 1.0, h = 2.0 * x;
    for (int k = 1; k < n; ++k) {
        const double hn = 2.0 * x * h - 2.0 * k * hm;
        hm = h;
        h = hn;
    }
    return h;
}

/// Associated Legendre function P_l^m(u) for 0 <= m <= l, |u| <= 1, with the
/// Condon-Shortley phase (-1)^m included.
inline double assoc_legendre(int l, int m, double u) {
    if (l < 0 || m < 0 || m > l) throw std::invalid_argument("assoc_legendre: need 0 <= m <= l");
    if (std::abs(u) > 1.0) throw std::invalid_argument("assoc_legendre: need |u| <= 1");
    const double s = std::sqrt(std::max(0.0, 1.0 - u * u));
    // P_m^m = (-1)^m (2m-1)!! s^m
    double pmm = 1.0;
    for (int k = 1; k <= m; ++k) pmm *= -(2.0 * k - 1.0) * s;
    if (l == m) return pmm;
    // P_{m+1}^m = u (2m+1) P_m^m
    double pm1 = u * (2.0 * m + 1.0) * pmm;
    if (l == m + 1) return pm1;
    double p = 0.0;
    for (int k = m + 2; k <= l; ++k) {
        p = (u * (2.0 * k - 1.0) * pm1 - (k + m - 1.0) * pmm) / (k - m);
        pmm = pm1;
        pm1 = p;
    }
    return p;
}

/// Orthonormal spherical harmonic Y_lm(theta, phi) (complex convention,
/// Condon-Shortley phase). theta in [0, pi].
inline std::complex<double> ylm_eval(int l, int m, double theta, double phi) {
    if (l < 0 || std::abs(m) > l) throw std::invalid_argument("ylm_eval: need |m| <= l");
    if (theta < 0.0 || theta > kPi) throw std::invalid_argument("ylm_eval: theta outside [0, pi]");
    const int mm = std::abs(m);
    const double norm =
        std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * factorial(l - mm) / factorial(l + mm));
    const double p = assoc_legendre(l, mm, std::cos(theta));
    std::complex<double> y = norm * p * std::exp(std::complex<double>(0.0, mm * phi));
    if (m < 0) {
        y = std::conj(y);
        if (mm % 2 != 0) y = -y;
    }
    return y;
}

// ---------------------------------------------------------------------------
// Single-particle orbitals
// ---------------------------------------------------------------------------

/// Label of one single-particle orbital. Traps use Cartesian quanta
/// (nx[, ny[, nz]]); the sphere uses angular momentum (l, m).
struct OrbitalIndex {
    std::array<int, 3> quanta{0, 0, 0};
    int l = 0;
    int m = 0;

    static OrbitalIndex trap(int nx, int ny = 0, int nz = 0) {
        OrbitalIndex i;
        i.quanta = {nx, ny, nz};
        return i;
    }
    static OrbitalIndex sphere(int l, int m) {
        OrbitalIndex i;
        i.l = l;
        i.m = m;
        return i;
    }

    friend bool operator==(const OrbitalIndex&, const OrbitalIndex&) = default;
};

/// Shell index of an orbital: total quantum number k = nx+ny+nz for the
/// traps, degree l for the sphere.
inline int orbital_level(const Geometry& g, const OrbitalIndex& idx) {
    if (g.is_trap()) return idx.quanta[0] + idx.quanta[1] + idx.quanta[2];
    return idx.l;
}

/// Single-particle energy in natural units: k + d/2 for the harmonic traps
/// (hbar*omega = 1), l(l+1) for the sphere (alpha = hbar = 1).
inline double orbital_energy(const Geometry& g, const OrbitalIndex& idx) {
    if (g.is_trap()) return orbital_level(g, idx) + 0.5 * g.dim();
    return static_cast<double>(idx.l) * (idx.l + 1);
}

inline std::string orbital_label(const Geometry& g, const OrbitalIndex& idx) {
    std::ostringstream os;
    if (g.is_trap()) {
        os << "n=(";
        for (int d = 0; d < g.dim(); ++d) os << (d ? "," : "") << idx.quanta[d];
        os << ")";
    } else {
        os << "l=" << idx.l << ",m=" << idx.m;
    }
    return os.str();
}

/// Harmonic-oscillator eigenfunction for a trap geometry, evaluated from the
/// closed form psi_n(x) = (2^n n! sqrt(pi) a)^{-1/2} H_n(x/a) exp(-x^2/2a^2)
/// per Cartesian axis. `point` must carry exactly dim() coordinates.
inline double ho_orbital_eval(const Geometry& g, const OrbitalIndex& idx,
                              std::span<const double> point) {
    if (!g.is_trap()) throw std::invalid_argument("ho_orbital_eval: geometry is not a trap");
    if (static_cast<int>(point.size()) != g.dim())
        throw std::invalid_argument("ho_orbital_eval: point dimension does not match geometry");
    const double a = g.scale;
    double psi = 1.0;
    for (int d = 0; d < g.dim(); ++d) {
        const int n = idx.quanta[d];
        if (n < 0) throw std::invalid_argument("ho_orbital_eval: negative quantum number");
        const double xi = point[d] / a;
        const double norm = 1.0 / std::sqrt(std::pow(2.0, n) * factorial(n) * std::sqrt(kPi) * a);
        psi *= norm * hermite_eval(n, xi) * std::exp(-0.5 * xi * xi);
    }
    return psi;
}

/// Evaluate one orbital at an ambient-space point (sphere points must be on
/// the unit sphere; they are renormalized defensively).
inline std::complex<double> orbital_eval(const Geometry& g, const OrbitalIndex& idx,
                                         const Vec3& point) {
    if (g.is_trap()) {
        std::array<double, 3> buf{point.x(), point.y(), point.z()};
        return {ho_orbital_eval(g, idx, std::span<const double>(buf.data(), g.dim())), 0.0};
    }
    double theta, phi;
    unit_to_spherical(point, theta, phi);
    return ylm_eval(idx.l, idx.m, theta, phi);
}

// ---------------------------------------------------------------------------
// Closed-shell bases
// ---------------------------------------------------------------------------

/// Number of orbitals in the lowest `shells` closed shells: s, s(s+1)/2,
/// s(s+1)(s+2)/6 for the 1D/2D/3D traps and s^2 for the sphere.
inline std::size_t closed_shell_count(const Geometry& g, int shells) {
    if (shells < 0) throw std::invalid_argument("closed_shell_count: shells must be >= 0");
    const auto s = static_cast<std::size_t>(shells);
    switch (g.kind) {
        case GeometryKind::Harmonic1D: return s;
        case GeometryKind::Harmonic2D: return s * (s + 1) / 2;
        case GeometryKind::Harmonic3D: return s * (s + 1) * (s + 2) / 6;
        case GeometryKind::Sphere: return s * s;
    }
    return 0;
}

/// The lowest `shells` closed shells of single-particle orbitals, ordered by
/// energy and, within a shell, lexicographically by quanta (traps) or by m
/// ascending (sphere).
struct OrbitalBasis {
    Geometry geometry;
    std::vector<OrbitalIndex> indices;
    int shells = 0;

    std::size_t size() const { return indices.size(); }
};

inline OrbitalBasis build_basis(const Geometry& g, int shells) {
    validate(g);
    if (shells < 1) throw std::invalid_argument("build_basis: shells must be >= 1");
    if (shells > kMaxShells) throw std::invalid_argument("build_basis: shells exceeds supported maximum");
    OrbitalBasis basis;
    basis.geometry = g;
    basis.shells = shells;
    switch (g.kind) {
        case GeometryKind::Harmonic1D:
            for (int n = 0; n < shells; ++n) basis.indices.push_back(OrbitalIndex::trap(n));
            break;
        case GeometryKind::Harmonic2D:
            for (int k = 0; k < shells; ++k)
                for (int nx = 0; nx <= k; ++nx)
                    basis.indices.push_back(OrbitalIndex::trap(nx, k - nx));
            break;
        case GeometryKind::Harmonic3D:
            for (int k = 0; k < shells; ++k)
                for (int nx = 0; nx <= k; ++nx)
                    for (int ny = 0; ny <= k - nx; ++ny)
                        basis.indices.push_back(OrbitalIndex::trap(nx, ny, k - nx - ny));
            break;
        case GeometryKind::Sphere:
            for (int l = 0; l < shells; ++l)
                for (int m = -l; m <= l; ++m)
                    basis.indices.push_back(OrbitalIndex::sphere(l, m));
            break;
    }
    return basis;
}

// ---------------------------------------------------------------------------
// Fast per-point evaluation of a whole basis
// ---------------------------------------------------------------------------

namespace detail {

/// Normalized Hermite functions h_n(xi) = (2^n n! sqrt(pi))^{-1/2} H_n(xi)
/// exp(-xi^2/2) for n = 0..n_max via the stable three-term recurrence.
inline void hermite_function_table(int n_max, double xi, double* h) {
    constexpr double kQuarticRootPi = 0.7511255444649425;  // pi^{-1/4}
    h[0] = kQuarticRootPi * std::exp(-0.5 * xi * xi);
    if (n_max >= 1) h[1] = std::sqrt(2.0) * xi * h[0];
    for (int n = 1; n < n_max; ++n)
        h[n + 1] = xi * std::sqrt(2.0 / (n + 1)) * h[n] - std::sqrt(n / (n + 1.0)) * h[n - 1];
}

}  // namespace detail

/// Evaluate every orbital of `basis` at one point, writing basis.size()
/// values to `out`. Equivalent to orbital_eval per index, but shares the
/// Hermite-function / associated-Legendre recurrences across the basis; this
/// is the kernel behind every Slater-matrix column.
inline void orbital_column(const OrbitalBasis& basis, const Vec3& point,
                           std::complex<double>* out) {
    const Geometry& g = basis.geometry;
    if (g.is_trap()) {
        const int d = g.dim();
        const double a = g.scale;
        const double axis_norm = 1.0 / std::sqrt(a);
        double h[3][kMaxShells];
        for (int ax = 0; ax < d; ++ax) {
            detail::hermite_function_table(basis.shells - 1, point[ax] / a, h[ax]);
            for (int n = 0; n < basis.shells; ++n) h[ax][n] *= axis_norm;
        }
        for (std::size_t i = 0; i < basis.indices.size(); ++i) {
            double v = 1.0;
            for (int ax = 0; ax < d; ++ax) v *= h[ax][basis.indices[i].quanta[ax]];
            out[i] = {v, 0.0};
        }
        return;
    }

    // Sphere: batch P_l^m (Condon-Shortley) and e^{i m phi} tables.
    const int lmax = basis.shells - 1;
    const double rho = std::hypot(point.x(), point.y());
    const double u = std::clamp(point.z() / point.norm(), -1.0, 1.0);  // cos(theta)
    const double s = rho / point.norm();                               // sin(theta)
    const double phi = (rho == 0.0) ? 0.0 : std::atan2(point.y(), point.x());

    double p[kMaxShells][kMaxShells];
    for (int m = 0; m <= lmax; ++m) {
        double pmm = 1.0;
        for (int k = 1; k <= m; ++k) pmm *= -(2.0 * k - 1.0) * s;
        p[m][m] = pmm;
        if (m < lmax) p[m + 1][m] = u * (2.0 * m + 1.0) * pmm;
        for (int l = m + 2; l <= lmax; ++l)
            p[l][m] = (u * (2.0 * l - 1.0) * p[l - 1][m] - (l + m - 1.0) * p[l - 2][m]) / (l - m);
    }
    std::complex<double> eimphi[kMaxShells];
    const std::complex<double> eiphi(std::cos(phi), std::sin(phi));
    eimphi[0] = 1.0;
    for (int m = 1; m <= lmax; ++m) eimphi[m] = eimphi[m - 1] * eiphi;

    for (std::size_t i = 0; i < basis.indices.size(); ++i) {
        const int l = basis.indices[i].l;
        const int m = basis.indices[i].m;
        const int mm = std::abs(m);
        double ratio = 1.0;  // (l-|m|)! / (l+|m|)!
        for (int k = l - mm + 1; k <= l + mm; ++k) ratio /= k;
        const double norm = std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * ratio);
        std::complex<double> y = norm * p[l][mm] * eimphi[mm];
        if (m < 0) {
            y = std::conj(y);
            if (mm % 2 != 0) y = -y;
        }
        out[i] = y;
    }
}

}  // namespace pauli
