// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>

#include "pauli/geometry.hpp"
#include "pauli/orbitals.hpp"

namespace pauli {

/// Pivots below this magnitude flag a numerically singular Slater matrix.
inline constexpr double kSingularPivot = 1e-300;

namespace detail {

inline void check_system(const OrbitalBasis& basis, const Configuration& config) {
    if (!(config.geometry == basis.geometry))
        throw std::invalid_argument("configuration geometry does not match basis geometry");
    if (config.points.size() != basis.size())
        throw std::invalid_argument("particle count does not match orbital count");
    for (const Vec3& p : config.points)
        if (!p.allFinite()) throw std::invalid_argument("configuration has non-finite coordinates");
}

}  // namespace detail

/// Slater matrix M_ij = psi_i(x_j): orbital i evaluated at particle j.
inline Eigen::MatrixXcd slater_matrix(const OrbitalBasis& basis, const Configuration& config) {
    detail::check_system(basis, config);
    const auto n = static_cast<Eigen::Index>(basis.size());
    Eigen::MatrixXcd m(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        orbital_column(basis, config.points[static_cast<std::size_t>(j)], m.col(j).data());
    return m;
}

/// log |Psi(x_1..x_n)|^2 = 2 log |det M| for the Slater determinant built
/// from the n lowest orbitals. Computed from the pivoted LU factorization by
/// summing log |U_ii|; a pivot smaller than kSingularPivot (coincident
/// particles, forbidden node) yields -infinity. The 1/n! normalization
/// constant is omitted throughout: only density ratios and argmax locations
/// matter, and both are unaffected.
inline double log_prob(const OrbitalBasis& basis, const Configuration& config) {
    const Eigen::MatrixXcd m = slater_matrix(basis, config);
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(m);
    const auto& factors = lu.matrixLU();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < factors.rows(); ++i) {
        const double pivot = std::abs(factors(i, i));
        if (!(pivot >= kSingularPivot)) return -std::numeric_limits<double>::infinity();
        sum += std::log(pivot);
    }
    return 2.0 * sum;
}

/// One-particle density rho(x) = (1/n) sum_k |psi_k(x)|^2 of the filled
/// basis; normalized to integrate to 1 over the geometry's domain.
inline double one_particle_density(const OrbitalBasis& basis, const Vec3& point) {
    const auto n = basis.size();
    if (n == 0) throw std::invalid_argument("one_particle_density: empty basis");
    std::vector<std::complex<double>> col(n);
    orbital_column(basis, point, col.data());
    double sum = 0.0;
    for (const auto& v : col) sum += std::norm(v);
    return sum / static_cast<double>(n);
}

}  // namespace pauli
