// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0
//
// Gauss quadrature rules for test oracles, built by the Golub-Welsch
// eigenvalue method: nodes are the eigenvalues of the Jacobi matrix of the
// orthogonal-polynomial recurrence, weights come from the first components
// of its eigenvectors. Small orders only; accuracy is what matters here.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace testsupport {

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail {

/// Golub-Welsch for a symmetric-tridiagonal Jacobi matrix with zero diagonal
/// and off-diagonal b[0..n-2]; mu0 is the total weight-function mass.
inline QuadratureRule golub_welsch(const std::vector<double>& b, double mu0) {
    const int n = static_cast<int>(b.size()) + 1;
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 0; k + 1 < n; ++k) {
        jacobi(k, k + 1) = b[static_cast<std::size_t>(k)];
        jacobi(k + 1, k) = b[static_cast<std::size_t>(k)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("golub_welsch: eigensolver failed");
    QuadratureRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        rule.nodes[static_cast<std::size_t>(k)] = solver.eigenvalues()(k);
        const double v0 = solver.eigenvectors()(0, k);
        rule.weights[static_cast<std::size_t>(k)] = mu0 * v0 * v0;
    }
    return rule;
}

}  // namespace detail

/// n-point Gauss-Hermite rule: integral over R of exp(-x^2) f(x) dx
/// = sum w_i f(x_i), exact for polynomial f of degree <= 2n-1.
inline QuadratureRule gauss_hermite(int n) {
    if (n < 1) throw std::invalid_argument("gauss_hermite: order must be >= 1");
    std::vector<double> b;
    for (int k = 1; k < n; ++k) b.push_back(std::sqrt(k / 2.0));
    return detail::golub_welsch(b, std::sqrt(std::acos(-1.0)));
}

/// n-point Gauss-Legendre rule on [-1, 1]: integral of f(u) du
/// = sum w_i f(u_i), exact for polynomial f of degree <= 2n-1.
inline QuadratureRule gauss_legendre(int n) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
    std::vector<double> b;
    for (int k = 1; k < n; ++k) b.push_back(k / std::sqrt(4.0 * k * k - 1.0));
    return detail::golub_welsch(b, 2.0);
}

/// Composite Simpson integral of f over [lo, hi] with n (even) intervals.
template <typename F>
double simpson(F&& f, double lo, double hi, int n = 2000) {
    if (n % 2 != 0) ++n;
    const double h = (hi - lo) / n;
    double sum = f(lo) + f(hi);
    for (int k = 1; k < n; ++k) sum += f(lo + k * h) * (k % 2 == 1 ? 4.0 : 2.0);
    return sum * h / 3.0;
}

}  // namespace testsupport
