// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0
//
// Many-body density: frozen single-particle values, antisymmetry and
// rotational invariance, coincidence singularities, the permutation-sum
// oracle, and the analytic one-particle density.

#include <catch2/catch_amalgamated.hpp>

#include "pauli/geometry.hpp"
#include "pauli/orbitals.hpp"
#include "pauli/rng.hpp"
#include "pauli/wavefunction.hpp"
#include "support/oracles.hpp"
#include "support/quadrature.hpp"

#include <cmath>
#include <limits>

using namespace pauli;
using testsupport::perm_sum_log_prob;
using testsupport::random_rotation;
using testsupport::random_sphere_config;
using testsupport::random_trap_config;

namespace {

Configuration make_config(const Geometry& g, std::initializer_list<Vec3> pts) {
    Configuration c;
    c.geometry = g;
    c.points.assign(pts);
    return c;
}

}  // namespace

TEST_CASE("single-particle log density matches the closed form") {
    const OrbitalBasis basis = build_basis(harmonic_1d(), 1);
    const Configuration c = make_config(harmonic_1d(), {Vec3(0.3, 0, 0)});
    // log |psi_0(0.3)|^2 = -x^2 - log(pi)/2
    CHECK(log_prob(basis, c) == Catch::Approx(-0.6623649429247001).epsilon(1e-13));
}

TEST_CASE("density is symmetric under particle exchange") {
    Rng rng(2024);
    struct Case {
        Geometry g;
        int shells;
    };
    for (const auto& [g, shells] :
         {Case{harmonic_1d(), 4}, Case{harmonic_2d(), 3}, Case{harmonic_3d(), 2},
          Case{sphere_geometry(), 2}}) {
        const OrbitalBasis basis = build_basis(g, shells);
        const int n = static_cast<int>(basis.size());
        for (int trial = 0; trial < 10; ++trial) {
            Configuration c = g.is_trap() ? random_trap_config(g, n, rng)
                                          : random_sphere_config(n, rng);
            const double reference = log_prob(basis, c);
            REQUIRE(std::isfinite(reference));
            const int i = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
            const int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
            std::swap(c.points[static_cast<std::size_t>(i)],
                      c.points[static_cast<std::size_t>(j)]);
            CHECK(log_prob(basis, c) == Catch::Approx(reference).epsilon(1e-10));
        }
    }
}

TEST_CASE("density is invariant under global rotations") {
    Rng rng(77);
    // 2D: rotations about z only.
    {
        const OrbitalBasis basis = build_basis(harmonic_2d(), 3);
        Configuration c = random_trap_config(harmonic_2d(), 6, rng);
        const double reference = log_prob(basis, c);
        for (double beta : {0.37, 1.9, -2.4}) {
            Configuration rotated = c;
            for (Vec3& p : rotated.points) {
                const double x = p.x() * std::cos(beta) - p.y() * std::sin(beta);
                const double y = p.x() * std::sin(beta) + p.y() * std::cos(beta);
                p = Vec3(x, y, 0.0);
            }
            CHECK(log_prob(basis, rotated) == Catch::Approx(reference).epsilon(1e-9));
        }
    }
    // 3D trap and sphere: arbitrary rotations.
    struct Case {
        Geometry g;
        int shells;
        int n;
    };
    for (const auto& [g, shells, n] :
         {Case{harmonic_3d(), 2, 4}, Case{sphere_geometry(), 2, 4}}) {
        const OrbitalBasis basis = build_basis(g, shells);
        for (int trial = 0; trial < 5; ++trial) {
            Configuration c = g.is_trap() ? random_trap_config(g, n, rng)
                                          : random_sphere_config(n, rng);
            const double reference = log_prob(basis, c);
            const Eigen::Matrix3d rot = random_rotation(rng);
            Configuration rotated = c;
            for (Vec3& p : rotated.points) p = rot * p;
            CHECK(log_prob(basis, rotated) == Catch::Approx(reference).epsilon(1e-9));
        }
    }
}

TEST_CASE("coincident particles annihilate the density") {
    // Two 1D fermions at the same site: the Slater matrix has equal columns
    // and the 2x2 elimination cancels exactly, so the log density is -inf.
    const OrbitalBasis b1 = build_basis(harmonic_1d(), 2);
    const Configuration c1 =
        make_config(harmonic_1d(), {Vec3(0.5, 0, 0), Vec3(0.5, 0, 0)});
    CHECK(log_prob(b1, c1) == -std::numeric_limits<double>::infinity());

    // Larger systems: elimination round-off may leave a nonzero pivot, but
    // the density still collapses far below any generic configuration.
    const OrbitalBasis basis = build_basis(harmonic_2d(), 2);
    const Configuration c = make_config(
        harmonic_2d(), {Vec3(0.5, 0.1, 0), Vec3(0.5, 0.1, 0), Vec3(-0.3, 0.9, 0)});
    CHECK(log_prob(basis, c) < -60.0);

    const OrbitalBasis sphere_basis = build_basis(sphere_geometry(), 2);
    Rng rng(5);
    Configuration s = random_sphere_config(4, rng);
    s.points[2] = s.points[0];
    CHECK(log_prob(sphere_basis, s) < -60.0);
}

TEST_CASE("log density matches the explicit permutation sum") {
    Rng rng(123);
    struct Case {
        Geometry g;
        int shells;
    };
    // n <= 5 keeps the n! sum exact and fast.
    for (const auto& [g, shells] :
         {Case{harmonic_1d(), 5}, Case{harmonic_2d(), 2}, Case{harmonic_3d(), 2},
          Case{sphere_geometry(), 2}}) {
        const OrbitalBasis basis = build_basis(g, shells);
        const int n = static_cast<int>(basis.size());
        REQUIRE(n <= 5);
        for (int trial = 0; trial < 10; ++trial) {
            const Configuration c = g.is_trap() ? random_trap_config(g, n, rng)
                                                : random_sphere_config(n, rng);
            const double expected = perm_sum_log_prob(basis, c);
            CHECK(log_prob(basis, c) == Catch::Approx(expected).epsilon(1e-8));
        }
    }
}

TEST_CASE("mismatched particle count is rejected") {
    const OrbitalBasis basis = build_basis(harmonic_2d(), 2);  // 3 orbitals
    Rng rng(9);
    const Configuration c = random_trap_config(harmonic_2d(), 4, rng);
    CHECK_THROWS_AS(log_prob(basis, c), std::invalid_argument);
    const Configuration wrong_geometry = random_trap_config(harmonic_3d(), 3, rng);
    CHECK_THROWS_AS(log_prob(basis, wrong_geometry), std::invalid_argument);
}

TEST_CASE("one-particle density: frozen values and normalization") {
    // 1D ground state: rho(0) = 1/sqrt(pi).
    const OrbitalBasis b1 = build_basis(harmonic_1d(), 1);
    CHECK(one_particle_density(b1, Vec3(0, 0, 0)) ==
          Catch::Approx(0.5641895835477563).epsilon(1e-13));

    // the density carries a 1/n factor, so it integrates to one regardless
    // of the particle number (n = 3 here).
    const OrbitalBasis b3 = build_basis(harmonic_1d(), 3);
    const auto rule = testsupport::gauss_hermite(32);
    double mass = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double x = rule.nodes[i];
        mass += rule.weights[i] * std::exp(x * x) *
                one_particle_density(b3, Vec3(x, 0, 0));
    }
    CHECK(mass == Catch::Approx(1.0).epsilon(1e-10));

    // closed shells on the sphere are exactly uniform: rho = 1 / 4 pi.
    const OrbitalBasis bs = build_basis(sphere_geometry(), 2);
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 p = uniform_sphere_point(rng);
        CHECK(one_particle_density(bs, p) ==
              Catch::Approx(1.0 / (4.0 * kPi)).epsilon(1e-12));
    }
}
