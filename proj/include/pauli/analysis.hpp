// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pauli/errors.hpp"
#include "pauli/geometry.hpp"
#include "pauli/histogram.hpp"
#include "pauli/optimizer.hpp"
#include "pauli/rng.hpp"
#include "pauli/sampler.hpp"

namespace pauli {

// ---------------------------------------------------------------------------
// Centering and shells
// ---------------------------------------------------------------------------

/// Shift a trap configuration so its centroid sits at the origin.
inline Configuration recenter(const Configuration& config) {
    if (!config.geometry.is_trap())
        throw std::invalid_argument("recenter: center-of-mass shift is undefined on the sphere");
    Configuration out = config;
    if (out.points.empty()) return out;
    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : out.points) mean += p;
    mean /= static_cast<double>(out.points.size());
    for (Vec3& p : out.points) p -= mean;
    return out;
}

struct Shell {
    double radius = 0.0;
    int count = 0;
};

/// Radial shell structure of a trap configuration: sort particle radii and
/// split where the spacing exceeds gap_factor times the median spacing. An
/// absolute floor (10% of the largest radius) keeps intra-shell radial
/// substructure from splitting a shell: crystal shells sit ~0.5 r_max apart,
/// while radii inside one shell spread by at most ~0.07 r_max (e.g. the
/// 16-particle outer shell of the 20-fermion crystal in a 3D trap).
/// Shells are returned innermost first.
inline std::vector<Shell> detect_shells(const Configuration& config, double gap_factor = 3.0) {
    if (config.geometry.kind == GeometryKind::Sphere)
        throw std::invalid_argument("detect_shells: radial shells are undefined on the sphere");
    std::vector<double> radii;
    radii.reserve(config.points.size());
    const int d = config.geometry.dim();
    for (const Vec3& p : config.points) radii.push_back(p.head(d).norm());
    std::sort(radii.begin(), radii.end());

    std::vector<Shell> shells;
    if (radii.empty()) return shells;

    std::vector<double> gaps;
    for (std::size_t i = 1; i < radii.size(); ++i) gaps.push_back(radii[i] - radii[i - 1]);
    double threshold = std::numeric_limits<double>::infinity();
    if (!gaps.empty()) {
        std::vector<double> sorted_gaps = gaps;
        std::sort(sorted_gaps.begin(), sorted_gaps.end());
        const std::size_t h = sorted_gaps.size() / 2;
        const double median = (sorted_gaps.size() % 2 != 0)
                                  ? sorted_gaps[h]
                                  : 0.5 * (sorted_gaps[h - 1] + sorted_gaps[h]);
        threshold = std::max(gap_factor * median, 0.1 * radii.back());
    }

    double sum = radii[0];
    int count = 1;
    for (std::size_t i = 1; i < radii.size(); ++i) {
        if (radii[i] - radii[i - 1] > threshold) {
            shells.push_back({sum / count, count});
            sum = 0.0;
            count = 0;
        }
        sum += radii[i];
        ++count;
    }
    shells.push_back({sum / count, count});
    return shells;
}

// ---------------------------------------------------------------------------
// Pattern alignment (2D)
// ---------------------------------------------------------------------------

struct MatchOptions {
    /// Particles with radius below r_min_factor * a have ill-defined angles;
    /// they are matched by radius alone and excluded from the angular sum.
    double r_min_factor = 0.05;
    /// Shell detection on the pattern (passed to detect_shells).
    double gap_factor = 3.0;
    /// Search all within-shell permutations instead of only cyclic shifts of
    /// the angular order. Exponential; intended as a brute-force oracle for
    /// small n.
    bool exhaustive_within_shells = false;
};

/// Result of aligning one shot to a pattern.
///
/// permutation[i] is the shot particle assigned to pattern vertex i.
/// rotation_angle (2D) is the shot's angular offset alpha0 relative to the
/// pattern: rotating the shot by -alpha0 aligns it. `rotation` is always the
/// aligning rotation A (proper orthogonal), so that
/// aligned.points[i] = A * shot.points[permutation[i]].
/// distance is the optimal angular objective sum_i wrap(delta_i - alpha0)^2
/// over included pairs (2D) or the summed squared Euclidean residual (3D).
struct AlignmentResult {
    std::vector<int> permutation;
    double rotation_angle = 0.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    double distance = 0.0;
    Configuration aligned;
};

namespace detail {

/// Minimize f(alpha) = sum_i wrap(d_i - alpha)^2 exactly. f is piecewise
/// quadratic in alpha with breakpoints at d_i + pi; on each arc the minimum
/// sits at the circular mean of the branch-adjusted differences. Evaluating
/// every arc's vertex plus every breakpoint covers the global optimum.
/// Returns {alpha*, f(alpha*)}; empty input yields {0, 0}.
inline std::pair<double, double> optimal_rotation_offset(const std::vector<double>& diffs) {
    if (diffs.empty()) return {0.0, 0.0};
    auto objective = [&diffs](double alpha) {
        double s = 0.0;
        for (double d : diffs) {
            const double w = wrap_angle(d - alpha);
            s += w * w;
        }
        return s;
    };

    std::vector<double> breaks;
    breaks.reserve(diffs.size());
    for (double d : diffs) breaks.push_back(wrap_angle(d + kPi));
    std::sort(breaks.begin(), breaks.end());

    std::vector<double> candidates;
    const std::size_t k = breaks.size();
    for (std::size_t i = 0; i < k; ++i) {
        candidates.push_back(breaks[i]);
        const double lo = breaks[i];
        double hi = breaks[(i + 1) % k];
        if (hi <= lo) hi += 2.0 * kPi;
        const double mid = wrap_angle(0.5 * (lo + hi));
        double mean = 0.0;
        for (double d : diffs) mean += wrap_angle(d - mid);
        candidates.push_back(wrap_angle(mid + mean / static_cast<double>(diffs.size())));
    }

    double best_alpha = candidates.front();
    double best_f = objective(best_alpha);
    for (double a : candidates) {
        const double f = objective(a);
        if (f < best_f) {
            best_f = f;
            best_alpha = a;
        }
    }
    return {best_alpha, best_f};
}

/// Indices sorted by radius, partitioned into consecutive groups of the
/// given sizes, each group then sorted by polar angle.
struct ShellPartition {
    std::vector<std::vector<int>> members;  // per shell, angle-sorted indices
    std::vector<std::vector<double>> angles;
    std::vector<std::vector<double>> radii;
};

inline ShellPartition partition_by_shells(const std::vector<Vec3>& points,
                                          const std::vector<int>& shell_sizes) {
    std::vector<int> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&points](int a, int b) {
        return points[a].head<2>().norm() < points[b].head<2>().norm();
    });
    ShellPartition part;
    std::size_t pos = 0;
    for (int size : shell_sizes) {
        std::vector<int> group(order.begin() + pos, order.begin() + pos + size);
        std::stable_sort(group.begin(), group.end(), [&points](int a, int b) {
            return std::atan2(points[a].y(), points[a].x()) <
                   std::atan2(points[b].y(), points[b].x());
        });
        std::vector<double> ang, rad;
        for (int idx : group) {
            ang.push_back(std::atan2(points[idx].y(), points[idx].x()));
            rad.push_back(points[idx].head<2>().norm());
        }
        part.members.push_back(std::move(group));
        part.angles.push_back(std::move(ang));
        part.radii.push_back(std::move(rad));
        pos += size;
    }
    return part;
}

/// Reusable 2D matcher: the pattern-side shell partition is computed once
/// and shots stream through match().
class Matcher2d {
  public:
    Matcher2d(const Pattern& pattern, const MatchOptions& opts) : opts_(opts) {
        const Configuration& ref = pattern.config;
        if (ref.geometry.kind != GeometryKind::Harmonic2D)
            throw std::invalid_argument("match_permutation_2d: pattern must be a 2D trap configuration");
        if (ref.points.empty()) throw std::invalid_argument("match_permutation_2d: empty pattern");
        geometry_ = ref.geometry;
        r_min_ = opts.r_min_factor * ref.geometry.scale;
        for (const Shell& s : detect_shells(ref, opts.gap_factor)) shell_sizes_.push_back(s.count);
        pattern_ = partition_by_shells(ref.points, shell_sizes_);
    }

    AlignmentResult match(const Configuration& shot) const {
        if (shot.geometry.kind != GeometryKind::Harmonic2D)
            throw std::invalid_argument("match_permutation_2d: shot must be a 2D trap configuration");
        std::size_t n = 0;
        for (int s : shell_sizes_) n += static_cast<std::size_t>(s);
        if (shot.points.size() != n)
            throw std::invalid_argument("match_permutation_2d: particle counts differ");
        for (const Vec3& p : shot.points)
            if (!p.allFinite())
                throw std::invalid_argument("match_permutation_2d: non-finite coordinates");

        const ShellPartition shot_part = partition_by_shells(shot.points, shell_sizes_);
        const std::size_t n_shells = shell_sizes_.size();

        // Candidate within-shell assignments: index j of the pattern's
        // angular order maps to assignment[shell][j] of the shot's angular
        // order. Default: cyclic shifts (the optimal matching for a common
        // rotation is non-crossing in angle); optionally all permutations.
        std::vector<std::vector<std::vector<int>>> shell_assignments(n_shells);
        for (std::size_t s = 0; s < n_shells; ++s) {
            const int k = shell_sizes_[s];
            if (opts_.exhaustive_within_shells) {
                std::vector<int> perm(static_cast<std::size_t>(k));
                std::iota(perm.begin(), perm.end(), 0);
                do {
                    shell_assignments[s].push_back(perm);
                } while (std::next_permutation(perm.begin(), perm.end()));
            } else {
                for (int c = 0; c < k; ++c) {
                    std::vector<int> shift(static_cast<std::size_t>(k));
                    for (int j = 0; j < k; ++j) shift[static_cast<std::size_t>(j)] = (j + c) % k;
                    shell_assignments[s].push_back(std::move(shift));
                }
            }
        }
        double combos = 1.0;
        for (const auto& a : shell_assignments) combos *= static_cast<double>(a.size());
        if (combos > 1e7)
            throw std::invalid_argument("match_permutation_2d: assignment search space too large");

        std::vector<std::size_t> pick(n_shells, 0);
        double best_dist = std::numeric_limits<double>::infinity();
        double best_alpha = 0.0;
        std::vector<std::size_t> best_pick;
        std::vector<double> diffs;
        while (true) {
            diffs.clear();
            for (std::size_t s = 0; s < n_shells; ++s) {
                const auto& assign = shell_assignments[s][pick[s]];
                for (std::size_t j = 0; j < assign.size(); ++j) {
                    const auto sj = static_cast<std::size_t>(assign[j]);
                    if (pattern_.radii[s][j] < r_min_ || shot_part.radii[s][sj] < r_min_) continue;
                    diffs.push_back(wrap_angle(shot_part.angles[s][sj] - pattern_.angles[s][j]));
                }
            }
            const auto [alpha, dist] = optimal_rotation_offset(diffs);
            if (dist < best_dist) {
                best_dist = dist;
                best_alpha = alpha;
                best_pick = pick;
            }
            // advance the mixed-radix counter over shell assignments
            std::size_t s = 0;
            while (s < n_shells && ++pick[s] == shell_assignments[s].size()) {
                pick[s] = 0;
                ++s;
            }
            if (s == n_shells) break;
        }

        AlignmentResult result;
        result.permutation.assign(n, -1);
        for (std::size_t s = 0; s < n_shells; ++s) {
            const auto& assign = shell_assignments[s][best_pick[s]];
            for (std::size_t j = 0; j < assign.size(); ++j)
                result.permutation[static_cast<std::size_t>(pattern_.members[s][j])] =
                    shot_part.members[s][static_cast<std::size_t>(assign[j])];
        }
        result.rotation_angle = best_alpha;
        result.distance = best_dist;
        result.rotation = Eigen::AngleAxisd(-best_alpha, Vec3::UnitZ()).toRotationMatrix();
        result.aligned.geometry = shot.geometry;
        result.aligned.points.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            result.aligned.points[i] =
                result.rotation * shot.points[static_cast<std::size_t>(result.permutation[i])];
        return result;
    }

  private:
    Geometry geometry_;
    MatchOptions opts_;
    double r_min_ = 0.0;
    std::vector<int> shell_sizes_;
    ShellPartition pattern_;
};

}  // namespace detail

/// Align a recentered 2D shot to a pattern: jointly minimize the wrapped
/// angular distance sum_i wrap(phi_shot,sigma(i) - phi_pattern,i - alpha0)^2
/// over radius-compatible permutations sigma (shell-wise, via the pattern's
/// detect_shells partition) and the rotation offset alpha0 (exact piecewise-
/// quadratic minimizer). Both configurations are expected recentered.
inline AlignmentResult match_permutation_2d(const Configuration& config, const Pattern& pattern,
                                            const MatchOptions& opts = {}) {
    return detail::Matcher2d(pattern, opts).match(config);
}

// ---------------------------------------------------------------------------
// Pattern alignment (3D / sphere): Procrustes + assignment
// ---------------------------------------------------------------------------

namespace detail {

/// O(n^3) minimum-cost assignment (shortest augmenting paths with
/// potentials). Returns row -> column.
inline std::vector<int> hungarian_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<std::size_t>(j)] != 0)
            row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return row_to_col;
}

/// Proper rotation R minimizing sum |R src_i - dst_i|^2 (Kabsch/SVD).
inline Eigen::Matrix3d kabsch_rotation(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) h += src[i] * dst[i].transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) ? -1.0 : 1.0;
    return svd.matrixV() * d * svd.matrixU().transpose();
}

/// The 24 proper rotations of the cube — deterministic multistart seeds.
inline const std::vector<Eigen::Matrix3d>& cube_rotations() {
    static const std::vector<Eigen::Matrix3d> rotations = [] {
        std::vector<Eigen::Matrix3d> out;
        int perm[3] = {0, 1, 2};
        std::sort(perm, perm + 3);
        do {
            for (int bits = 0; bits < 8; ++bits) {
                Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
                for (int r = 0; r < 3; ++r) m(r, perm[r]) = (bits >> r & 1) ? -1.0 : 1.0;
                if (m.determinant() > 0.5) out.push_back(m);
            }
        } while (std::next_permutation(perm, perm + 3));
        return out;
    }();
    return rotations;
}

}  // namespace detail

struct Match3dOptions {
    int max_iterations = 50;
};

/// Rigid-rotation alignment for 3D traps (recentered) and the sphere:
/// alternate minimum-cost assignment (Hungarian) and orthogonal-Procrustes
/// rotation (Kabsch) from 24 deterministic starting rotations; keep the
/// lowest summed squared residual. rotation is the aligning rotation A with
/// aligned[i] = A * shot[permutation[i]]; distance is the residual sum.
inline AlignmentResult match_procrustes_3d(const Configuration& config, const Pattern& pattern,
                                           const Match3dOptions& opts = {}) {
    const Configuration& ref = pattern.config;
    if (config.geometry.dim() != 3 || ref.geometry.dim() != 3)
        throw std::invalid_argument("match_procrustes_3d: needs 3D trap or sphere configurations");
    if (!(config.geometry == ref.geometry))
        throw std::invalid_argument("match_procrustes_3d: geometries differ");
    const std::size_t n = ref.points.size();
    if (config.points.size() != n)
        throw std::invalid_argument("match_procrustes_3d: particle counts differ");

    double best_score = std::numeric_limits<double>::infinity();
    std::vector<int> best_sigma;
    Eigen::Matrix3d best_rot = Eigen::Matrix3d::Identity();

    Eigen::MatrixXd cost(n, n);
    std::vector<Vec3> src(n);
    for (const Eigen::Matrix3d& init : detail::cube_rotations()) {
        Eigen::Matrix3d rot = init;
        std::vector<int> sigma;
        for (int iter = 0; iter < opts.max_iterations; ++iter) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                        (rot * config.points[j] - ref.points[i]).squaredNorm();
            std::vector<int> next = detail::hungarian_assignment(cost);
            for (std::size_t i = 0; i < n; ++i) src[i] = config.points[static_cast<std::size_t>(next[i])];
            const Eigen::Matrix3d next_rot = detail::kabsch_rotation(src, ref.points);
            const bool stable = (next == sigma) && (next_rot - rot).norm() < 1e-12;
            sigma = std::move(next);
            rot = next_rot;
            if (stable) break;
        }
        double score = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            score += (rot * config.points[static_cast<std::size_t>(sigma[i])] - ref.points[i])
                         .squaredNorm();
        if (score < best_score) {
            best_score = score;
            best_sigma = sigma;
            best_rot = rot;
        }
    }

    AlignmentResult result;
    result.permutation = best_sigma;
    result.rotation = best_rot;
    result.distance = best_score;
    result.aligned.geometry = config.geometry;
    result.aligned.points.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        result.aligned.points[i] =
            best_rot * config.points[static_cast<std::size_t>(best_sigma[i])];
    return result;
}

// ---------------------------------------------------------------------------
// Pattern recovery
// ---------------------------------------------------------------------------

/// Recover the crystal from raw 2D shots: recenter each shot, align it to
/// the pattern (permutation + rotation by -alpha0), and histogram all
/// aligned particle positions.
inline HistogramGrid recover_pattern(const ShotSet& shots, const Pattern& pattern,
                                     const HistogramSpec& spec, const MatchOptions& opts = {}) {
    HistogramGrid grid = make_histogram(spec);
    grid.total_shots = static_cast<std::int64_t>(shots.size());
    grid.particles_per_shot = static_cast<int>(pattern.config.points.size());
    const detail::Matcher2d matcher(pattern, opts);
    for (const Configuration& shot : shots.configs) {
        const AlignmentResult res = matcher.match(recenter(shot));
        for (const Vec3& p : res.aligned.points) histogram_insert(grid, p);
    }
    return grid;
}

inline HistogramGrid recover_pattern(const ShotSet& shots, const Pattern& pattern) {
    return recover_pattern(shots, pattern,
                           default_histogram_spec(pattern.config.geometry), {});
}

// ---------------------------------------------------------------------------
// Post-selection
// ---------------------------------------------------------------------------

enum class ChoiceKind { FirstBin, Random, Manual };

/// How degenerate conditional-density maxima are broken: first bin in
/// deterministic scan order, a seeded random tied bin, or an explicit list
/// of points (one per stage; falls back to first-bin when exhausted).
struct ChoiceRule {
    ChoiceKind kind = ChoiceKind::FirstBin;
    std::vector<Vec3> manual_points;

    static ChoiceRule first() { return {}; }
    static ChoiceRule random_choice() { return {ChoiceKind::Random, {}}; }
    static ChoiceRule manual(std::vector<Vec3> points) {
        return {ChoiceKind::Manual, std::move(points)};
    }
};

/// Post-selection progress over a fixed ShotSet (non-owning view).
/// survivors holds original shot indices (ascending); consumed[k] is the
/// bitmask of particles of survivor k already claimed by earlier maxima.
struct PostselectState {
    const ShotSet* shots = nullptr;
    std::vector<std::size_t> survivors;
    std::vector<std::uint64_t> consumed;
    std::vector<Vec3> selected_maxima;
    double sigma_window = 0.2;
    std::uint64_t seed = 0;

    int stage() const { return static_cast<int>(selected_maxima.size()); }
};

inline PostselectState make_postselect_state(const ShotSet& shots, double sigma_window,
                                             std::uint64_t seed = 0) {
    if (!(sigma_window > 0.0) || !std::isfinite(sigma_window))
        throw std::invalid_argument("sigma_window must be positive");
    if (shots.particles > 64)
        throw std::invalid_argument("post-selection supports at most 64 particles per shot");
    PostselectState state;
    state.shots = &shots;
    state.survivors.resize(shots.size());
    std::iota(state.survivors.begin(), state.survivors.end(), std::size_t{0});
    state.consumed.assign(shots.size(), 0);
    state.sigma_window = sigma_window;
    state.seed = seed;
    return state;
}

namespace detail {

/// Distance between a particle and a selected maximum in the units of
/// sigma_window: Euclidean over the oscillator length for traps, geodesic
/// angle (radians) on the sphere.
inline double selection_distance(const Geometry& g, const Vec3& particle, const Vec3& maximum) {
    if (g.is_trap()) return (particle - maximum).head(g.dim()).norm() / g.scale;
    return geodesic_angle(particle.normalized(), maximum);
}

}  // namespace detail

/// One post-selection stage: for every surviving shot, find the unconsumed
/// particle nearest to `maximum` at distance d and keep the shot with
/// probability min(1, (2 pi sigma^2)^{-1/2} exp(-d^2 / 2 sigma^2)) — the
/// Gaussian window, clamped to a probability. Kept shots consume that
/// particle. Acceptance draws come from hash_uniform(seed, stage, shot
/// index), so results do not depend on evaluation order. Throws
/// EmptyPostselectionError when no shot survives.
inline PostselectState postselect_step(const PostselectState& state, const Vec3& maximum) {
    if (state.shots == nullptr) throw std::invalid_argument("postselect_step: state has no shots");
    const ShotSet& shots = *state.shots;
    const Geometry& g = shots.geometry;
    Vec3 max_point = maximum;
    if (!g.is_trap()) {
        if (std::abs(maximum.norm() - 1.0) > 1e-6)
            throw std::invalid_argument("postselect_step: sphere maximum must be a unit vector");
        max_point = maximum.normalized();
    }
    const double sigma = state.sigma_window;
    const double kernel_height = 1.0 / std::sqrt(2.0 * kPi * sigma * sigma);
    const int stage = state.stage();

    PostselectState next = state;
    next.survivors.clear();
    next.consumed.clear();
    next.selected_maxima.push_back(max_point);

    std::vector<double> distances;
    distances.reserve(state.survivors.size());
    for (std::size_t k = 0; k < state.survivors.size(); ++k) {
        const std::size_t shot_index = state.survivors[k];
        const Configuration& shot = shots.configs[shot_index];
        const std::uint64_t mask = state.consumed[k];
        int nearest = -1;
        double nearest_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < shot.size(); ++j) {
            if (mask >> j & 1) continue;
            const double d = detail::selection_distance(g, shot.points[static_cast<std::size_t>(j)],
                                                        max_point);
            if (d < nearest_d) {
                nearest_d = d;
                nearest = j;
            }
        }
        if (nearest < 0) continue;  // all particles consumed
        distances.push_back(nearest_d);
        const double p = std::min(1.0, kernel_height * std::exp(-0.5 * nearest_d * nearest_d /
                                                                (sigma * sigma)));
        const double u = hash_uniform(state.seed, static_cast<std::uint64_t>(stage), shot_index);
        if (u < p) {
            next.survivors.push_back(shot_index);
            next.consumed.push_back(mask | (std::uint64_t{1} << nearest));
        }
    }

    if (next.survivors.empty()) {
        std::sort(distances.begin(), distances.end());
        std::ostringstream msg;
        msg << "empty post-selection at stage " << stage << ": " << state.survivors.size()
            << " shots tested, sigma_window " << sigma;
        if (!distances.empty()) {
            msg << ", nearest-particle distance min/median/max " << distances.front() << "/"
                << distances[distances.size() / 2] << "/" << distances.back()
                << ", best acceptance probability "
                << std::min(1.0, kernel_height *
                                     std::exp(-0.5 * distances.front() * distances.front() /
                                              (sigma * sigma)));
        }
        throw EmptyPostselectionError(stage, msg.str());
    }
    return next;
}

/// Histogram of the unconsumed particles of all surviving shots — the
/// conditional density after `stage()` selections.
inline HistogramGrid conditional_histogram(const PostselectState& state,
                                           const HistogramSpec& spec) {
    if (state.shots == nullptr)
        throw std::invalid_argument("conditional_histogram: state has no shots");
    const ShotSet& shots = *state.shots;
    HistogramGrid grid = make_histogram(spec);
    grid.total_shots = static_cast<std::int64_t>(state.survivors.size());
    grid.particles_per_shot = shots.particles - state.stage();
    for (std::size_t k = 0; k < state.survivors.size(); ++k) {
        const Configuration& shot = shots.configs[state.survivors[k]];
        for (int j = 0; j < shot.size(); ++j)
            if (!(state.consumed[k] >> j & 1))
                histogram_insert(grid, shot.points[static_cast<std::size_t>(j)]);
    }
    return grid;
}

/// Histogram of every particle (consumed or not) of the surviving shots.
inline HistogramGrid survivor_histogram(const PostselectState& state, const HistogramSpec& spec) {
    if (state.shots == nullptr)
        throw std::invalid_argument("survivor_histogram: state has no shots");
    const ShotSet& shots = *state.shots;
    HistogramGrid grid = make_histogram(spec);
    grid.total_shots = static_cast<std::int64_t>(state.survivors.size());
    grid.particles_per_shot = shots.particles;
    for (std::size_t shot_index : state.survivors)
        for (const Vec3& p : shots.configs[shot_index].points) histogram_insert(grid, p);
    return grid;
}

struct PostselectOptions {
    std::uint64_t seed = 0;
    /// Grid for the returned per-stage conditional histograms; defaults to
    /// default_histogram_spec of the shot geometry.
    HistogramSpec stage_grid;
    bool stage_grid_set = false;
    /// Internal grid used to locate sphere maxima: cylindrical equal-area
    /// (phi, cos theta) binning, so every bin covers the same solid angle
    /// and bin counts are directly comparable. (A (theta, phi) grid would
    /// give polar bins tiny measures and hence wildly noisy densities; the
    /// Mollweide ellipse has partially covered edge bins.) The grid is
    /// deliberately coarse — bins comparable to the acceptance window — and
    /// the picked bin center is polished by spherical mean-shift over the
    /// unconsumed particles, because single fine bins of a correlated chain
    /// fluctuate far more than Poisson on the broad conditional landscapes.
    int argmax_z_bins = 24;
    int argmax_phi_bins = 48;
    /// Gaussian kernel bandwidth (geodesic rad) of the mean-shift polish. A
    /// soft kernel is used rather than a hard window: the early conditional
    /// landscapes are nearly flat over tenths of a radian, and a hard window
    /// centred off-peak keeps pulling toward whichever side of the window
    /// holds more background, while the Gaussian weights damp that tail.
    double anchor_bandwidth = 0.25;
    int anchor_refine_iterations = 40;
    /// Bins whose density reaches the maximum minus tie_sigmas standard
    /// deviations of its count are tied; choice_rule breaks the tie.
    double tie_sigmas = 2.0;
};

namespace detail {

inline Vec3 bin_center_point(const HistogramGrid& grid, int ix, int iy, const Geometry& g) {
    switch (grid.spec.projection) {
        case Projection::Cartesian: {
            Vec3 p = Vec3::Zero();
            p.x() = grid.x_center(ix);
            if (g.dim() >= 2) p.y() = grid.y_center(iy);
            return p;
        }
        case Projection::ThetaPhi:
            return spherical_to_unit(grid.y_center(iy), grid.x_center(ix));
        case Projection::Lambert:
            return spherical_to_unit(std::acos(std::clamp(grid.y_center(iy), -1.0, 1.0)),
                                     grid.x_center(ix));
        case Projection::Mollweide: {
            const auto [theta, phi] = mollweide_unproject(grid.x_center(ix), grid.y_center(iy));
            return spherical_to_unit(theta, phi);
        }
    }
    throw std::logic_error("unreachable");
}

/// Locate the conditional density maximum on a grid. Bins are ranked by a
/// Poisson lower confidence bound on their density,
///   (count - tie_sigmas * sqrt(count + 1)) / measure,
/// not by the raw count/measure ratio: on a (theta, phi) grid the polar bins
/// have tiny solid angle, and a single stray count there would otherwise
/// out-rank a well-populated peak bin. Bins within the best bin's own noise
/// are ties, broken by the choice rule (deterministic scan order or a
/// seeded draw).
inline Vec3 argmax_point(const HistogramGrid& grid, const Geometry& g, const ChoiceRule& rule,
                         int stage, std::uint64_t seed, double tie_sigmas) {
    if (grid.total_counts() <= 0)
        throw NumericalError("argmax_point: conditional histogram is empty");
    const auto score = [&grid, tie_sigmas](int ix, int iy) {
        const double c = static_cast<double>(grid.count(ix, iy));
        return (c - tie_sigmas * std::sqrt(c + 1.0)) / grid.bin_measure(ix, iy);
    };
    double max_score = -std::numeric_limits<double>::infinity();
    std::int64_t max_count = 0;
    double max_measure = 1.0;
    for (int iy = 0; iy < grid.spec.ny; ++iy)
        for (int ix = 0; ix < grid.spec.nx; ++ix) {
            const double s = score(ix, iy);
            if (s > max_score) {
                max_score = s;
                max_count = grid.count(ix, iy);
                max_measure = grid.bin_measure(ix, iy);
            }
        }
    const double noise =
        tie_sigmas * std::sqrt(static_cast<double>(max_count) + 1.0) / max_measure;
    std::vector<std::pair<int, int>> ties;
    for (int iy = 0; iy < grid.spec.ny; ++iy)
        for (int ix = 0; ix < grid.spec.nx; ++ix)
            if (score(ix, iy) >= max_score - noise) ties.emplace_back(ix, iy);
    std::pair<int, int> pick = ties.front();
    if (rule.kind == ChoiceKind::Random && ties.size() > 1) {
        Rng rng = Rng::for_stream(mix64(seed ^ 0x706f73746d6178ULL), static_cast<std::uint64_t>(stage));
        pick = ties[static_cast<std::size_t>(rng.uniform_index(ties.size()))];
    }
    return bin_center_point(grid, pick.first, pick.second, g);
}

/// Sphere anchor selection: coarse equal-area bin pick, then Gaussian-kernel
/// spherical mean-shift over the unconsumed particles of the surviving
/// shots. The polish step matters because the early conditional landscapes
/// are broad (the closed-shell density is exactly uniform before any
/// selection), so the best single bin is decided by chain noise; the soft
/// local mean of a kernel comparable to the acceptance window is stable.
inline Vec3 sphere_anchor_point(const PostselectState& state, const ChoiceRule& rule, int stage,
                                const PostselectOptions& options) {
    const ShotSet& shots = *state.shots;
    const HistogramSpec coarse =
        HistogramSpec::lambert(options.argmax_z_bins, options.argmax_phi_bins);
    const HistogramGrid grid = conditional_histogram(state, coarse);
    Vec3 center =
        argmax_point(grid, shots.geometry, rule, stage, options.seed, options.tie_sigmas);
    const double bw = options.anchor_bandwidth;
    for (int it = 0; it < options.anchor_refine_iterations; ++it) {
        Vec3 mean = Vec3::Zero();
        for (std::size_t k = 0; k < state.survivors.size(); ++k) {
            const Configuration& shot = shots.configs[state.survivors[k]];
            for (int j = 0; j < shot.size(); ++j) {
                if (state.consumed[k] >> j & 1) continue;
                const Vec3& p = shot.points[static_cast<std::size_t>(j)];
                const double g = geodesic_angle(p, center);
                if (g < 4.0 * bw) mean += std::exp(-0.5 * g * g / (bw * bw)) * p;
            }
        }
        if (mean.norm() < 1e-12) break;
        const Vec3 next = mean.normalized();
        const double step = geodesic_angle(next, center);
        center = next;
        if (step < 1e-9) break;
    }
    return center;
}

}  // namespace detail

/// Full post-selection pipeline: n times — build the conditional histogram
/// of unconsumed particles, locate its global maximum (choice_rule breaks
/// shot-noise ties; manual points are used verbatim while available), and
/// apply postselect_step. Returns the final state together with the n
/// conditional histograms, each taken before its stage's selection (panel i
/// shows the density after i consumed particles).
inline std::pair<PostselectState, std::vector<HistogramGrid>> run_postselection(
    const ShotSet& shots, double sigma_window, const ChoiceRule& choice_rule,
    const PostselectOptions& options = {}) {
    if (shots.size() == 0) throw std::invalid_argument("run_postselection: empty shot set");
    const Geometry& g = shots.geometry;
    if (g.kind == GeometryKind::Harmonic3D && choice_rule.kind != ChoiceKind::Manual)
        throw std::invalid_argument(
            "run_postselection: 3D trap maxima cannot be located on a 2D histogram; "
            "provide manual points");

    const HistogramSpec stage_spec =
        options.stage_grid_set ? options.stage_grid : default_histogram_spec(g);

    PostselectState state = make_postselect_state(shots, sigma_window, options.seed);
    std::vector<HistogramGrid> stage_histograms;
    stage_histograms.reserve(static_cast<std::size_t>(shots.particles));

    for (int stage = 0; stage < shots.particles; ++stage) {
        stage_histograms.push_back(conditional_histogram(state, stage_spec));
        Vec3 maximum;
        if (choice_rule.kind == ChoiceKind::Manual &&
            static_cast<std::size_t>(stage) < choice_rule.manual_points.size()) {
            maximum = choice_rule.manual_points[static_cast<std::size_t>(stage)];
            if (!g.is_trap()) maximum.normalize();
        } else if (g.is_trap()) {
            maximum = detail::argmax_point(stage_histograms.back(), g, choice_rule, stage,
                                           options.seed, options.tie_sigmas);
        } else {
            maximum = detail::sphere_anchor_point(state, choice_rule, stage, options);
        }
        state = postselect_step(state, maximum);
    }
    return {std::move(state), std::move(stage_histograms)};
}

// ---------------------------------------------------------------------------
// Density modes on the sphere
// ---------------------------------------------------------------------------

struct SphereModeOptions {
    int z_bins = 48;
    int phi_bins = 96;
    /// Gaussian kernel bandwidth (geodesic rad) of the mean-shift polish. A
    /// soft kernel keeps the broad acceptance-kernel halo around each spot
    /// from dragging the mode estimate sideways.
    double bandwidth = 0.18;
    double exclusion_radius = 0.8; ///< points this close to a found mode are removed (rad)
    int refine_iterations = 40;
    /// After all k modes are picked, jointly refine them as a von
    /// Mises-Fisher mixture with a uniform background component, fit by EM.
    /// Mean-shift alone wanders by a few hundredths of a radian on flat-top
    /// spots sitting in a diffuse halo; the mixture responsibilities assign
    /// the halo to the background component, and each centre becomes a
    /// responsibility-weighted mean with sqrt(N) accuracy. 0 disables.
    int em_iterations = 60;
};

namespace detail {

/// EM for a k-component von Mises-Fisher mixture plus a uniform background
/// on the unit sphere. Returns the refined mean directions; concentrations
/// and weights are re-estimated each step (Banerjee et al.'s closed-form
/// kappa approximation).
inline std::vector<Vec3> vmf_mixture_refine(const std::vector<Vec3>& points,
                                            std::vector<Vec3> mu, int iterations) {
    const std::size_t k = mu.size();
    if (k == 0 || points.empty()) return mu;
    std::vector<double> kappa(k, 10.0), weight(k, 0.8 / static_cast<double>(k));
    double weight_bg = 0.2;
    const double bg_density = 1.0 / (4.0 * kPi);
    std::vector<double> resp(k);
    for (int it = 0; it < iterations; ++it) {
        std::vector<Vec3> sum(k, Vec3::Zero());
        std::vector<double> tot(k, 0.0);
        double tot_bg = 0.0;
        for (const Vec3& p : points) {
            double denom = weight_bg * bg_density;
            for (std::size_t j = 0; j < k; ++j) {
                // vMF density kappa/(4 pi sinh kappa) e^{kappa mu.x}, written
                // as kappa/(2 pi (1 - e^{-2 kappa})) e^{kappa (mu.x - 1)} so
                // the exponent is always <= 0.
                const double c = kappa[j] / (2.0 * kPi * (1.0 - std::exp(-2.0 * kappa[j])));
                resp[j] = weight[j] * c * std::exp(kappa[j] * (mu[j].dot(p) - 1.0));
                denom += resp[j];
            }
            for (std::size_t j = 0; j < k; ++j) {
                sum[j] += (resp[j] / denom) * p;
                tot[j] += resp[j] / denom;
            }
            tot_bg += weight_bg * bg_density / denom;
        }
        const double n = static_cast<double>(points.size());
        for (std::size_t j = 0; j < k; ++j) {
            if (tot[j] < 1e-12 || sum[j].norm() < 1e-12) continue;  // component died
            double rbar = std::min(sum[j].norm() / tot[j], 0.999999);
            mu[j] = sum[j].normalized();
            kappa[j] = std::max(rbar * (3.0 - rbar * rbar) / (1.0 - rbar * rbar), 1e-8);
            weight[j] = tot[j] / n;
        }
        weight_bg = tot_bg / n;
    }
    return mu;
}

}  // namespace detail

/// Locate k density modes of a point cloud on the unit sphere: repeatedly
/// take the fullest cylindrical equal-area (phi, cos theta) bin — equal
/// solid angles make raw counts comparable — polish the direction by
/// Gaussian-kernel spherical mean-shift, and exclude the mode's
/// neighborhood.
inline std::vector<Vec3> find_sphere_modes(std::vector<Vec3> points, int k,
                                           const SphereModeOptions& opts = {}) {
    const std::vector<Vec3> all_points = points;
    std::vector<Vec3> modes;
    for (int m = 0; m < k; ++m) {
        if (points.empty()) throw NumericalError("find_sphere_modes: not enough points");
        const HistogramSpec spec = HistogramSpec::lambert(opts.z_bins, opts.phi_bins);
        const HistogramGrid grid = histogram(points, spec, static_cast<std::int64_t>(points.size()), 1);
        std::int64_t best_count = -1;
        Vec3 center = Vec3::UnitZ();
        for (int iy = 0; iy < spec.ny; ++iy)
            for (int ix = 0; ix < spec.nx; ++ix) {
                if (grid.count(ix, iy) > best_count) {
                    best_count = grid.count(ix, iy);
                    center = detail::bin_center_point(grid, ix, iy, sphere_geometry());
                }
            }
        const double bw = opts.bandwidth;
        for (int it = 0; it < opts.refine_iterations; ++it) {
            Vec3 mean = Vec3::Zero();
            for (const Vec3& p : points) {
                const double g = geodesic_angle(p, center);
                if (g < 4.0 * bw) mean += std::exp(-0.5 * g * g / (bw * bw)) * p;
            }
            if (mean.norm() < 1e-12) break;
            const Vec3 next = mean.normalized();
            const double step = geodesic_angle(next, center);
            center = next;
            if (step < 1e-9) break;
        }
        modes.push_back(center);
        std::erase_if(points, [&center, &opts](const Vec3& p) {
            return geodesic_angle(p, center) < opts.exclusion_radius;
        });
    }
    if (opts.em_iterations > 0)
        modes = detail::vmf_mixture_refine(all_points, std::move(modes), opts.em_iterations);
    return modes;
}

}  // namespace pauli
