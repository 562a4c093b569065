// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pauli/analysis.hpp"
#include "pauli/errors.hpp"
#include "pauli/geometry.hpp"
#include "pauli/histogram.hpp"
#include "pauli/optimizer.hpp"
#include "pauli/sampler.hpp"

namespace pauli {

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

/// Shortest text form that round-trips an IEEE double exactly.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open file: " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

/// Single-writer atomic file write: write a sibling temporary, then rename.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write file: " + tmp.string());
        out << content;
        if (!out.flush()) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// FNV-1a 64-bit content hash (stable, dependency-free content addressing
/// for run manifests).
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // offset basis
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;  // FNV prime
    }
    return h;
}

inline std::string fnv1a64_hex(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

namespace detail {

/// Parse a `# pauli.<kind> v<N> key=value ...` metadata line; rejects other
/// kinds and versions.
inline std::map<std::string, std::string> parse_meta_line(const std::string& line,
                                                          const std::string& kind, int version) {
    std::istringstream in(line);
    std::string hash, schema, ver;
    in >> hash >> schema >> ver;
    if (hash != "#" || schema != "pauli." + kind)
        throw SchemaError("expected a 'pauli." + kind + "' file");
    if (ver != "v" + std::to_string(version))
        throw SchemaError("unsupported " + kind + " schema version '" + ver + "'");
    std::map<std::string, std::string> kv;
    std::string token;
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) throw SchemaError("malformed metadata token: " + token);
        kv[token.substr(0, eq)] = token.substr(eq + 1);
    }
    return kv;
}

inline const std::string& require(const std::map<std::string, std::string>& kv,
                                  const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw SchemaError("missing metadata key: " + key);
    return it->second;
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    return fields;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Geometry <-> JSON
// ---------------------------------------------------------------------------

inline nlohmann::json geometry_to_json(const Geometry& g) {
    return {{"kind", to_string(g.kind)}, {"scale", g.scale}};
}

inline Geometry geometry_from_json(const nlohmann::json& j) {
    Geometry g;
    g.kind = geometry_kind_from_string(j.at("kind").get<std::string>());
    g.scale = j.at("scale").get<double>();
    validate(g);
    return g;
}

// ---------------------------------------------------------------------------
// ShotSet <-> CSV
// ---------------------------------------------------------------------------

inline std::vector<std::string> coordinate_columns(const Geometry& g) {
    switch (g.kind) {
        case GeometryKind::Harmonic1D: return {"x"};
        case GeometryKind::Harmonic2D: return {"x", "y"};
        case GeometryKind::Harmonic3D: return {"x", "y", "z"};
        case GeometryKind::Sphere: return {"theta", "phi"};
    }
    return {};
}

/// Shots file: one `# pauli.shots v1 key=value...` metadata line (geometry,
/// units, sampler provenance), a mandatory header row, then one row per
/// particle: shot_id, particle_id, coordinates (x,y[,z] for traps;
/// theta,phi for the sphere).
inline void save_shots(const std::filesystem::path& path, const ShotSet& shots) {
    std::ostringstream out;
    const Geometry& g = shots.geometry;
    out << "# pauli.shots v1 geometry=" << to_string(g.kind)
        << " scale=" << format_double(g.scale) << " particles=" << shots.particles
        << " shots=" << shots.size() << " seed=" << shots.params.seed
        << " step_sigma=" << format_double(shots.params.step_sigma)
        << " burn_in=" << shots.params.burn_in << " thin=" << shots.params.thin
        << " n_steps=" << shots.params.n_steps
        << " update=" << (shots.params.update_mode == UpdateMode::AllParticles ? "all" : "single")
        << " accept_rate=" << format_double(shots.accept_rate) << "\n";
    out << "shot_id,particle_id";
    for (const std::string& c : coordinate_columns(g)) out << ',' << c;
    out << '\n';
    for (std::size_t s = 0; s < shots.configs.size(); ++s) {
        const Configuration& c = shots.configs[s];
        for (int j = 0; j < c.size(); ++j) {
            out << s << ',' << j;
            const Vec3& p = c.points[static_cast<std::size_t>(j)];
            if (g.is_trap()) {
                for (int d = 0; d < g.dim(); ++d) out << ',' << format_double(p[d]);
            } else {
                double theta, phi;
                unit_to_spherical(p, theta, phi);
                out << ',' << format_double(theta) << ',' << format_double(phi);
            }
            out << '\n';
        }
    }
    atomic_write_file(path, out.str());
}

inline ShotSet load_shots(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty shots file: " + path.string());
    const auto kv = detail::parse_meta_line(line, "shots", 1);

    ShotSet shots;
    shots.geometry.kind = geometry_kind_from_string(detail::require(kv, "geometry"));
    shots.geometry.scale = std::stod(detail::require(kv, "scale"));
    shots.particles = std::stoi(detail::require(kv, "particles"));
    const auto n_shots = static_cast<std::size_t>(std::stoull(detail::require(kv, "shots")));
    shots.params.seed = std::stoull(detail::require(kv, "seed"));
    shots.params.step_sigma = std::stod(detail::require(kv, "step_sigma"));
    shots.params.burn_in = std::stoll(detail::require(kv, "burn_in"));
    shots.params.thin = std::stoll(detail::require(kv, "thin"));
    shots.params.n_steps = std::stoll(detail::require(kv, "n_steps"));
    shots.params.update_mode = detail::require(kv, "update") == "single"
                                   ? UpdateMode::SingleParticle
                                   : UpdateMode::AllParticles;
    shots.accept_rate = std::stod(detail::require(kv, "accept_rate"));

    if (!std::getline(in, line)) throw SchemaError("shots file missing header row");
    {
        std::string expected = "shot_id,particle_id";
        for (const std::string& c : coordinate_columns(shots.geometry)) expected += "," + c;
        if (line != expected) throw SchemaError("unexpected shots header row: " + line);
    }

    shots.configs.reserve(n_shots);
    Configuration current;
    current.geometry = shots.geometry;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = detail::split_csv_row(line);
        const std::size_t coords = coordinate_columns(shots.geometry).size();
        if (fields.size() != 2 + coords) throw SchemaError("malformed shots row: " + line);
        const auto shot_id = static_cast<std::size_t>(std::stoull(fields[0]));
        const int particle_id = std::stoi(fields[1]);
        if (shot_id != shots.configs.size() || particle_id != current.size())
            throw SchemaError("shots rows out of order at: " + line);
        Vec3 p = Vec3::Zero();
        if (shots.geometry.is_trap()) {
            for (std::size_t d = 0; d < coords; ++d)
                p[static_cast<int>(d)] = std::stod(fields[2 + d]);
        } else {
            p = spherical_to_unit(std::stod(fields[2]), std::stod(fields[3]));
        }
        current.points.push_back(p);
        if (current.size() == shots.particles) {
            shots.configs.push_back(std::move(current));
            current = Configuration{shots.geometry, {}};
        }
    }
    if (current.size() != 0) throw SchemaError("shots file ends mid-shot");
    if (shots.configs.size() != n_shots)
        throw SchemaError("shots file row count does not match metadata");
    return shots;
}

// ---------------------------------------------------------------------------
// Pattern <-> JSON
// ---------------------------------------------------------------------------

inline void save_pattern(const std::filesystem::path& path, const Pattern& pattern) {
    nlohmann::json j;
    j["schema"] = "pauli.pattern";
    j["version"] = 1;
    j["geometry"] = geometry_to_json(pattern.config.geometry);
    j["log_density_at_max"] = pattern.log_density_at_max;
    nlohmann::json points = nlohmann::json::array();
    const Geometry& g = pattern.config.geometry;
    for (const Vec3& p : pattern.config.points) {
        nlohmann::json row = nlohmann::json::array();
        if (g.is_trap()) {
            for (int d = 0; d < g.dim(); ++d) row.push_back(p[d]);
        } else {
            double theta, phi;
            unit_to_spherical(p, theta, phi);
            row.push_back(theta);
            row.push_back(phi);
        }
        points.push_back(std::move(row));
    }
    j["points"] = std::move(points);
    atomic_write_file(path, j.dump(2) + "\n");
}

inline Pattern load_pattern(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("pattern file is not valid JSON: " + std::string(e.what()));
    }
    if (j.value("schema", "") != "pauli.pattern") throw SchemaError("expected a 'pauli.pattern' file");
    if (j.value("version", 0) != 1) throw SchemaError("unsupported pattern schema version");
    Pattern pattern;
    pattern.config.geometry = geometry_from_json(j.at("geometry"));
    pattern.log_density_at_max = j.at("log_density_at_max").get<double>();
    const Geometry& g = pattern.config.geometry;
    for (const auto& row : j.at("points")) {
        Vec3 p = Vec3::Zero();
        if (g.is_trap()) {
            if (static_cast<int>(row.size()) != g.dim())
                throw SchemaError("pattern point dimension mismatch");
            for (int d = 0; d < g.dim(); ++d) p[d] = row[static_cast<std::size_t>(d)].get<double>();
        } else {
            if (row.size() != 2) throw SchemaError("sphere pattern points need (theta, phi)");
            p = spherical_to_unit(row[0].get<double>(), row[1].get<double>());
        }
        pattern.config.points.push_back(p);
    }
    validate(pattern.config);
    return pattern;
}

// ---------------------------------------------------------------------------
// HistogramGrid <-> CSV grid + JSON sidecar
// ---------------------------------------------------------------------------

/// Histogram files: the CSV holds the `# pauli.histogram v1` line plus ny
/// rows of nx comma-separated counts (row iy, column ix); the JSON sidecar
/// holds axes (explicit bin edges), projection, units, and totals.
inline void save_histogram(const std::filesystem::path& csv_path,
                           const std::filesystem::path& meta_path, const HistogramGrid& grid,
                           const Geometry& geometry) {
    std::ostringstream out;
    out << "# pauli.histogram v1 nx=" << grid.spec.nx << " ny=" << grid.spec.ny << "\n";
    for (int iy = 0; iy < grid.spec.ny; ++iy) {
        for (int ix = 0; ix < grid.spec.nx; ++ix) {
            if (ix) out << ',';
            out << grid.count(ix, iy);
        }
        out << '\n';
    }
    atomic_write_file(csv_path, out.str());

    nlohmann::json meta;
    meta["schema"] = "pauli.histogram_meta";
    meta["version"] = 1;
    meta["projection"] = to_string(grid.spec.projection);
    meta["geometry"] = geometry_to_json(geometry);
    nlohmann::json xe = nlohmann::json::array(), ye = nlohmann::json::array();
    for (int i = 0; i <= grid.spec.nx; ++i) xe.push_back(grid.x_edge(i));
    for (int j = 0; j <= grid.spec.ny; ++j) ye.push_back(grid.y_edge(j));
    meta["x_edges"] = std::move(xe);
    meta["y_edges"] = std::move(ye);
    meta["total_shots"] = grid.total_shots;
    meta["particles_per_shot"] = grid.particles_per_shot;
    meta["out_of_range"] = grid.out_of_range;
    meta["csv"] = csv_path.filename().string();
    atomic_write_file(meta_path, meta.dump(2) + "\n");
}

inline HistogramGrid load_histogram(const std::filesystem::path& csv_path,
                                    const std::filesystem::path& meta_path) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(meta_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("histogram sidecar is not valid JSON: " + std::string(e.what()));
    }
    if (meta.value("schema", "") != "pauli.histogram_meta")
        throw SchemaError("expected a 'pauli.histogram_meta' file");
    if (meta.value("version", 0) != 1) throw SchemaError("unsupported histogram schema version");

    HistogramSpec spec;
    spec.projection = projection_from_string(meta.at("projection").get<std::string>());
    const auto& xe = meta.at("x_edges");
    const auto& ye = meta.at("y_edges");
    spec.nx = static_cast<int>(xe.size()) - 1;
    spec.ny = static_cast<int>(ye.size()) - 1;
    spec.x_min = xe.front().get<double>();
    spec.x_max = xe.back().get<double>();
    spec.y_min = ye.front().get<double>();
    spec.y_max = ye.back().get<double>();
    HistogramGrid grid = make_histogram(spec);
    grid.total_shots = meta.at("total_shots").get<std::int64_t>();
    grid.particles_per_shot = meta.at("particles_per_shot").get<int>();
    grid.out_of_range = meta.at("out_of_range").get<std::int64_t>();

    std::istringstream in(read_file(csv_path));
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty histogram file");
    const auto kv = detail::parse_meta_line(line, "histogram", 1);
    if (std::stoi(detail::require(kv, "nx")) != spec.nx ||
        std::stoi(detail::require(kv, "ny")) != spec.ny)
        throw SchemaError("histogram CSV and sidecar disagree on grid size");
    for (int iy = 0; iy < spec.ny; ++iy) {
        if (!std::getline(in, line)) throw SchemaError("histogram file truncated");
        const auto fields = detail::split_csv_row(line);
        if (static_cast<int>(fields.size()) != spec.nx)
            throw SchemaError("histogram row has wrong column count");
        for (int ix = 0; ix < spec.nx; ++ix)
            grid.count(ix, iy) = std::stoll(fields[static_cast<std::size_t>(ix)]);
    }
    return grid;
}

// ---------------------------------------------------------------------------
// RunConfig <-> JSON
// ---------------------------------------------------------------------------

/// Fully resolved run configuration; every field has a default, so a config
/// file may specify any subset. Round-trips losslessly through JSON.
struct RunConfig {
    Geometry geometry = harmonic_2d();
    int shells = 3;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    SamplerParams sampler;
    AnnealSchedule schedule;
    double sigma_window = 0.2;
    int grid_nx = 128;
    int grid_ny = 128;
    std::string choice_rule = "first";  ///< "first" | "random" | "manual:<path>"
    double gap_factor = 3.0;
    double r_min_factor = 0.05;
};

inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["schema"] = "pauli.config";
    j["version"] = 1;
    j["geometry"] = geometry_to_json(c.geometry);
    j["shells"] = c.shells;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["sampler"] = {{"step_sigma", c.sampler.step_sigma},
                    {"burn_in", c.sampler.burn_in},
                    {"thin", c.sampler.thin},
                    {"n_steps", c.sampler.n_steps},
                    {"update", c.sampler.update_mode == UpdateMode::AllParticles ? "all" : "single"}};
    j["anneal"] = {{"t_start", c.schedule.t_start},
                   {"t_end", c.schedule.t_end},
                   {"n_sweeps", c.schedule.n_sweeps},
                   {"cooling", c.schedule.cooling},
                   {"steps_per_sweep", c.schedule.steps_per_sweep},
                   {"step_scale", c.schedule.step_scale},
                   {"restarts", c.schedule.restarts}};
    j["analysis"] = {{"sigma_window", c.sigma_window},
                     {"grid_nx", c.grid_nx},
                     {"grid_ny", c.grid_ny},
                     {"choice_rule", c.choice_rule},
                     {"gap_factor", c.gap_factor},
                     {"r_min_factor", c.r_min_factor}};
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    if (j.contains("schema") && j["schema"] != "pauli.config")
        throw SchemaError("expected a 'pauli.config' file");
    if (j.contains("version") && j["version"] != 1)
        throw SchemaError("unsupported config schema version");
    RunConfig c;
    if (j.contains("geometry")) c.geometry = geometry_from_json(j["geometry"]);
    c.shells = j.value("shells", c.shells);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("sampler")) {
        const auto& s = j["sampler"];
        c.sampler.step_sigma = s.value("step_sigma", c.sampler.step_sigma);
        c.sampler.burn_in = s.value("burn_in", c.sampler.burn_in);
        c.sampler.thin = s.value("thin", c.sampler.thin);
        c.sampler.n_steps = s.value("n_steps", c.sampler.n_steps);
        if (s.contains("update"))
            c.sampler.update_mode = s["update"] == "single" ? UpdateMode::SingleParticle
                                                            : UpdateMode::AllParticles;
    }
    if (j.contains("anneal")) {
        const auto& a = j["anneal"];
        c.schedule.t_start = a.value("t_start", c.schedule.t_start);
        c.schedule.t_end = a.value("t_end", c.schedule.t_end);
        c.schedule.n_sweeps = a.value("n_sweeps", c.schedule.n_sweeps);
        c.schedule.cooling = a.value("cooling", c.schedule.cooling);
        c.schedule.steps_per_sweep = a.value("steps_per_sweep", c.schedule.steps_per_sweep);
        c.schedule.step_scale = a.value("step_scale", c.schedule.step_scale);
        c.schedule.restarts = a.value("restarts", c.schedule.restarts);
    }
    if (j.contains("analysis")) {
        const auto& a = j["analysis"];
        c.sigma_window = a.value("sigma_window", c.sigma_window);
        c.grid_nx = a.value("grid_nx", c.grid_nx);
        c.grid_ny = a.value("grid_ny", c.grid_ny);
        c.choice_rule = a.value("choice_rule", c.choice_rule);
        c.gap_factor = a.value("gap_factor", c.gap_factor);
        c.r_min_factor = a.value("r_min_factor", c.r_min_factor);
    }
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    try {
        return config_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("config file is not valid JSON: " + std::string(e.what()));
    }
}

inline void save_config(const std::filesystem::path& path, const RunConfig& c) {
    atomic_write_file(path, config_to_json(c).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Manifest of one pipeline run: the fully resolved config, plus a content
/// hash per input and output file. No timestamps and no paths — identical
/// config + seed must produce byte-identical manifests wherever they ran.
inline void write_manifest(const std::filesystem::path& path, const std::string& command,
                           const RunConfig& config,
                           const std::vector<std::filesystem::path>& inputs,
                           const std::vector<std::filesystem::path>& outputs) {
    nlohmann::json j;
    j["schema"] = "pauli.manifest";
    j["version"] = 1;
    j["command"] = command;
    j["config"] = config_to_json(config);
    j["config"].erase("out_dir");  // manifests are location-independent
    nlohmann::json in_list = nlohmann::json::array(), out_list = nlohmann::json::array();
    for (const auto& p : inputs)
        in_list.push_back({{"file", p.filename().string()}, {"fnv1a64", fnv1a64_hex(read_file(p))}});
    for (const auto& p : outputs)
        out_list.push_back({{"file", p.filename().string()}, {"fnv1a64", fnv1a64_hex(read_file(p))}});
    j["inputs"] = std::move(in_list);
    j["outputs"] = std::move(out_list);
    atomic_write_file(path, j.dump(2) + "\n");
}

}  // namespace pauli
