// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serialization and the command-line pipeline: exact round-trips for shots,
// patterns, histograms, and configs; schema rejection; manifest stability;
// and end-to-end subcommand runs through the installed binary.

#include <catch2/catch_amalgamated.hpp>

#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "pauli/analysis.hpp"
#include "pauli/geometry.hpp"
#include "pauli/io.hpp"
#include "pauli/optimizer.hpp"
#include "pauli/orbitals.hpp"
#include "pauli/rng.hpp"
#include "pauli/sampler.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace pauli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "pauli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd =
        std::string(PAULI_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    REQUIRE(raw != -1);
    return WEXITSTATUS(raw);
}

ShotSet tiny_chain(const Geometry& g, int shells, std::uint64_t seed) {
    SamplerParams p;
    p.step_sigma = 0.5;
    p.burn_in = 200;
    p.thin = 5;
    p.n_steps = 1200;
    p.seed = seed;
    return metropolis_chain(build_basis(g, shells), {}, p);
}

}  // namespace

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

TEST_CASE("format_double round-trips IEEE doubles exactly") {
    for (double v : {0.1, 1.0 / 3.0, -0.0, 1e-300, 6.02214076e23, -2.718281828459045,
                     0.7978845608028654}) {
        CHECK(std::stod(format_double(v)) == v);
    }
}

TEST_CASE("atomic file writes and reads round-trip") {
    const fs::path dir = fresh_dir("atomic");
    const std::string payload("alpha\nbeta\0gamma", 16);  // embedded NUL survives
    atomic_write_file(dir / "f.txt", payload);
    CHECK(read_file(dir / "f.txt") == payload);
    CHECK_FALSE(fs::exists(dir / "f.txt.tmp"));
    CHECK_THROWS_AS(read_file(dir / "missing.txt"), MissingInputError);
}

TEST_CASE("fnv1a64 matches the reference vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("hello") == 0xa430d84680aabd0bULL);
    CHECK(fnv1a64_hex("pauli") == "4960cea7c4add68e");
    CHECK(fnv1a64_hex("") == "cbf29ce484222325");
}

// ---------------------------------------------------------------------------
// Shots CSV
// ---------------------------------------------------------------------------

TEST_CASE("trap shots round-trip through CSV exactly") {
    const fs::path dir = fresh_dir("shots_trap");
    const ShotSet shots = tiny_chain(harmonic_2d(), 2, 17);
    REQUIRE(shots.size() > 0);
    save_shots(dir / "shots.csv", shots);
    const ShotSet loaded = load_shots(dir / "shots.csv");

    CHECK(loaded.geometry == shots.geometry);
    CHECK(loaded.particles == shots.particles);
    CHECK(loaded.params.seed == shots.params.seed);
    CHECK(loaded.params.step_sigma == shots.params.step_sigma);
    CHECK(loaded.params.burn_in == shots.params.burn_in);
    CHECK(loaded.params.thin == shots.params.thin);
    CHECK(loaded.params.n_steps == shots.params.n_steps);
    CHECK(loaded.accept_rate == shots.accept_rate);
    REQUIRE(loaded.size() == shots.size());
    for (std::size_t s = 0; s < shots.size(); ++s)
        for (std::size_t i = 0; i < shots.configs[s].points.size(); ++i)
            CHECK(loaded.configs[s].points[i] == shots.configs[s].points[i]);  // bit-exact
}

TEST_CASE("sphere shots round-trip through (theta, phi) columns") {
    const fs::path dir = fresh_dir("shots_sphere");
    const ShotSet shots = tiny_chain(sphere_geometry(), 2, 23);
    save_shots(dir / "shots.csv", shots);
    const ShotSet loaded = load_shots(dir / "shots.csv");
    REQUIRE(loaded.size() == shots.size());
    for (std::size_t s = 0; s < shots.size(); ++s)
        for (std::size_t i = 0; i < shots.configs[s].points.size(); ++i) {
            CHECK((loaded.configs[s].points[i] - shots.configs[s].points[i]).norm() < 1e-12);
            CHECK(std::abs(loaded.configs[s].points[i].norm() - 1.0) < 1e-12);
        }
}

TEST_CASE("shots files with tampered schema are rejected") {
    const fs::path dir = fresh_dir("shots_bad");
    const ShotSet shots = tiny_chain(harmonic_1d(), 2, 5);
    save_shots(dir / "shots.csv", shots);
    const std::string original = read_file(dir / "shots.csv");

    // version bump
    std::string bumped = original;
    bumped.replace(bumped.find(" v1 "), 4, " v2 ");
    atomic_write_file(dir / "v2.csv", bumped);
    CHECK_THROWS_AS(load_shots(dir / "v2.csv"), SchemaError);

    // wrong kind
    std::string kind = original;
    kind.replace(kind.find("pauli.shots"), 11, "pauli.other");
    atomic_write_file(dir / "kind.csv", kind);
    CHECK_THROWS_AS(load_shots(dir / "kind.csv"), SchemaError);

    // tampered header row
    std::string header = original;
    header.replace(header.find("shot_id,particle_id"), 19, "shot,particle");
    atomic_write_file(dir / "head.csv", header);
    CHECK_THROWS_AS(load_shots(dir / "head.csv"), SchemaError);

    // truncated mid-shot
    std::string cut = original;
    cut.erase(cut.find_last_of('\n', cut.size() - 2) + 1);
    atomic_write_file(dir / "cut.csv", cut);
    CHECK_THROWS_AS(load_shots(dir / "cut.csv"), SchemaError);

    CHECK_THROWS_AS(load_shots(dir / "nope.csv"), MissingInputError);
}

// ---------------------------------------------------------------------------
// Pattern JSON
// ---------------------------------------------------------------------------

TEST_CASE("patterns round-trip through JSON") {
    const fs::path dir = fresh_dir("pattern");

    Pattern trap;
    trap.config.geometry = harmonic_2d();
    trap.config.points = {Vec3(0.5, -0.25, 0), Vec3(-0.125, 1.0, 0), Vec3(0.75, 0.5, 0)};
    trap.log_density_at_max = -2.9492830;
    save_pattern(dir / "trap.json", trap);
    const Pattern trap2 = load_pattern(dir / "trap.json");
    CHECK(trap2.config.geometry == trap.config.geometry);
    CHECK(trap2.log_density_at_max == trap.log_density_at_max);
    REQUIRE(trap2.config.points.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(trap2.config.points[i] == trap.config.points[i]);  // exact for traps

    Pattern sphere;
    sphere.config.geometry = sphere_geometry();
    sphere.config.points = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1),
                            Vec3(-1, -1, -1).normalized()};
    sphere.log_density_at_max = -4.5789195;
    save_pattern(dir / "sphere.json", sphere);
    const Pattern sphere2 = load_pattern(dir / "sphere.json");
    REQUIRE(sphere2.config.points.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK((sphere2.config.points[i] - sphere.config.points[i]).norm() < 1e-12);

    atomic_write_file(dir / "garbage.json", "не JSON {");
    CHECK_THROWS_AS(load_pattern(dir / "garbage.json"), SchemaError);
    atomic_write_file(dir / "wrong.json", R"({"schema":"pauli.config","version":1})");
    CHECK_THROWS_AS(load_pattern(dir / "wrong.json"), SchemaError);
    CHECK_THROWS_AS(load_pattern(dir / "missing.json"), MissingInputError);
}

// ---------------------------------------------------------------------------
// Histogram CSV + sidecar
// ---------------------------------------------------------------------------

TEST_CASE("histograms round-trip through CSV and sidecar") {
    const fs::path dir = fresh_dir("hist");
    Rng rng(9);
    std::vector<Vec3> pts;
    for (int i = 0; i < 2000; ++i) pts.push_back(uniform_sphere_point(rng));
    const HistogramGrid grid =
        histogram(pts, HistogramSpec::mollweide(32, 16), 500, 4);
    save_histogram(dir / "h.csv", dir / "h.meta.json", grid, sphere_geometry());

    const HistogramGrid loaded = load_histogram(dir / "h.csv", dir / "h.meta.json");
    CHECK(loaded.spec == grid.spec);
    CHECK(loaded.total_shots == grid.total_shots);
    CHECK(loaded.particles_per_shot == grid.particles_per_shot);
    CHECK(loaded.out_of_range == grid.out_of_range);
    CHECK(loaded.counts == grid.counts);

    // sidecar schema violations
    nlohmann::json meta = nlohmann::json::parse(read_file(dir / "h.meta.json"));
    meta["schema"] = "pauli.other";
    atomic_write_file(dir / "bad.meta.json", meta.dump(2));
    CHECK_THROWS_AS(load_histogram(dir / "h.csv", dir / "bad.meta.json"), SchemaError);

    // CSV / sidecar grid-size disagreement
    meta = nlohmann::json::parse(read_file(dir / "h.meta.json"));
    meta["x_edges"].erase(meta["x_edges"].size() - 1);
    atomic_write_file(dir / "short.meta.json", meta.dump(2));
    CHECK_THROWS_AS(load_histogram(dir / "h.csv", dir / "short.meta.json"), SchemaError);
}

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

TEST_CASE("run configs accept partial JSON and round-trip") {
    const RunConfig defaults = config_from_json(nlohmann::json::object());
    CHECK(defaults.geometry.kind == GeometryKind::Harmonic2D);
    CHECK(defaults.shells == 3);
    CHECK(defaults.sampler.thin == 10);
    CHECK(defaults.choice_rule == "first");

    const RunConfig partial = config_from_json(nlohmann::json::parse(
        R"({"shells": 4, "sampler": {"thin": 3}, "analysis": {"sigma_window": 0.35}})"));
    CHECK(partial.shells == 4);
    CHECK(partial.sampler.thin == 3);
    CHECK(partial.sampler.burn_in == 10000);  // untouched default
    CHECK(partial.sigma_window == 0.35);

    const fs::path dir = fresh_dir("config");
    RunConfig full;
    full.geometry = sphere_geometry();
    full.shells = 2;
    full.seed = 99;
    full.sampler.n_steps = 5555;
    full.schedule.restarts = 7;
    full.choice_rule = "random";
    save_config(dir / "c.json", full);
    const RunConfig loaded = load_config(dir / "c.json");
    CHECK(config_to_json(loaded) == config_to_json(full));

    CHECK_THROWS_AS(
        config_from_json(nlohmann::json::parse(R"({"schema":"pauli.config","version":9})")),
        SchemaError);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), MissingInputError);
}

TEST_CASE("manifests are byte-identical across rewrites and hash their files") {
    const fs::path dir = fresh_dir("manifest");
    atomic_write_file(dir / "in.txt", "input-data");
    atomic_write_file(dir / "out.txt", "output-data");
    RunConfig config;
    config.seed = 4;
    write_manifest(dir / "m1.json", "sample", config, {dir / "in.txt"}, {dir / "out.txt"});
    write_manifest(dir / "m2.json", "sample", config, {dir / "in.txt"}, {dir / "out.txt"});
    const std::string a = read_file(dir / "m1.json");
    CHECK(a == read_file(dir / "m2.json"));

    const nlohmann::json j = nlohmann::json::parse(a);
    CHECK(j["schema"] == "pauli.manifest");
    CHECK(j["command"] == "sample");
    CHECK(j["inputs"][0]["file"] == "in.txt");
    CHECK(j["inputs"][0]["fnv1a64"] == fnv1a64_hex("input-data"));
    CHECK(j["outputs"][0]["fnv1a64"] == fnv1a64_hex("output-data"));
}

// ---------------------------------------------------------------------------
// CLI end-to-end
// ---------------------------------------------------------------------------

TEST_CASE("cli: basis-info prints the orbital table") {
    const fs::path dir = fresh_dir("cli_basis");
    CHECK(run_cli("basis-info --geometry 2d --shells 3", dir / "log.txt") == 0);
    const std::string out = read_file(dir / "log.txt");
    CHECK(out.find("particles    6") != std::string::npos);
    CHECK(out.find("closed shell 3") != std::string::npos);
}

TEST_CASE("cli: invalid arguments exit with the config-error code") {
    const fs::path dir = fresh_dir("cli_bad");
    CHECK(run_cli("basis-info --bogus-flag", dir / "a.txt") == 2);
    CHECK(run_cli("basis-info --geometry 2d --shells 0", dir / "b.txt") == 2);
    CHECK(run_cli("basis-info --config " + (dir / "none.json").string(), dir / "c.txt") == 3);
    CHECK(run_cli("", dir / "d.txt") == 2);  // missing subcommand
}

TEST_CASE("cli: optimize writes a pattern and manifest") {
    const fs::path dir = fresh_dir("cli_opt");
    const std::string cfg = R"({
      "anneal": {"restarts": 6, "n_sweeps": 150, "steps_per_sweep": 80}
    })";
    atomic_write_file(dir / "cfg.json", cfg);
    const int rc = run_cli("optimize --config " + (dir / "cfg.json").string() +
                               " --geometry 1d --shells 2 --seed 11 --out " + dir.string(),
                           dir / "log.txt");
    CHECK(rc == 0);
    REQUIRE(fs::exists(dir / "pattern.json"));
    REQUIRE(fs::exists(dir / "manifest_optimize.json"));
    const Pattern p = load_pattern(dir / "pattern.json");
    REQUIRE(p.config.points.size() == 2);
    std::vector<double> xs = {p.config.points[0].x(), p.config.points[1].x()};
    std::sort(xs.begin(), xs.end());
    const double a = 1.0 / std::sqrt(2.0);
    CHECK(xs[0] == Catch::Approx(-a).margin(1e-3));
    CHECK(xs[1] == Catch::Approx(+a).margin(1e-3));
}

TEST_CASE("cli: sample is deterministic per seed") {
    const fs::path dir = fresh_dir("cli_sample");
    const std::string cfg = R"({
      "geometry": {"kind": "1d", "scale": 1.0},
      "shells": 2,
      "sampler": {"burn_in": 500, "thin": 5, "n_steps": 3000}
    })";
    atomic_write_file(dir / "cfg.json", cfg);
    const std::string base = "sample --config " + (dir / "cfg.json").string() + " --seed 77 --out ";
    CHECK(run_cli(base + (dir / "a").string(), dir / "la.txt") == 0);
    CHECK(run_cli(base + (dir / "b").string(), dir / "lb.txt") == 0);
    const std::string shots_a = read_file(dir / "a" / "shots.csv");
    CHECK(shots_a == read_file(dir / "b" / "shots.csv"));
    CHECK(read_file(dir / "a" / "manifest_sample.json") ==
          read_file(dir / "b" / "manifest_sample.json"));
    const ShotSet shots = load_shots(dir / "a" / "shots.csv");
    CHECK(shots.size() == 500);

    // --shots asks for a recorded-shot count directly
    CHECK(run_cli("sample --geometry 1d --shells 2 --seed 1 --shots 120 --out " +
                      (dir / "c").string(),
                  dir / "lc.txt") == 0);
    CHECK(load_shots(dir / "c" / "shots.csv").size() == 120);
}

TEST_CASE("cli: recover without a pattern exits with the missing-input code") {
    const fs::path dir = fresh_dir("cli_recover_missing");
    CHECK(run_cli("recover --geometry 2d --shells 2 --out " + dir.string(), dir / "log.txt") == 3);
}

TEST_CASE("cli: full 2D pipeline optimize -> sample -> recover") {
    const fs::path dir = fresh_dir("cli_pipeline");
    const std::string cfg = R"({
      "geometry": {"kind": "2d", "scale": 1.0},
      "shells": 2,
      "sampler": {"burn_in": 1000, "thin": 5, "n_steps": 11000},
      "anneal": {"restarts": 6, "n_sweeps": 150, "steps_per_sweep": 80}
    })";
    atomic_write_file(dir / "cfg.json", cfg);
    const std::string common =
        " --config " + (dir / "cfg.json").string() + " --seed 3 --out " + dir.string();
    CHECK(run_cli("optimize" + common, dir / "l1.txt") == 0);
    CHECK(run_cli("sample" + common, dir / "l2.txt") == 0);
    CHECK(run_cli("recover" + common, dir / "l3.txt") == 0);
    REQUIRE(fs::exists(dir / "recovered.csv"));
    const HistogramGrid grid = load_histogram(dir / "recovered.csv", dir / "recovered.meta.json");
    CHECK(grid.total_shots == 2000);
    CHECK(grid.particles_per_shot == 3);
    CHECK(grid.total_counts() + grid.out_of_range == 6000);
}

TEST_CASE("cli: postselect runs, respects manual maxima, and reports starvation") {
    const fs::path dir = fresh_dir("cli_postselect");
    const std::string cfg = R"({
      "geometry": {"kind": "1d", "scale": 1.0},
      "shells": 2,
      "sampler": {"burn_in": 1000, "thin": 5, "n_steps": 21000}
    })";
    atomic_write_file(dir / "cfg.json", cfg);
    const std::string common =
        " --config " + (dir / "cfg.json").string() + " --seed 8 --out " + dir.string();
    CHECK(run_cli("sample" + common, dir / "l1.txt") == 0);

    CHECK(run_cli("postselect" + common + " --sigma-window 0.5", dir / "l2.txt") == 0);
    REQUIRE(fs::exists(dir / "postselect_summary.json"));
    nlohmann::json summary = nlohmann::json::parse(read_file(dir / "postselect_summary.json"));
    CHECK(summary["stages"] == 2);
    CHECK(summary["survivors"].get<std::size_t>() > 0);
    CHECK(fs::exists(dir / "stage_0.csv"));
    CHECK(fs::exists(dir / "stage_1.csv"));
    CHECK(fs::exists(dir / "survivors.csv"));

    // manual maxima file drives the cascade verbatim
    const double a = 1.0 / std::sqrt(2.0);
    nlohmann::json maxima;
    maxima["schema"] = "pauli.maxima";
    maxima["version"] = 1;
    maxima["points"] = {{-a}, {a}};
    atomic_write_file(dir / "maxima.json", maxima.dump(2));
    CHECK(run_cli("postselect" + common + " --sigma-window 0.5 --choice-rule manual:" +
                      (dir / "maxima.json").string(),
                  dir / "l3.txt") == 0);
    summary = nlohmann::json::parse(read_file(dir / "postselect_summary.json"));
    CHECK(summary["selected_maxima"][0][0].get<double>() == Catch::Approx(-a).margin(1e-12));
    CHECK(summary["selected_maxima"][1][0].get<double>() == Catch::Approx(+a).margin(1e-12));

    // a vanishing window starves the cascade: dedicated exit code
    CHECK(run_cli("postselect" + common + " --sigma-window 1e-9", dir / "l4.txt") == 4);
    const std::string log = read_file(dir / "l4.txt");
    CHECK(log.find("empty post-selection at stage") != std::string::npos);

    // unknown rule is a configuration error
    CHECK(run_cli("postselect" + common + " --sigma-window 0.5 --choice-rule banana",
                  dir / "l5.txt") == 2);
}

TEST_CASE("cli: density tabulates the closed-shell sphere density") {
    const fs::path dir = fresh_dir("cli_density");
    CHECK(run_cli("density --geometry sphere --shells 2 --out " + dir.string(),
                  dir / "log.txt") == 0);
    REQUIRE(fs::exists(dir / "density.csv"));
    std::ifstream in(dir / "density.csv");
    std::string line;
    std::getline(in, line);  // metadata
    CHECK(line.rfind("# pauli.density v1", 0) == 0);
    std::getline(in, line);
    const double value = std::stod(line.substr(0, line.find(',')));
    CHECK(value == Catch::Approx(1.0 / (4.0 * kPi)).epsilon(1e-12));  // uniform 1/4pi
}
