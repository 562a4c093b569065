// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line pipeline for Pauli-crystal studies of non-interacting trapped
// fermions: enumerate single-particle orbitals, search for the most probable
// many-body configuration, draw single-shot samples, and reconstruct the
// crystal geometry from those shots by pattern alignment or post-selection.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "pauli/analysis.hpp"
#include "pauli/errors.hpp"
#include "pauli/io.hpp"
#include "pauli/optimizer.hpp"
#include "pauli/orbitals.hpp"
#include "pauli/sampler.hpp"
#include "pauli/wavefunction.hpp"

namespace {

// Exit codes, part of the CLI contract.
constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitMissingInput = 3;
constexpr int kExitEmptyPostselection = 4;
constexpr int kExitNumericalFailure = 5;

namespace fs = std::filesystem;

struct CliOptions {
    std::string config_path;
    std::string geometry;
    std::string out_dir;
    std::string choice_rule;
    std::uint64_t seed = 0;
    int shells = 0;
    std::int64_t shots = 0;
    double sigma_window = 0.0;
    bool seed_set = false, geometry_set = false, shells_set = false, shots_set = false;
    bool sigma_set = false, out_set = false, choice_set = false;
};

/// Resolve the run configuration: defaults, then config file, then explicit
/// command-line flags (highest precedence). The top-level seed feeds both
/// the sampler and the annealer streams.
pauli::RunConfig resolve_config(const CliOptions& cli) {
    pauli::RunConfig config;
    if (!cli.config_path.empty()) config = pauli::load_config(cli.config_path);
    if (cli.geometry_set)
        config.geometry = {pauli::geometry_kind_from_string(cli.geometry), config.geometry.scale};
    if (cli.shells_set) config.shells = cli.shells;
    if (cli.seed_set) config.seed = cli.seed;
    if (cli.out_set) config.out_dir = cli.out_dir;
    if (cli.sigma_set) config.sigma_window = cli.sigma_window;
    if (cli.choice_set) config.choice_rule = cli.choice_rule;
    if (cli.shots_set) {
        if (cli.shots <= 0) throw std::invalid_argument("--shots must be positive");
        // --shots asks for N recorded shots after burn-in and thinning.
        config.sampler.n_steps = config.sampler.burn_in + cli.shots * config.sampler.thin;
    }
    if (config.shells < 1) throw std::invalid_argument("shells must be >= 1");
    pauli::validate(config.geometry);
    config.sampler.seed = config.seed;
    config.schedule.seed = config.seed;
    pauli::validate(config.sampler);
    pauli::validate(config.schedule);
    if (config.sigma_window <= 0.0) throw std::invalid_argument("sigma_window must be positive");
    if (config.grid_nx < 1 || config.grid_ny < 1)
        throw std::invalid_argument("grid resolution must be positive");
    return config;
}

/// Parse a choice-rule string: "first", "random", or "manual:<file>" where
/// the file is a pauli.maxima JSON list of stage points.
pauli::ChoiceRule parse_choice_rule(const std::string& text, const pauli::Geometry& geometry) {
    if (text == "first") return pauli::ChoiceRule::first();
    if (text == "random") return pauli::ChoiceRule::random_choice();
    if (text.rfind("manual:", 0) == 0) {
        const std::string path = text.substr(7);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(pauli::read_file(path));
        } catch (const nlohmann::json::parse_error& e) {
            throw pauli::SchemaError("maxima file is not valid JSON: " + std::string(e.what()));
        }
        if (j.value("schema", "") != "pauli.maxima")
            throw pauli::SchemaError("expected a 'pauli.maxima' file");
        if (j.value("version", 0) != 1) throw pauli::SchemaError("unsupported maxima schema version");
        std::vector<pauli::Vec3> points;
        for (const auto& row : j.at("points")) {
            pauli::Vec3 p = pauli::Vec3::Zero();
            if (geometry.is_trap()) {
                if (static_cast<int>(row.size()) != geometry.dim())
                    throw pauli::SchemaError("maxima point dimension mismatch");
                for (int d = 0; d < geometry.dim(); ++d)
                    p[d] = row[static_cast<std::size_t>(d)].get<double>();
            } else {
                if (row.size() != 2)
                    throw pauli::SchemaError("sphere maxima points need (theta, phi)");
                p = pauli::spherical_to_unit(row[0].get<double>(), row[1].get<double>());
            }
            points.push_back(p);
        }
        return pauli::ChoiceRule::manual(std::move(points));
    }
    throw std::invalid_argument("unknown choice rule '" + text +
                                "' (expected first, random, or manual:<file>)");
}

void write_run_manifest(const pauli::RunConfig& config, const std::string& command,
                        const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    const fs::path dir(config.out_dir);
    pauli::write_manifest(dir / ("manifest_" + command + ".json"), command, config, inputs,
                          outputs);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_basis_info(const pauli::RunConfig& config) {
    const pauli::OrbitalBasis basis = pauli::build_basis(config.geometry, config.shells);
    std::printf("geometry     %s (scale %s)\n", pauli::to_string(config.geometry.kind),
                pauli::format_double(config.geometry.scale).c_str());
    std::printf("shells       %d\n", config.shells);
    std::printf("particles    %zu\n", basis.size());
    std::printf("%-6s %-14s %-10s %s\n", "index", "orbital", "energy", "shell");
    for (std::size_t i = 0; i < basis.size(); ++i) {
        const pauli::OrbitalIndex& idx = basis.indices[i];
        std::printf("%-6zu %-14s %-10s %d\n", i,
                    pauli::orbital_label(config.geometry, idx).c_str(),
                    pauli::format_double(pauli::orbital_energy(config.geometry, idx)).c_str(),
                    pauli::orbital_level(config.geometry, idx) + 1);
    }
    for (int s = 1; s <= config.shells; ++s)
        std::printf("closed shell %-2d -> %zu particles\n", s,
                    pauli::closed_shell_count(config.geometry, s));
    return kExitOk;
}

int cmd_optimize(const pauli::RunConfig& config) {
    const pauli::OrbitalBasis basis = pauli::build_basis(config.geometry, config.shells);
    pauli::AnnealReport report;
    const pauli::Pattern pattern = pauli::anneal(basis, config.schedule, &report);

    const fs::path dir(config.out_dir);
    fs::create_directories(dir);
    const fs::path pattern_path = dir / "pattern.json";
    pauli::save_pattern(pattern_path, pattern);
    write_run_manifest(config, "optimize", {}, {pattern_path});

    std::printf("log density at maximum: %s\n",
                pauli::format_double(pattern.log_density_at_max).c_str());
    std::printf("restarts agreeing with best: %.0f%%\n", 100.0 * report.best_fraction);
    if (config.geometry.is_trap()) {
        for (const pauli::Shell& shell : pauli::detect_shells(pattern.config, config.gap_factor))
            std::printf("shell: %d particles at radius %s\n", shell.count,
                        pauli::format_double(shell.radius).c_str());
    }
    std::printf("wrote %s\n", pattern_path.string().c_str());
    return kExitOk;
}

int cmd_sample(const pauli::RunConfig& config) {
    const pauli::OrbitalBasis basis = pauli::build_basis(config.geometry, config.shells);
    const pauli::ShotSet shots = pauli::metropolis_chain(basis, {}, config.sampler);

    const fs::path dir(config.out_dir);
    fs::create_directories(dir);
    const fs::path shots_path = dir / "shots.csv";
    pauli::save_shots(shots_path, shots);
    write_run_manifest(config, "sample", {}, {shots_path});

    std::printf("recorded shots: %zu (acceptance rate %.3f)\n", shots.size(), shots.accept_rate);
    std::printf("wrote %s\n", shots_path.string().c_str());
    return kExitOk;
}

int cmd_recover(const pauli::RunConfig& config) {
    const fs::path dir(config.out_dir);
    const fs::path pattern_path = dir / "pattern.json";
    const fs::path shots_path = dir / "shots.csv";
    const pauli::Pattern pattern = pauli::load_pattern(pattern_path);
    const pauli::ShotSet shots = pauli::load_shots(shots_path);

    pauli::MatchOptions opts;
    opts.r_min_factor = config.r_min_factor;
    opts.gap_factor = config.gap_factor;
    const pauli::HistogramSpec spec =
        pauli::default_histogram_spec(shots.geometry, config.grid_nx, config.grid_ny);
    const pauli::HistogramGrid grid = pauli::recover_pattern(shots, pattern, spec, opts);

    const fs::path csv = dir / "recovered.csv";
    const fs::path meta = dir / "recovered.meta.json";
    pauli::save_histogram(csv, meta, grid, shots.geometry);
    write_run_manifest(config, "recover", {pattern_path, shots_path}, {csv, meta});

    std::printf("aligned %zu shots onto the pattern\n", shots.size());
    std::printf("wrote %s and %s\n", csv.string().c_str(), meta.string().c_str());
    return kExitOk;
}

int cmd_postselect(const pauli::RunConfig& config) {
    const fs::path dir(config.out_dir);
    const fs::path shots_path = dir / "shots.csv";
    const pauli::ShotSet shots = pauli::load_shots(shots_path);

    const pauli::ChoiceRule rule = parse_choice_rule(config.choice_rule, shots.geometry);
    pauli::PostselectOptions options;
    options.seed = config.seed;
    options.stage_grid = pauli::default_histogram_spec(shots.geometry, config.grid_nx, config.grid_ny);
    options.stage_grid_set = true;

    const auto [state, stage_histograms] =
        pauli::run_postselection(shots, config.sigma_window, rule, options);

    fs::create_directories(dir);
    std::vector<fs::path> outputs;
    for (std::size_t s = 0; s < stage_histograms.size(); ++s) {
        const fs::path csv = dir / ("stage_" + std::to_string(s) + ".csv");
        const fs::path meta = dir / ("stage_" + std::to_string(s) + ".meta.json");
        pauli::save_histogram(csv, meta, stage_histograms[s], shots.geometry);
        outputs.push_back(csv);
        outputs.push_back(meta);
    }
    const pauli::HistogramGrid final_grid = pauli::survivor_histogram(state, options.stage_grid);
    const fs::path final_csv = dir / "survivors.csv";
    const fs::path final_meta = dir / "survivors.meta.json";
    pauli::save_histogram(final_csv, final_meta, final_grid, shots.geometry);
    outputs.push_back(final_csv);
    outputs.push_back(final_meta);

    nlohmann::json summary;
    summary["schema"] = "pauli.postselect_summary";
    summary["version"] = 1;
    summary["sigma_window"] = state.sigma_window;
    summary["stages"] = state.stage();
    summary["survivors"] = state.survivors.size();
    nlohmann::json maxima = nlohmann::json::array();
    for (const pauli::Vec3& m : state.selected_maxima) {
        nlohmann::json row = nlohmann::json::array();
        if (shots.geometry.is_trap()) {
            for (int d = 0; d < shots.geometry.dim(); ++d) row.push_back(m[d]);
        } else {
            double theta, phi;
            pauli::unit_to_spherical(m, theta, phi);
            row.push_back(theta);
            row.push_back(phi);
        }
        maxima.push_back(std::move(row));
    }
    summary["selected_maxima"] = std::move(maxima);
    nlohmann::json counts = nlohmann::json::array();
    for (const pauli::HistogramGrid& h : stage_histograms) counts.push_back(h.total_shots);
    summary["survivors_per_stage"] = std::move(counts);
    const fs::path summary_path = dir / "postselect_summary.json";
    pauli::atomic_write_file(summary_path, summary.dump(2) + "\n");
    outputs.push_back(summary_path);

    write_run_manifest(config, "postselect", {shots_path}, outputs);
    std::printf("post-selection kept %zu of %zu shots over %d stages\n", state.survivors.size(),
                shots.size(), state.stage());
    std::printf("wrote %s\n", summary_path.string().c_str());
    return kExitOk;
}

int cmd_density(const pauli::RunConfig& config) {
    const pauli::OrbitalBasis basis = pauli::build_basis(config.geometry, config.shells);
    const pauli::Geometry& g = config.geometry;
    // Trap densities are tabulated on the Cartesian grid used for shot
    // histograms; the sphere density is tabulated on a theta-phi grid, where
    // equal-area bin measures are available analytically.
    const pauli::HistogramSpec spec =
        g.is_trap() ? pauli::default_histogram_spec(g, config.grid_nx, config.grid_ny)
                    : pauli::HistogramSpec::theta_phi(config.grid_ny, config.grid_nx);
    const pauli::HistogramGrid frame = pauli::make_histogram(spec);

    std::ostringstream out;
    out << "# pauli.density v1 nx=" << spec.nx << " ny=" << spec.ny << "\n";
    for (int iy = 0; iy < spec.ny; ++iy) {
        for (int ix = 0; ix < spec.nx; ++ix) {
            pauli::Vec3 p = pauli::Vec3::Zero();
            if (g.is_trap()) {
                p.x() = frame.x_center(ix);
                if (g.dim() >= 2) p.y() = frame.y_center(iy);
            } else {
                p = pauli::spherical_to_unit(frame.y_center(iy), frame.x_center(ix));
            }
            if (ix) out << ',';
            out << pauli::format_double(pauli::one_particle_density(basis, p));
        }
        out << '\n';
    }

    const fs::path dir(config.out_dir);
    fs::create_directories(dir);
    const fs::path csv = dir / "density.csv";
    pauli::atomic_write_file(csv, out.str());

    nlohmann::json meta;
    meta["schema"] = "pauli.density_meta";
    meta["version"] = 1;
    meta["projection"] = pauli::to_string(spec.projection);
    meta["geometry"] = pauli::geometry_to_json(g);
    nlohmann::json xe = nlohmann::json::array(), ye = nlohmann::json::array();
    for (int i = 0; i <= spec.nx; ++i) xe.push_back(frame.x_edge(i));
    for (int j = 0; j <= spec.ny; ++j) ye.push_back(frame.y_edge(j));
    meta["x_edges"] = std::move(xe);
    meta["y_edges"] = std::move(ye);
    meta["particles"] = basis.size();
    meta["csv"] = csv.filename().string();
    const fs::path meta_path = dir / "density.meta.json";
    pauli::atomic_write_file(meta_path, meta.dump(2) + "\n");

    write_run_manifest(config, "density", {}, {csv, meta_path});
    std::printf("wrote %s and %s\n", csv.string().c_str(), meta_path.string().c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "pauli: Pauli-crystal pipeline for trapped non-interacting fermions\n"
        "(orbital tables, most-probable configurations, single-shot sampling,\n"
        "pattern recovery, post-selection, reference densities)"};
    app.require_subcommand(1);

    CliOptions cli;
    auto add_common = [&cli](CLI::App* sub) {
        sub->add_option("--config", cli.config_path, "JSON run configuration (pauli.config v1)");
        sub->add_option("--seed", cli.seed, "random seed")->trigger_on_parse()
            ->each([&cli](const std::string&) { cli.seed_set = true; });
        sub->add_option("--out", cli.out_dir, "output directory")->trigger_on_parse()
            ->each([&cli](const std::string&) { cli.out_set = true; });
        sub->add_option("--geometry", cli.geometry, "one of: 1d, 2d, 3d, sphere")
            ->check(CLI::IsMember({"1d", "2d", "3d", "sphere"}))->trigger_on_parse()
            ->each([&cli](const std::string&) { cli.geometry_set = true; });
        sub->add_option("--shells", cli.shells, "number of closed shells")->trigger_on_parse()
            ->each([&cli](const std::string&) { cli.shells_set = true; });
    };

    CLI::App* basis_info = app.add_subcommand("basis-info", "print the orbital table");
    add_common(basis_info);

    CLI::App* optimize =
        app.add_subcommand("optimize", "find the most probable configuration (writes pattern.json)");
    add_common(optimize);

    CLI::App* sample =
        app.add_subcommand("sample", "draw single-shot configurations (writes shots.csv)");
    add_common(sample);
    sample->add_option("--shots", cli.shots, "recorded shots after burn-in and thinning")
        ->trigger_on_parse()
        ->each([&cli](const std::string&) { cli.shots_set = true; });

    CLI::App* recover = app.add_subcommand(
        "recover", "align shots onto the pattern (reads pattern.json + shots.csv)");
    add_common(recover);

    CLI::App* postselect =
        app.add_subcommand("postselect", "conditional single-shot analysis (reads shots.csv)");
    add_common(postselect);
    postselect->add_option("--sigma-window", cli.sigma_window,
                           "acceptance window width (units of the trap length / radians)")
        ->trigger_on_parse()
        ->each([&cli](const std::string&) { cli.sigma_set = true; });
    postselect->add_option("--choice-rule", cli.choice_rule,
                           "maximum tie-break: first, random, or manual:<file>")
        ->trigger_on_parse()
        ->each([&cli](const std::string&) { cli.choice_set = true; });

    CLI::App* density =
        app.add_subcommand("density", "tabulate the exact one-particle density (writes density.csv)");
    add_common(density);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    try {
        const pauli::RunConfig config = resolve_config(cli);
        if (basis_info->parsed()) return cmd_basis_info(config);
        if (optimize->parsed()) return cmd_optimize(config);
        if (sample->parsed()) return cmd_sample(config);
        if (recover->parsed()) return cmd_recover(config);
        if (postselect->parsed()) return cmd_postselect(config);
        if (density->parsed()) return cmd_density(config);
        std::fprintf(stderr, "error: no subcommand selected\n");
        return kExitConfigError;
    } catch (const pauli::EmptyPostselectionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitEmptyPostselection;
    } catch (const pauli::MissingInputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitMissingInput;
    } catch (const pauli::SchemaError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitMissingInput;
    } catch (const pauli::NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumericalFailure;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumericalFailure;
    }
}
