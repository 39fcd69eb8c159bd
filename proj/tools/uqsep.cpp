// uqsep: seeded, file-driven experiment runner for the uncertainty-separation
// toolkit. Subcommands: generate / train / separate / score. All diagnostics
// go to stderr; machine-readable output lands in files only.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "uqsep/config.hpp"
#include "uqsep/defaults.hpp"
#include "uqsep/maps.hpp"
#include "uqsep/scoring.hpp"
#include "uqsep/separation.hpp"

namespace fs = std::filesystem;
using namespace uqsep;

namespace {

// one exit code per error class
enum ExitCode {
    kOk = 0,
    kConfigError = 1,
    kIoError = 2,
    kParseError = 3,
    kTrainError = 4,
    kDomainError = 5,
};

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::string out_override;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "run configuration file");
    if (needs_config) opt->required();
    cmd->add_option("--seed", args.seed_override, "seed override (takes precedence over the config)");
    cmd->add_option("--out", args.out_override, "output directory override");
    cmd->add_flag("--quiet", args.quiet, "suppress progress notes on stderr");
}

RunConfig load_run_config(const CommonArgs& args) {
    RunConfig rc = resolve_run_config(parse_config_file(args.config_path));
    if (args.seed_override) {
        rc.seed = *args.seed_override;
        rc.separation.seed = rc.seed;
    }
    if (!args.out_override.empty()) rc.out_dir = args.out_override;
    if (rc.out_dir.empty())
        throw ConfigError("no output directory: set [run] out_dir or pass --out");
    return rc;
}

void note(const CommonArgs& args, const std::string& msg) {
    if (!args.quiet) std::cerr << "uqsep: " << msg << "\n";
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string());
}

int cmd_generate(const CommonArgs& args) {
    const RunConfig rc = load_run_config(args);
    const Problem problem = make_problem(rc);
    const int n = rc.n_points > 0 ? rc.n_points : default_initial_points(problem);
    note(args, "sampling " + std::to_string(n) + " points from problem '" + problem.name + "'");
    const Dataset ds = build_initial_dataset(problem, n, derive_seed(rc.seed, tag64("init_data")));

    const fs::path dir(rc.out_dir);
    ensure_dir(dir);
    save_dataset_csv((dir / "dataset.csv").string(), ds);
    detail::write_text_file(dir / "regions.txt", detail::regions_manifest(problem));
    detail::write_text_file(dir / "config_echo.ini", rc.echo);
    note(args, "wrote " + (dir / "dataset.csv").string());
    return kOk;
}

std::shared_ptr<Surrogate> train_from_config(const RunConfig& rc, const Dataset& ds) {
    SeparationConfig sc = rc.separation;
    switch (sc.kind) {
        case SurrogateKind::eqr: {
            EqrConfig c = sc.eqr;
            c.train.seed = derive_seed(rc.seed, tag64("train"), 0);
            return std::make_shared<QuantileSurrogate>(eqr_train(ds, c));
        }
        case SurrogateKind::de: {
            DeConfig c = sc.de;
            c.train.seed = derive_seed(rc.seed, tag64("train"), 0);
            return std::make_shared<DeepEnsemble>(de_train(ds, c));
        }
        case SurrogateKind::mc_dropout: {
            McDropoutConfig c = sc.mc;
            c.train.seed = derive_seed(rc.seed, tag64("train"), 0);
            return std::make_shared<McDropoutModel>(mc_dropout_train(ds, c));
        }
    }
    throw ConfigError("unknown surrogate kind");
}

int cmd_train(const CommonArgs& args, const std::string& data_path) {
    const RunConfig rc = load_run_config(args);
    const Problem problem = make_problem(rc);
    const Dataset ds = load_dataset_csv(data_path);
    if (ds.input_dim() != problem.input_dim || ds.output_dim() != problem.output_dim)
        throw ParseError(data_path + ": dataset shape does not match problem '" + problem.name + "'");

    note(args, "training " + std::string(surrogate_kind_name(rc.separation.kind)) + " on " +
                   std::to_string(ds.size()) + " rows");
    const auto model = train_from_config(rc, ds);

    const fs::path dir(rc.out_dir);
    ensure_dir(dir);
    detail::write_text_file(dir / "config_echo.ini", rc.echo);
    save_model((dir / "model.bin").string(), *model);

    const GridSpec grid = GridSpec::for_problem(problem, rc.separation.grid_res_x, rc.separation.grid_res_y);
    const MapSet maps = evaluate_maps(*model, problem, grid);
    for (int o = 0; o < maps.outputs(); ++o) {
        const std::string so = std::to_string(o);
        save_map_csv((dir / ("map_epistemic_out" + so + ".csv")).string(), maps.epistemic[o]);
        save_map_csv((dir / ("map_aleatoric_out" + so + ".csv")).string(), maps.aleatoric[o]);
        // PGM ramps over the map's own range for a readable heatmap
        auto rescaled = [](UncertaintyMap m) {
            const double mx = m.max_value();
            if (mx > 0.0)
                for (double& v : m.values) v /= mx;
            return m;
        };
        save_map_pgm((dir / ("map_epistemic_out" + so + ".pgm")).string(), rescaled(maps.epistemic[o]));
        save_map_pgm((dir / ("map_aleatoric_out" + so + ".pgm")).string(), rescaled(maps.aleatoric[o]));
    }
    note(args, "wrote model and " + std::to_string(4 * maps.outputs()) + " map files to " + dir.string());
    return kOk;
}

int cmd_separate(const CommonArgs& args) {
    const RunConfig rc = load_run_config(args);
    const Problem problem = make_problem(rc);
    note(args, "running separation: Q=" + std::to_string(rc.separation.iterations) + ", surrogate " +
                   surrogate_kind_name(rc.separation.kind) + ", seed " + std::to_string(rc.seed));
    const SeparationReport report = run_separation(problem, rc.separation);
    write_report_dir(report, rc.out_dir, rc.echo);
    note(args, std::string("status: ") + run_status_name(report.status) + ", report in " + rc.out_dir);
    if (report.status == RunStatus::aborted) {
        std::cerr << "uqsep: run aborted: " << report.abort_reason << "\n";
        return kTrainError;
    }
    return kOk;
}

int cmd_score(const CommonArgs& args, const std::string& run_dir) {
    note(args, "scoring run directory " + run_dir);
    write_run_scores(run_dir);
    note(args, "wrote " + (fs::path(run_dir) / "scores.txt").string());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"uncertainty-separation experiment runner"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, sep_args, score_args;
    std::string data_path, run_dir;

    auto* gen = app.add_subcommand("generate", "write the initial dataset and region manifest");
    add_common(gen, gen_args);

    auto* train = app.add_subcommand("train", "train a surrogate on a dataset and export maps");
    add_common(train, train_args);
    train->add_option("--data", data_path, "dataset CSV")->required();

    auto* sep = app.add_subcommand("separate", "run the full separation loop");
    add_common(sep, sep_args);

    auto* score = app.add_subcommand("score", "score a finished run directory");
    add_common(score, score_args, /*needs_config=*/false);
    score->add_option("--run", run_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kConfigError;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_args);
        if (train->parsed()) return cmd_train(train_args, data_path);
        if (sep->parsed()) return cmd_separate(sep_args);
        if (score->parsed()) return cmd_score(score_args, run_dir);
    } catch (const ConfigError& e) {
        std::cerr << "uqsep: config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ParseError& e) {
        std::cerr << "uqsep: parse error: " << e.what() << "\n";
        return kParseError;
    } catch (const TrainDivergenceError& e) {
        std::cerr << "uqsep: training error: " << e.what() << "\n";
        return kTrainError;
    } catch (const DomainError& e) {
        std::cerr << "uqsep: domain error: " << e.what() << "\n";
        return kDomainError;
    } catch (const StateError& e) {
        std::cerr << "uqsep: state error: " << e.what() << "\n";
        return kDomainError;
    } catch (const IoError& e) {
        std::cerr << "uqsep: io error: " << e.what() << "\n";
        return kIoError;
    } catch (const std::exception& e) {
        std::cerr << "uqsep: error: " << e.what() << "\n";
        return kIoError;
    }
    return kOk;
}
