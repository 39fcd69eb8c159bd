#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "uqsep/dataset.hpp"
#include "uqsep/errors.hpp"
#include "uqsep/evalkit.hpp"
#include "uqsep/maps.hpp"
#include "uqsep/problems.hpp"
#include "uqsep/surrogates.hpp"

namespace uqsep {

enum class SurrogateKind { eqr, de, mc_dropout };

inline const char* surrogate_kind_name(SurrogateKind k) {
    switch (k) {
        case SurrogateKind::eqr: return "eqr";
        case SurrogateKind::de: return "de";
        case SurrogateKind::mc_dropout: return "mc_dropout";
    }
    return "?";
}

struct SeparationConfig {
    int iterations = 2;        // Q
    double threshold = 0.5;    // T, relative binarization threshold
    int n_acquire = 0;         // 0 -> 25% of the initial dataset size
    SurrogateKind kind = SurrogateKind::eqr;
    EqrConfig eqr;
    DeConfig de;
    McDropoutConfig mc;
    int grid_res_x = 64;
    int grid_res_y = 64;
    int initial_points = 0;    // 0 -> problem default (toy 4000, robot 20000)
    double activity_rel_floor = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (iterations < 1) throw ConfigError("iterations (Q) must be at least 1");
        if (n_acquire < 0) throw ConfigError("n_acquire must be non-negative");
        if (!(threshold >= 0.0)) throw ConfigError("threshold must be non-negative");
        if (initial_points < 0) throw ConfigError("initial_points must be non-negative");
    }
};

inline int default_initial_points(const Problem& p) { return p.name == "robot" ? 20000 : 4000; }

// One trained model's view of the world: normalized channel maps, the total
// map and its mask, plus how many points the mask contributed.
struct IterationRecord {
    int dataset_size = 0;
    std::vector<UncertaintyMap> norm_epistemic;
    std::vector<UncertaintyMap> norm_aleatoric;
    UncertaintyMap total;
    BinaryMask mask;
    int acquired = 0;
};

// Mask plus the value and slice position of every true cell.
struct MaskTriple {
    BinaryMask mask;
    std::vector<double> values;
    std::vector<std::pair<double, double>> positions;
};

enum class RunStatus { completed, early_stopped, aborted };

inline const char* run_status_name(RunStatus s) {
    switch (s) {
        case RunStatus::completed: return "completed";
        case RunStatus::early_stopped: return "early_stopped";
        case RunStatus::aborted: return "aborted";
    }
    return "?";
}

struct SeparationReport {
    Problem problem;
    SeparationConfig config;
    GridSpec grid;
    MinMaxStats stats;
    Dataset dataset;
    std::vector<IterationRecord> iterations;
    MaskTriple aleatoric;  // last total mask: surviving = aleatoric
    MaskTriple epistemic;  // XOR with iteration 0: vanished = epistemic
    RunStatus status = RunStatus::completed;
    std::string abort_reason;
    std::vector<std::pair<std::string, double>> phase_seconds;
    std::shared_ptr<const Surrogate> final_model;

    int initial_size() const { return iterations.empty() ? 0 : iterations.front().dataset_size; }
    int resolved_n_acquire() const {
        return config.n_acquire > 0 ? config.n_acquire : std::max(1, initial_size() / 4);
    }
};

namespace detail {

inline std::shared_ptr<Surrogate> train_kind(const SeparationConfig& cfg, const Dataset& ds,
                                             std::uint64_t train_seed) {
    switch (cfg.kind) {
        case SurrogateKind::eqr: {
            EqrConfig c = cfg.eqr;
            c.train.seed = train_seed;
            return std::make_shared<QuantileSurrogate>(eqr_train(ds, c));
        }
        case SurrogateKind::de: {
            DeConfig c = cfg.de;
            c.train.seed = train_seed;
            return std::make_shared<DeepEnsemble>(de_train(ds, c));
        }
        case SurrogateKind::mc_dropout: {
            McDropoutConfig c = cfg.mc;
            c.train.seed = train_seed;
            return std::make_shared<McDropoutModel>(mc_dropout_train(ds, c));
        }
    }
    throw ConfigError("unknown surrogate kind");
}

struct PhaseTimer {
    std::vector<std::pair<std::string, double>>& sink;
    std::string label;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    PhaseTimer(std::vector<std::pair<std::string, double>>& s, std::string l)
        : sink(s), label(std::move(l)) {}
    ~PhaseTimer() {
        const auto stop = std::chrono::steady_clock::now();
        sink.emplace_back(label, std::chrono::duration<double>(stop - start).count());
    }
};

// Normalize with the frozen stats, sum the two channels per output, halve to
// keep [0,1], multiply across outputs, binarize at T.
inline IterationRecord make_record(const MapSet& maps, const MinMaxStats& stats, double threshold,
                                   int dataset_size) {
    IterationRecord rec;
    rec.dataset_size = dataset_size;
    std::vector<UncertaintyMap> scaled;
    for (int o = 0; o < maps.outputs(); ++o) {
        rec.norm_epistemic.push_back(normalize(maps.epistemic[o], stats));
        rec.norm_aleatoric.push_back(normalize(maps.aleatoric[o], stats));
        scaled.push_back(scale_map(combine_per_output(rec.norm_epistemic[o], rec.norm_aleatoric[o]), 0.5));
    }
    rec.total = combine_across_outputs(scaled);
    rec.mask = binarize(rec.total, threshold);
    rec.acquired = 0;
    return rec;
}

inline MaskTriple make_triple(const BinaryMask& mask, const UncertaintyMap& value_source) {
    MaskTriple t;
    t.mask = mask;
    const GridSpec& g = mask.grid;
    for (int i = 0; i < g.res_x; ++i)
        for (int j = 0; j < g.res_y; ++j)
            if (mask.at(i, j)) {
                t.values.push_back(value_source.at(i, j));
                t.positions.emplace_back(g.center_x(i), g.center_y(j));
            }
    return t;
}

inline void finalize_outputs(SeparationReport& rep) {
    const IterationRecord& last = rep.iterations.back();
    const IterationRecord& first = rep.iterations.front();
    rep.aleatoric = make_triple(last.mask, last.total);
    rep.epistemic = make_triple(xor_masks(last.mask, first.mask), first.total);
}

// Runs iterations [from, to]; the caller guarantees records 0..from-1 exist.
inline void continue_loop(SeparationReport& rep, int from, int to) {
    const SeparationConfig& cfg = rep.config;
    const int n_acquire = rep.resolved_n_acquire();
    for (int i = from; i <= to; ++i) {
        IterationRecord& prev = rep.iterations.back();
        if (prev.mask.empty_mask()) {
            rep.status = RunStatus::early_stopped;
            break;
        }
        try {
            std::vector<std::vector<double>> new_inputs;
            {
                PhaseTimer t(rep.phase_seconds, "iter" + std::to_string(i) + "_acquire");
                new_inputs = sample_in_mask(prev.mask, n_acquire, rep.problem,
                                            derive_seed(cfg.seed, tag64("acquire"), i));
                const auto new_targets =
                    nfp_query(rep.problem, new_inputs, derive_seed(cfg.seed, tag64("label"), i));
                for (std::size_t k = 0; k < new_inputs.size(); ++k)
                    rep.dataset.append(new_inputs[k], new_targets[k], i);
                prev.acquired = static_cast<int>(new_inputs.size());
            }
            std::shared_ptr<Surrogate> model;
            {
                PhaseTimer t(rep.phase_seconds, "iter" + std::to_string(i) + "_train");
                model = train_kind(cfg, rep.dataset, derive_seed(cfg.seed, tag64("train"), i));
            }
            {
                PhaseTimer t(rep.phase_seconds, "iter" + std::to_string(i) + "_maps");
                const MapSet maps = evaluate_maps(*model, rep.problem, rep.grid);
                rep.iterations.push_back(
                    make_record(maps, rep.stats, cfg.threshold, static_cast<int>(rep.dataset.size())));
            }
            rep.final_model = std::move(model);
        } catch (const TrainDivergenceError& e) {
            rep.status = RunStatus::aborted;
            rep.abort_reason = e.what();
            break;
        }
    }
    finalize_outputs(rep);
}

}  // namespace detail

// Algorithm driver: train, map, normalize against frozen iteration-0
// statistics, combine, binarize, acquire inside the mask, retrain from
// scratch; after Q rounds the surviving mask is aleatoric and the XOR with
// iteration 0 isolates the resolved epistemic regions.
inline SeparationReport run_separation(const Problem& problem, const SeparationConfig& cfg,
                                       const Dataset* initial = nullptr) {
    cfg.validate();
    SeparationReport rep;
    rep.problem = problem;
    rep.config = cfg;
    rep.grid = GridSpec::for_problem(problem, cfg.grid_res_x, cfg.grid_res_y);

    {
        detail::PhaseTimer t(rep.phase_seconds, "iter0_data");
        if (initial) {
            initial->validate();
            rep.dataset = *initial;
        } else {
            const int n = cfg.initial_points > 0 ? cfg.initial_points : default_initial_points(problem);
            rep.dataset = build_initial_dataset(problem, n, derive_seed(cfg.seed, tag64("init_data")));
        }
    }

    std::shared_ptr<Surrogate> model;
    try {
        detail::PhaseTimer t(rep.phase_seconds, "iter0_train");
        model = detail::train_kind(cfg, rep.dataset, derive_seed(cfg.seed, tag64("train"), 0));
    } catch (const TrainDivergenceError& e) {
        rep.status = RunStatus::aborted;
        rep.abort_reason = e.what();
        return rep;
    }
    {
        detail::PhaseTimer t(rep.phase_seconds, "iter0_maps");
        const MapSet maps = evaluate_maps(*model, rep.problem, rep.grid);
        rep.stats = fit_minmax(maps, rep.dataset.target_scales(), cfg.activity_rel_floor);
        rep.iterations.push_back(
            detail::make_record(maps, rep.stats, cfg.threshold, static_cast<int>(rep.dataset.size())));
    }
    rep.final_model = std::move(model);

    detail::continue_loop(rep, 1, cfg.iterations);
    return rep;
}

// Continues a finished run for `additional_iterations` more rounds. The
// derived seed schedule depends only on (master seed, iteration index), so a
// Q-run resumed by Q' equals a straight (Q+Q')-run bit for bit.
inline SeparationReport resume(const SeparationReport& report, int additional_iterations) {
    if (report.status == RunStatus::aborted)
        throw StateError("cannot resume an aborted separation run");
    if (additional_iterations < 0) throw ConfigError("additional_iterations must be non-negative");
    SeparationReport rep = report;
    if (additional_iterations == 0) return rep;
    const int done = static_cast<int>(report.iterations.size()) - 1;
    rep.config.iterations = report.config.iterations + additional_iterations;
    rep.status = RunStatus::completed;
    detail::continue_loop(rep, done + 1, rep.config.iterations);
    return rep;
}

// ---------------------------------------------------------------------------
// Report directory serialization. Every file is deterministic except
// timings.txt, which holds the wall-clock phase table.

namespace detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failure on " + path.string());
}

inline std::string regions_manifest(const Problem& p) {
    std::string s;
    s += "input_dim " + std::to_string(p.input_dim) + "\n";
    s += "regions " + std::to_string(p.regions.size()) + "\n";
    for (const auto& r : p.regions) {
        s += r.purpose == RegionPurpose::data_gap ? "data_gap" : "noise";
        s += " " + format_double(r.noise_sigma);
        for (std::size_t d = 0; d < r.low.size(); ++d)
            s += " " + format_double(r.low[d]) + " " + format_double(r.high[d]);
        s += "\n";
    }
    return s;
}

inline std::vector<RegionSpec> parse_regions_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string key;
    int input_dim = 0, n = 0;
    in >> key >> input_dim;
    if (key != "input_dim") throw ParseError(path + ": expected input_dim");
    in >> key >> n;
    if (key != "regions") throw ParseError(path + ": expected regions");
    std::vector<RegionSpec> out;
    for (int r = 0; r < n; ++r) {
        RegionSpec spec;
        std::string purpose;
        in >> purpose >> spec.noise_sigma;
        spec.purpose = purpose == "noise" ? RegionPurpose::noise : RegionPurpose::data_gap;
        spec.low.resize(input_dim);
        spec.high.resize(input_dim);
        for (int d = 0; d < input_dim; ++d) in >> spec.low[d] >> spec.high[d];
        if (!in) throw ParseError(path + ": truncated region list");
        spec.validate();
        out.push_back(std::move(spec));
    }
    return out;
}

inline std::string cells_csv(const MaskTriple& t) {
    std::string s = "pos_x,pos_y,value\n";
    for (std::size_t k = 0; k < t.values.size(); ++k)
        s += format_double(t.positions[k].first) + "," + format_double(t.positions[k].second) + "," +
             format_double(t.values[k]) + "\n";
    return s;
}

inline std::string iter_dir_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "iter_%03d", i);
    return buf;
}

}  // namespace detail

inline std::string summary_text(const SeparationReport& rep) {
    std::string s;
    s += "uqsep_separation_summary_version 1\n";
    s += "problem " + rep.problem.name + "\n";
    s += std::string("surrogate ") + surrogate_kind_name(rep.config.kind) + "\n";
    s += "grid " + std::to_string(rep.grid.res_x) + " " + std::to_string(rep.grid.res_y) + "\n";
    s += "threshold " + format_double(rep.config.threshold) + "\n";
    s += "iterations_requested " + std::to_string(rep.config.iterations) + "\n";
    s += "iterations_recorded " + std::to_string(rep.iterations.size()) + "\n";
    s += std::string("status ") + run_status_name(rep.status) + "\n";
    if (rep.status == RunStatus::aborted) s += "abort_reason " + rep.abort_reason + "\n";
    s += "iter dataset_size acquired mask_cells\n";
    for (std::size_t i = 0; i < rep.iterations.size(); ++i) {
        const auto& r = rep.iterations[i];
        s += std::to_string(i) + " " + std::to_string(r.dataset_size) + " " + std::to_string(r.acquired) +
             " " + std::to_string(r.mask.count_true()) + "\n";
    }
    s += "final_aleatoric_cells " + std::to_string(rep.aleatoric.mask.count_true()) + "\n";
    s += "final_epistemic_cells " + std::to_string(rep.epistemic.mask.count_true()) + "\n";
    return s;
}

inline void write_report_dir(const SeparationReport& rep, const std::filesystem::path& dir,
                             const std::string& config_echo = "") {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory " + dir.string());

    if (!config_echo.empty()) detail::write_text_file(dir / "config_echo.ini", config_echo);
    detail::write_text_file(dir / "regions.txt", detail::regions_manifest(rep.problem));
    save_dataset_csv((dir / "dataset.csv").string(), rep.dataset);
    detail::write_text_file(dir / "summary.txt", summary_text(rep));

    std::string stats = "channel output min max active floor\n";
    for (std::size_t o = 0; o < rep.stats.epistemic.size(); ++o) {
        const auto& e = rep.stats.epistemic[o];
        const auto& a = rep.stats.aleatoric[o];
        stats += "epistemic " + std::to_string(o) + " " + format_double(e.min_v) + " " +
                 format_double(e.max_v) + " " + std::to_string(e.active ? 1 : 0) + " " +
                 format_double(e.activity_floor) + "\n";
        stats += "aleatoric " + std::to_string(o) + " " + format_double(a.min_v) + " " +
                 format_double(a.max_v) + " " + std::to_string(a.active ? 1 : 0) + " " +
                 format_double(a.activity_floor) + "\n";
    }
    detail::write_text_file(dir / "stats.txt", stats);

    for (std::size_t i = 0; i < rep.iterations.size(); ++i) {
        const fs::path idir = dir / detail::iter_dir_name(static_cast<int>(i));
        fs::create_directories(idir, ec);
        if (ec) throw IoError("cannot create " + idir.string());
        const auto& r = rep.iterations[i];
        for (std::size_t o = 0; o < r.norm_epistemic.size(); ++o) {
            const std::string so = std::to_string(o);
            save_map_csv((idir / ("norm_epistemic_out" + so + ".csv")).string(), r.norm_epistemic[o]);
            save_map_pgm((idir / ("norm_epistemic_out" + so + ".pgm")).string(), r.norm_epistemic[o]);
            save_map_csv((idir / ("norm_aleatoric_out" + so + ".csv")).string(), r.norm_aleatoric[o]);
            save_map_pgm((idir / ("norm_aleatoric_out" + so + ".pgm")).string(), r.norm_aleatoric[o]);
        }
        save_map_csv((idir / "total.csv").string(), r.total);
        save_map_pgm((idir / "total.pgm").string(), r.total);
        save_mask_pgm((idir / "mask.pgm").string(), r.mask);
    }

    const fs::path fdir = dir / "final";
    fs::create_directories(fdir, ec);
    if (ec) throw IoError("cannot create " + fdir.string());
    save_mask_pgm((fdir / "aleatoric_mask.pgm").string(), rep.aleatoric.mask);
    detail::write_text_file(fdir / "aleatoric_cells.csv", detail::cells_csv(rep.aleatoric));
    save_mask_pgm((fdir / "epistemic_mask.pgm").string(), rep.epistemic.mask);
    detail::write_text_file(fdir / "epistemic_cells.csv", detail::cells_csv(rep.epistemic));

    if (rep.final_model) save_model((dir / "model.bin").string(), *rep.final_model);

    std::string timings = "phase seconds\n";
    for (const auto& [label, sec] : rep.phase_seconds) timings += label + " " + format_double(sec) + "\n";
    detail::write_text_file(dir / "timings.txt", timings);
}

}  // namespace uqsep
