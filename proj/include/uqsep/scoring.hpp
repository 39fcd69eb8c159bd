#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "uqsep/config.hpp"
#include "uqsep/evalkit.hpp"
#include "uqsep/separation.hpp"

namespace uqsep {

namespace detail {

inline UncertaintyMap map_from_csv(const std::string& path, const GridSpec& grid, MapKind kind,
                                   int output) {
    const auto mat = load_matrix_csv(path);
    if (mat.size() != static_cast<std::size_t>(grid.res_x) ||
        mat.front().size() != static_cast<std::size_t>(grid.res_y))
        throw ParseError(path + ": matrix size does not match the run grid");
    UncertaintyMap m{grid, std::vector<double>(grid.cells(), 0.0), kind, output};
    for (int i = 0; i < grid.res_x; ++i)
        for (int j = 0; j < grid.res_y; ++j) m.values[grid.idx(i, j)] = mat[i][j];
    return m;
}

inline int summary_int_field(const std::string& summary_path, const std::string& field) {
    std::ifstream in(summary_path);
    if (!in) throw IoError("cannot open " + summary_path);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == field) {
            int v;
            if (ss >> v) return v;
        }
    }
    throw ParseError(summary_path + ": missing field " + field);
}

}  // namespace detail

// Region, leakage, coverage and crossing scores for a finished run directory.
inline std::string score_run_directory(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const auto need = [&](const fs::path& p) {
        if (!fs::exists(p)) throw IoError("run directory is missing " + p.string());
        return p.string();
    };

    const ConfigFile echo = parse_config_file(need(dir / "config_echo.ini"));
    const RunConfig rc = resolve_run_config(echo);
    const Problem problem = make_problem(rc);
    const GridSpec grid = GridSpec::for_problem(problem, rc.separation.grid_res_x, rc.separation.grid_res_y);
    const auto regions = detail::parse_regions_manifest(need(dir / "regions.txt"));

    const int recorded = detail::summary_int_field(need(dir / "summary.txt"), "iterations_recorded");
    if (recorded < 1) throw ParseError("summary reports no recorded iterations");
    const fs::path iter0 = dir / detail::iter_dir_name(0);
    const fs::path iter_last = dir / detail::iter_dir_name(recorded - 1);

    const BinaryMask aleatoric_mask = load_mask_pgm(need(dir / "final" / "aleatoric_mask.pgm"), grid);
    const BinaryMask epistemic_mask = load_mask_pgm(need(dir / "final" / "epistemic_mask.pgm"), grid);
    const UncertaintyMap total0 =
        detail::map_from_csv(need(iter0 / "total.csv"), grid, MapKind::combined, -1);
    const UncertaintyMap total_last =
        detail::map_from_csv(need(iter_last / "total.csv"), grid, MapKind::combined, -1);

    std::vector<UncertaintyMap> epi0, alea0;
    for (int o = 0; o < problem.output_dim; ++o) {
        epi0.push_back(detail::map_from_csv(need(iter0 / ("norm_epistemic_out" + std::to_string(o) + ".csv")),
                                            grid, MapKind::epistemic, o));
        alea0.push_back(detail::map_from_csv(
            need(iter0 / ("norm_aleatoric_out" + std::to_string(o) + ".csv")), grid, MapKind::aleatoric, o));
    }

    std::vector<RegionSpec> gap_regions, noise_regions;
    for (const auto& r : regions)
        (r.purpose == RegionPurpose::data_gap ? gap_regions : noise_regions).push_back(r);

    std::string out;
    out += "uqsep_scores_version 1\n";

    // noise regions scored against the surviving (aleatoric) mask on the final
    // total map; gap regions against the XOR (epistemic) mask on the initial one
    for (std::size_t k = 0; k < regions.size(); ++k) {
        const bool is_noise = regions[k].purpose == RegionPurpose::noise;
        const RegionScore s = is_noise ? score_region(total_last, aleatoric_mask, regions[k], regions)
                                       : score_region(total0, epistemic_mask, regions[k], regions);
        out += "region " + std::to_string(k) + (is_noise ? " noise" : " data_gap");
        out += " iou " + format_double(s.iou);
        out += " in_mean " + format_double(s.in_mean);
        out += " background_mean " + format_double(s.background_mean);
        out += " contrast " + format_double(s.contrast);
        out += "\n";
    }

    // iteration-0 leakage diagnostics, averaged over outputs
    if (!noise_regions.empty()) {
        double acc = 0.0;
        for (const auto& m : epi0) acc += leakage_score(m, noise_regions, regions, grid);
        out += "leakage epistemic_map_in_noise_regions " + format_double(acc / epi0.size()) + "\n";
    }
    if (!gap_regions.empty()) {
        double acc = 0.0;
        for (const auto& m : alea0) acc += leakage_score(m, gap_regions, regions, grid);
        out += "leakage aleatoric_map_in_gap_regions " + format_double(acc / alea0.size()) + "\n";
    }

    const auto model = load_model(need(dir / "model.bin"));
    if (const auto* eqr = dynamic_cast<const QuantileSurrogate*>(model.get())) {
        // noise-free dense test set from the exact forward map
        Problem clean = problem;
        clean.regions.clear();
        const Dataset test = build_initial_dataset(clean, 2000, derive_seed(rc.seed, tag64("score_test")));
        for (double q : {eqr->alpha.alpha, 0.5, 1.0 - eqr->alpha.alpha})
            out += "coverage q=" + format_double(q) + " " +
                   format_double(coverage_calibration(*eqr, test.inputs, test.targets, q)) + "\n";
        out += "crossing_rate " + format_double(crossing_rate(*eqr, grid)) + "\n";
    }
    return out;
}

// Writes scores.txt and splices a scores section into summary.txt
// (idempotent: an existing section is replaced).
inline void write_run_scores(const std::filesystem::path& dir) {
    const std::string scores = score_run_directory(dir);
    detail::write_text_file(dir / "scores.txt", scores);

    const std::string marker = "== scores ==\n";
    std::ifstream in(dir / "summary.txt");
    if (!in) throw IoError("cannot open " + (dir / "summary.txt").string());
    std::string summary((std::istreambuf_iterator<char>(in)), {});
    in.close();
    if (const auto pos = summary.find(marker); pos != std::string::npos) summary.erase(pos);
    summary += marker + scores;
    detail::write_text_file(dir / "summary.txt", summary);
}

}  // namespace uqsep
