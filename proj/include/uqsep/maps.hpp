#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "uqsep/errors.hpp"
#include "uqsep/parallel.hpp"
#include "uqsep/problems.hpp"
#include "uqsep/random.hpp"
#include "uqsep/surrogates.hpp"

namespace uqsep {

// Regular grid over a 2-D slice of the input space. Cell (i,j) covers the
// box [lo_x + i*dx, lo_x + (i+1)*dx] x [lo_y + j*dy, ...]; maps sample cell
// centers.
struct GridSpec {
    int dim_x = 0, dim_y = 1;
    double lo_x = 0.0, hi_x = 1.0, lo_y = 0.0, hi_y = 1.0;
    int res_x = 64, res_y = 64;
    std::vector<double> fixed;  // per input dim; slice entries ignored

    void validate() const {
        if (res_x < 8 || res_y < 8) throw ConfigError("grid resolution must be at least 8 per axis");
        if (!(lo_x < hi_x && lo_y < hi_y)) throw ConfigError("grid requires low < high per axis");
        if (dim_x == dim_y || dim_x < 0 || dim_y < 0) throw ConfigError("slice dims must be distinct and non-negative");
    }

    double step_x() const { return (hi_x - lo_x) / res_x; }
    double step_y() const { return (hi_y - lo_y) / res_y; }
    double center_x(int i) const { return lo_x + (i + 0.5) * step_x(); }
    double center_y(int j) const { return lo_y + (j + 0.5) * step_y(); }
    std::size_t cells() const { return static_cast<std::size_t>(res_x) * res_y; }
    std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) * res_y + j; }

    std::vector<double> cell_input(int i, int j) const {
        std::vector<double> x = fixed;
        x[dim_x] = center_x(i);
        x[dim_y] = center_y(j);
        return x;
    }

    bool same_geometry(const GridSpec& o) const {
        return dim_x == o.dim_x && dim_y == o.dim_y && res_x == o.res_x && res_y == o.res_y &&
               lo_x == o.lo_x && hi_x == o.hi_x && lo_y == o.lo_y && hi_y == o.hi_y;
    }

    // The default map window insets the domain edges: surrogate disagreement
    // right at the data boundary is an extrapolation artifact that would
    // otherwise own the frozen min-max scale.
    static GridSpec for_problem(const Problem& p, int res_x = 64, int res_y = 64,
                                double margin = 0.05) {
        GridSpec g;
        g.dim_x = p.slice.dim_x;
        g.dim_y = p.slice.dim_y;
        const double mx = margin * (p.domain_high[g.dim_x] - p.domain_low[g.dim_x]);
        const double my = margin * (p.domain_high[g.dim_y] - p.domain_low[g.dim_y]);
        g.lo_x = p.domain_low[g.dim_x] + mx;
        g.hi_x = p.domain_high[g.dim_x] - mx;
        g.lo_y = p.domain_low[g.dim_y] + my;
        g.hi_y = p.domain_high[g.dim_y] - my;
        g.res_x = res_x;
        g.res_y = res_y;
        g.fixed = p.slice.fixed;
        g.validate();
        return g;
    }
};

enum class MapKind { epistemic, aleatoric, combined };

inline const char* map_kind_name(MapKind k) {
    switch (k) {
        case MapKind::epistemic: return "epistemic";
        case MapKind::aleatoric: return "aleatoric";
        case MapKind::combined: return "combined";
    }
    return "?";
}

struct UncertaintyMap {
    GridSpec grid;
    std::vector<double> values;  // grid.cells(), index i*res_y + j
    MapKind kind = MapKind::combined;
    int output_index = -1;  // -1 = all outputs

    double& at(int i, int j) { return values[grid.idx(i, j)]; }
    double at(int i, int j) const { return values[grid.idx(i, j)]; }
    double max_value() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
    double min_value() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }

    void validate() const {
        if (values.size() != grid.cells()) throw ShapeError("map shape does not match grid");
        for (double v : values)
            if (!std::isfinite(v) || v < 0.0) throw ShapeError("map values must be finite and non-negative");
    }
};

struct BinaryMask {
    GridSpec grid;
    std::vector<char> bits;

    bool at(int i, int j) const { return bits[grid.idx(i, j)] != 0; }
    void set(int i, int j, bool v) { bits[grid.idx(i, j)] = v ? 1 : 0; }
    std::size_t count_true() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
    bool empty_mask() const { return count_true() == 0; }

    static BinaryMask all_false(const GridSpec& g) { return BinaryMask{g, std::vector<char>(g.cells(), 0)}; }
};

// Per-(output, kind) scaling captured once at iteration 0 and frozen for the
// whole run. A channel whose iteration-0 values never rise above
// `activity_floor` carries no signal on the initial scale; it normalizes to
// the zero map.
struct ChannelStats {
    double min_v = 0.0;
    double max_v = 0.0;
    bool active = true;
    double activity_floor = 0.0;
};

struct MinMaxStats {
    std::vector<ChannelStats> epistemic;  // per output
    std::vector<ChannelStats> aleatoric;

    const ChannelStats& channel(MapKind kind, int output) const {
        const auto& v = kind == MapKind::epistemic ? epistemic : aleatoric;
        if (output < 0 || output >= static_cast<int>(v.size()))
            throw ShapeError("no stats for output " + std::to_string(output));
        return v[output];
    }
};

// Epistemic/aleatoric maps per output, as produced by evaluate_maps.
struct MapSet {
    std::vector<UncertaintyMap> epistemic;
    std::vector<UncertaintyMap> aleatoric;

    int outputs() const { return static_cast<int>(epistemic.size()); }
};

inline MapSet evaluate_maps(const Surrogate& model, const Problem& problem, const GridSpec& grid) {
    grid.validate();
    if (static_cast<int>(grid.fixed.size()) != problem.input_dim)
        throw ShapeError("grid fixed-value vector does not match problem input dim");
    if (grid.lo_x < problem.domain_low[grid.dim_x] - 1e-12 || grid.hi_x > problem.domain_high[grid.dim_x] + 1e-12 ||
        grid.lo_y < problem.domain_low[grid.dim_y] - 1e-12 || grid.hi_y > problem.domain_high[grid.dim_y] + 1e-12)
        throw DomainError("grid extends outside the problem input domain");

    const int O = model.output_dim();
    MapSet maps;
    maps.epistemic.resize(O);
    maps.aleatoric.resize(O);
    for (int o = 0; o < O; ++o) {
        maps.epistemic[o] = UncertaintyMap{grid, std::vector<double>(grid.cells(), 0.0), MapKind::epistemic, o};
        maps.aleatoric[o] = UncertaintyMap{grid, std::vector<double>(grid.cells(), 0.0), MapKind::aleatoric, o};
    }

    parallel_for(grid.cells(), [&](std::size_t c) {
        const int i = static_cast<int>(c) / grid.res_y;
        const int j = static_cast<int>(c) % grid.res_y;
        const auto est = model.predict(grid.cell_input(i, j));
        for (int o = 0; o < O; ++o) {
            maps.epistemic[o].values[c] = est[o].sigma_epistemic;
            maps.aleatoric[o].values[c] = est[o].sigma_aleatoric;
        }
    });
    return maps;
}

// Frozen iteration-0 scaling. The recorded max is a robust (0.95-quantile,
// rounded up) order statistic rather than the single hottest cell: normalized
// channels then saturate over their top few percent, so no lone spike can own
// the scale. The round-up means small or sharply-peaked maps degrade to the
// plain maximum. `target_scales`, when given, supplies the natural per-output
// magnitude (std of the initial targets); channels whose 0.99-quantile stays
// below rel_floor * scale are marked inactive.
inline MinMaxStats fit_minmax(const MapSet& maps, const std::vector<double>& target_scales = {},
                              double rel_floor = 0.0) {
    constexpr double kRobustMaxQuantile = 0.95;
    MinMaxStats stats;
    auto fit_channel = [&](const UncertaintyMap& m, int output) {
        ChannelStats cs;
        cs.min_v = m.min_value();
        std::vector<double> sorted(m.values);
        std::sort(sorted.begin(), sorted.end());
        const std::size_t hi = std::min<std::size_t>(
            sorted.size() - 1,
            static_cast<std::size_t>(std::ceil(kRobustMaxQuantile * (sorted.size() - 1))));
        cs.max_v = sorted[hi];
        if (!target_scales.empty() && rel_floor > 0.0) {
            cs.activity_floor = rel_floor * target_scales[output];
            const std::size_t k = static_cast<std::size_t>(0.99 * (sorted.size() - 1));
            cs.active = sorted[k] >= cs.activity_floor;
        }
        return cs;
    };
    for (int o = 0; o < maps.outputs(); ++o) {
        stats.epistemic.push_back(fit_channel(maps.epistemic[o], o));
        stats.aleatoric.push_back(fit_channel(maps.aleatoric[o], o));
    }
    return stats;
}

// (v - min) / (max - min), clamped to [0,1] since later iterations may leave
// the frozen iteration-0 range. Degenerate (max == min) and inactive channels
// normalize to zero.
inline UncertaintyMap normalize(const UncertaintyMap& map, const MinMaxStats& stats) {
    const ChannelStats& cs = stats.channel(map.kind, map.output_index);
    UncertaintyMap out = map;
    const double range = cs.max_v - cs.min_v;
    if (!cs.active || range <= 0.0) {
        std::fill(out.values.begin(), out.values.end(), 0.0);
        return out;
    }
    for (double& v : out.values) v = std::clamp((v - cs.min_v) / range, 0.0, 1.0);
    return out;
}

// Cell-wise sum of the two normalized channels of one output; range [0,2].
inline UncertaintyMap combine_per_output(const UncertaintyMap& norm_epistemic,
                                         const UncertaintyMap& norm_aleatoric) {
    if (!norm_epistemic.grid.same_geometry(norm_aleatoric.grid)) throw ShapeError("grid mismatch in combine_per_output");
    UncertaintyMap out = norm_epistemic;
    out.kind = MapKind::combined;
    for (std::size_t c = 0; c < out.values.size(); ++c) out.values[c] += norm_aleatoric.values[c];
    return out;
}

inline UncertaintyMap scale_map(const UncertaintyMap& map, double factor) {
    UncertaintyMap out = map;
    for (double& v : out.values) v *= factor;
    return out;
}

// Cell-wise product across outputs: only mutual uncertainty survives.
inline UncertaintyMap combine_across_outputs(const std::vector<UncertaintyMap>& per_output) {
    if (per_output.empty()) throw ShapeError("combine_across_outputs needs at least one map");
    UncertaintyMap out = per_output.front();
    out.kind = MapKind::combined;
    out.output_index = -1;
    for (std::size_t k = 1; k < per_output.size(); ++k) {
        if (!per_output[k].grid.same_geometry(out.grid)) throw ShapeError("grid mismatch in combine_across_outputs");
        for (std::size_t c = 0; c < out.values.size(); ++c) out.values[c] *= per_output[k].values[c];
    }
    return out;
}

// Relative binarization: the map is first rescaled by its own maximum (when
// positive) so T thresholds the [0,1] shape of the map, surviving the value
// shrinkage of cross-output products. An all-zero map stays all-false for any
// T > 0.
inline BinaryMask binarize(const UncertaintyMap& map, double threshold) {
    BinaryMask mask = BinaryMask::all_false(map.grid);
    const double mx = map.max_value();
    const double scale = mx > 0.0 ? 1.0 / mx : 1.0;
    for (std::size_t c = 0; c < map.values.size(); ++c)
        mask.bits[c] = map.values[c] * scale >= threshold ? 1 : 0;
    return mask;
}

inline BinaryMask xor_masks(const BinaryMask& final_mask, const BinaryMask& initial_mask) {
    if (!final_mask.grid.same_geometry(initial_mask.grid)) throw ShapeError("grid mismatch in xor_masks");
    BinaryMask out = final_mask;
    for (std::size_t c = 0; c < out.bits.size(); ++c)
        out.bits[c] = (final_mask.bits[c] != initial_mask.bits[c]) ? 1 : 0;
    return out;
}

// Draws n_new inputs uniformly over the union of true cells: cell uniform
// (equal areas), point uniform inside the cell, non-slice dims uniform over
// their full domain ranges.
inline std::vector<std::vector<double>> sample_in_mask(const BinaryMask& mask, int n_new,
                                                       const Problem& problem, std::uint64_t seed) {
    if (n_new <= 0) throw ConfigError("n_new must be positive");
    std::vector<std::size_t> true_cells;
    for (std::size_t c = 0; c < mask.bits.size(); ++c)
        if (mask.bits[c]) true_cells.push_back(c);
    if (true_cells.empty()) throw StateError("sample_in_mask: mask is empty");

    const GridSpec& g = mask.grid;
    Rng rng(derive_seed(seed, tag64("mask_sample")));
    std::vector<std::vector<double>> out;
    out.reserve(n_new);
    for (int k = 0; k < n_new; ++k) {
        const std::size_t c = true_cells[rng.index(true_cells.size())];
        const int i = static_cast<int>(c) / g.res_y;
        const int j = static_cast<int>(c) % g.res_y;
        std::vector<double> x(problem.input_dim);
        for (int d = 0; d < problem.input_dim; ++d) {
            if (d == g.dim_x)
                x[d] = g.lo_x + (i + rng.uniform()) * g.step_x();
            else if (d == g.dim_y)
                x[d] = g.lo_y + (j + rng.uniform()) * g.step_y();
            else
                x[d] = rng.uniform(problem.domain_low[d], problem.domain_high[d]);
        }
        out.push_back(std::move(x));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Map/mask persistence: CSV matrices (row-major, lossless floats) and P2 PGM
// heatmaps with a linear 0..1 -> 0..255 ramp.

inline void save_map_csv(const std::string& path, const UncertaintyMap& map) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (int i = 0; i < map.grid.res_x; ++i) {
        for (int j = 0; j < map.grid.res_y; ++j) {
            if (j) out << ",";
            out << format_double(map.at(i, j));
        }
        out << "\n";
    }
    if (!out) throw IoError("write failure on " + path);
}

inline std::vector<std::vector<double>> load_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) comma = line.size();
            try {
                row.push_back(std::stod(line.substr(pos, comma - pos)));
            } catch (const std::exception&) {
                throw ParseError(path + ": row " + std::to_string(lineno) + ": numeric parse failure");
            }
            pos = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError(path + ": row " + std::to_string(lineno) + ": ragged matrix");
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void save_map_pgm(const std::string& path, const UncertaintyMap& map) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P2\n" << map.grid.res_y << " " << map.grid.res_x << "\n255\n";
    for (int i = 0; i < map.grid.res_x; ++i) {
        for (int j = 0; j < map.grid.res_y; ++j) {
            const double v = std::clamp(map.at(i, j), 0.0, 1.0);
            if (j) out << " ";
            out << static_cast<int>(std::lround(v * 255.0));
        }
        out << "\n";
    }
    if (!out) throw IoError("write failure on " + path);
}

inline void save_mask_pgm(const std::string& path, const BinaryMask& mask) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P2\n" << mask.grid.res_y << " " << mask.grid.res_x << "\n255\n";
    for (int i = 0; i < mask.grid.res_x; ++i) {
        for (int j = 0; j < mask.grid.res_y; ++j) {
            if (j) out << " ";
            out << (mask.at(i, j) ? 255 : 0);
        }
        out << "\n";
    }
    if (!out) throw IoError("write failure on " + path);
}

inline BinaryMask load_mask_pgm(const std::string& path, const GridSpec& grid) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P2") throw ParseError(path + ": expected P2 PGM");
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (w != grid.res_y || h != grid.res_x) throw ParseError(path + ": PGM size does not match grid");
    BinaryMask mask = BinaryMask::all_false(grid);
    for (int i = 0; i < grid.res_x; ++i)
        for (int j = 0; j < grid.res_y; ++j) {
            int v;
            if (!(in >> v)) throw ParseError(path + ": truncated PGM");
            mask.set(i, j, v >= 128);
        }
    return mask;
}

}  // namespace uqsep
