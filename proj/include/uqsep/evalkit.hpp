#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "uqsep/errors.hpp"
#include "uqsep/maps.hpp"
#include "uqsep/problems.hpp"
#include "uqsep/surrogates.hpp"

namespace uqsep {

struct RegionScore {
    double iou = 0.0;
    double in_mean = 0.0;
    double background_mean = 0.0;
    double contrast = 0.0;
};

// Rasterizes a region onto the grid slice: a cell is true iff its center lies
// inside the region's slice-dim bounds. Regions whose non-slice bounds
// exclude the grid's fixed values do not intersect the slice at all.
inline BinaryMask region_to_mask(const RegionSpec& region, const GridSpec& grid) {
    BinaryMask mask = BinaryMask::all_false(grid);
    for (std::size_t d = 0; d < region.low.size(); ++d) {
        const int dd = static_cast<int>(d);
        if (dd == grid.dim_x || dd == grid.dim_y) continue;
        const double f = grid.fixed[d];
        if (f < region.low[d] || f > region.high[d]) return mask;
    }
    for (int i = 0; i < grid.res_x; ++i)
        for (int j = 0; j < grid.res_y; ++j) {
            const double cx = grid.center_x(i);
            const double cy = grid.center_y(j);
            const bool inside = cx >= region.low[grid.dim_x] && cx <= region.high[grid.dim_x] &&
                                cy >= region.low[grid.dim_y] && cy <= region.high[grid.dim_y];
            mask.set(i, j, inside);
        }
    return mask;
}

inline double iou(const BinaryMask& a, const BinaryMask& b) {
    if (!a.grid.same_geometry(b.grid)) throw ShapeError("grid mismatch in iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t c = 0; c < a.bits.size(); ++c) {
        const bool av = a.bits[c] != 0, bv = b.bits[c] != 0;
        inter += av && bv;
        uni += av || bv;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Cells outside every ground-truth region, eroded by one cell so region
// boundaries do not bleed into the background statistics.
inline BinaryMask background_mask(const std::vector<RegionSpec>& regions, const GridSpec& grid) {
    BinaryMask outside = BinaryMask::all_false(grid);
    std::fill(outside.bits.begin(), outside.bits.end(), 1);
    for (const auto& r : regions) {
        const BinaryMask rm = region_to_mask(r, grid);
        for (std::size_t c = 0; c < outside.bits.size(); ++c)
            if (rm.bits[c]) outside.bits[c] = 0;
    }
    BinaryMask eroded = outside;
    for (int i = 0; i < grid.res_x; ++i)
        for (int j = 0; j < grid.res_y; ++j) {
            if (!outside.at(i, j)) continue;
            bool keep = true;
            for (int di = -1; di <= 1 && keep; ++di)
                for (int dj = -1; dj <= 1 && keep; ++dj) {
                    const int ni = i + di, nj = j + dj;
                    if (ni < 0 || nj < 0 || ni >= grid.res_x || nj >= grid.res_y) continue;
                    if (!outside.at(ni, nj)) keep = false;
                }
            eroded.set(i, j, keep);
        }
    return eroded;
}

inline double mean_in_mask(const UncertaintyMap& map, const BinaryMask& mask) {
    if (!map.grid.same_geometry(mask.grid)) throw ShapeError("grid mismatch in mean_in_mask");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < map.values.size(); ++c)
        if (mask.bits[c]) {
            sum += map.values[c];
            ++n;
        }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

// In-region mean over background mean. A ratio well above 1 on the
// other-type regions means that uncertainty kind leaked into this map.
inline double leakage_score(const UncertaintyMap& map, const std::vector<RegionSpec>& other_type_regions,
                            const std::vector<RegionSpec>& all_regions, const GridSpec& grid) {
    BinaryMask inside = BinaryMask::all_false(grid);
    for (const auto& r : other_type_regions) {
        const BinaryMask rm = region_to_mask(r, grid);
        for (std::size_t c = 0; c < inside.bits.size(); ++c)
            if (rm.bits[c]) inside.bits[c] = 1;
    }
    const double in_mean = mean_in_mask(map, inside);
    const double bg_mean = mean_in_mask(map, background_mask(all_regions, grid));
    if (bg_mean == 0.0) return in_mean == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return in_mean / bg_mean;
}

// Scores one ground-truth region against a detection mask and a map.
inline RegionScore score_region(const UncertaintyMap& map, const BinaryMask& detection,
                                const RegionSpec& region, const std::vector<RegionSpec>& all_regions) {
    const GridSpec& grid = map.grid;
    const BinaryMask rm = region_to_mask(region, grid);
    RegionScore s;
    s.iou = iou(detection, rm);
    s.in_mean = mean_in_mask(map, rm);
    s.background_mean = mean_in_mask(map, background_mask(all_regions, grid));
    s.contrast = s.background_mean == 0.0
                     ? (s.in_mean == 0.0 ? 1.0 : std::numeric_limits<double>::infinity())
                     : s.in_mean / s.background_mean;
    return s;
}

// Fraction of test targets lying at or below the ensemble-mean head for
// quantile level q, pooled over outputs. q must be one of the trained levels.
inline double coverage_calibration(const QuantileSurrogate& model,
                                   const std::vector<std::vector<double>>& inputs,
                                   const std::vector<std::vector<double>>& targets, double q) {
    if (inputs.empty() || inputs.size() != targets.size()) throw ShapeError("bad coverage test set");
    const double levels[3] = {model.alpha.alpha, 0.5, 1.0 - model.alpha.alpha};
    int head = -1;
    for (int h = 0; h < 3; ++h)
        if (std::fabs(levels[h] - q) < 1e-9) head = h;
    if (head < 0) throw ConfigError("coverage level q does not match a trained quantile head");

    std::size_t covered = 0, total = 0;
    const int N = model.n_members();
    for (std::size_t r = 0; r < inputs.size(); ++r) {
        std::vector<std::vector<double>> outs(N);
        for (int m = 0; m < N; ++m) outs[m] = mlp_forward(model.members[m], inputs[r]);
        for (int o = 0; o < model.outputs; ++o) {
            double head_mean = 0.0;
            for (int m = 0; m < N; ++m) head_mean += outs[m][3 * o + head];
            head_mean /= N;
            covered += targets[r][o] <= head_mean;
            ++total;
        }
    }
    return static_cast<double>(covered) / static_cast<double>(total);
}

// Fraction of (cell, member, output) triples with a crossed quantile pair
// q_alpha > q_{1-alpha}; diagnostic for the clamp in sigma_from_spread.
inline double crossing_rate(const QuantileSurrogate& model, const GridSpec& grid) {
    grid.validate();
    std::size_t crossed = 0, total = 0;
    for (int i = 0; i < grid.res_x; ++i)
        for (int j = 0; j < grid.res_y; ++j) {
            const auto x = grid.cell_input(i, j);
            for (int m = 0; m < model.n_members(); ++m) {
                const auto y = mlp_forward(model.members[m], x);
                for (int o = 0; o < model.outputs; ++o) {
                    crossed += y[3 * o] > y[3 * o + 2];
                    ++total;
                }
            }
        }
    return total == 0 ? 0.0 : static_cast<double>(crossed) / static_cast<double>(total);
}

}  // namespace uqsep
