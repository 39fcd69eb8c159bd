#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "uqsep/dataset.hpp"
#include "uqsep/errors.hpp"
#include "uqsep/random.hpp"

namespace uqsep {

enum class RegionPurpose { data_gap, noise };

// Axis-aligned ground-truth region. data_gap regions are excluded from the
// initial design; noise regions add N(0, noise_sigma^2) to every output.
struct RegionSpec {
    std::vector<double> low, high;
    RegionPurpose purpose = RegionPurpose::data_gap;
    double noise_sigma = 0.0;

    void validate() const {
        if (low.size() != high.size() || low.empty()) throw ShapeError("region bounds shape mismatch");
        for (std::size_t i = 0; i < low.size(); ++i)
            if (!(low[i] < high[i])) throw ConfigError("region requires low < high per dimension");
        if (purpose == RegionPurpose::noise && !(noise_sigma > 0.0))
            throw ConfigError("noise region requires noise_sigma > 0");
        if (purpose == RegionPurpose::data_gap && noise_sigma != 0.0)
            throw ConfigError("data_gap region must have noise_sigma = 0");
    }

    bool contains(std::span<const double> x) const {
        for (std::size_t i = 0; i < low.size(); ++i)
            if (x[i] < low[i] || x[i] > high[i]) return false;
        return true;
    }
};

// Which 2 input dims the uncertainty maps are plotted over; the remaining
// dims are pinned to `fixed` (slice entries of `fixed` are ignored).
struct SliceSpec {
    int dim_x = 0;
    int dim_y = 1;
    std::vector<double> fixed;
};

struct Problem {
    std::string name;
    int input_dim = 0;
    int output_dim = 0;
    std::vector<double> domain_low, domain_high;
    std::vector<RegionSpec> regions;
    std::function<std::vector<double>(std::span<const double>)> nfp;
    SliceSpec slice;

    bool in_domain(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != input_dim) return false;
        for (int i = 0; i < input_dim; ++i)
            if (x[i] < domain_low[i] || x[i] > domain_high[i]) return false;
        return true;
    }

    bool in_gap(std::span<const double> x) const {
        for (const auto& r : regions)
            if (r.purpose == RegionPurpose::data_gap && r.contains(x)) return true;
        return false;
    }

    const RegionSpec* noise_region_at(std::span<const double> x) const {
        for (const auto& r : regions)
            if (r.purpose == RegionPurpose::noise && r.contains(x)) return &r;
        return nullptr;
    }

    void drop_regions(RegionPurpose purpose) {
        std::erase_if(regions, [purpose](const RegionSpec& r) { return r.purpose == purpose; });
    }
};

// y1 = sin(r), y2 = x1*cos(r)*cos(x2), r = sqrt(x1^2 + x2^2)
inline std::pair<double, double> toy_nfp(double x1, double x2) {
    const double r = std::sqrt(x1 * x1 + x2 * x2);
    return {std::sin(r), x1 * std::cos(r) * std::cos(x2)};
}

inline constexpr double kRobotSegments[4] = {0.5, 0.5, 1.0, 1.0};

// Planar arm: base slides on a vertical wall at (0, x1); joint angles
// x2..x5 accumulate. Returns the tip position.
inline std::pair<double, double> robot_fk(std::span<const double> x) {
    if (x.size() != 5) throw ShapeError("robot_fk expects a 5-vector");
    double theta = 0.0, tx = 0.0, ty = x[0];
    for (int k = 0; k < 4; ++k) {
        theta += x[k + 1];
        tx += kRobotSegments[k] * std::cos(theta);
        ty += kRobotSegments[k] * std::sin(theta);
    }
    return {tx, ty};
}

// 2-output trigonometric surface on [-5,5]^2 with two data gaps (top) and
// two N(0, 0.3) noise boxes (bottom).
inline Problem toy_problem() {
    Problem p;
    p.name = "toy";
    p.input_dim = 2;
    p.output_dim = 2;
    p.domain_low = {-5.0, -5.0};
    p.domain_high = {5.0, 5.0};
    p.regions = {
        RegionSpec{{-4.5, 0.5}, {-0.5, 4.5}, RegionPurpose::data_gap, 0.0},
        RegionSpec{{0.5, 0.5}, {4.5, 4.5}, RegionPurpose::data_gap, 0.0},
        RegionSpec{{-3.5, -3.5}, {-1.5, -1.5}, RegionPurpose::noise, 0.3},
        RegionSpec{{1.5, -3.5}, {3.5, -1.5}, RegionPurpose::noise, 0.3},
    };
    p.nfp = [](std::span<const double> x) {
        auto [y1, y2] = toy_nfp(x[0], x[1]);
        return std::vector<double>{y1, y2};
    };
    p.slice = SliceSpec{0, 1, {0.0, 0.0}};
    return p;
}

// 5-DOF arm benchmark. The default exclusion removes joint 3 (input dim 3)
// over [pi/4, 3pi/4]; the map slice runs over joints 2 and 3.
inline Problem robot_problem(bool with_exclusion = true) {
    using std::numbers::pi;
    Problem p;
    p.name = "robot";
    p.input_dim = 5;
    p.output_dim = 2;
    p.domain_low = {-1.0, -pi, -pi, -pi, -pi};
    p.domain_high = {1.0, pi, pi, pi, pi};
    if (with_exclusion) {
        RegionSpec excl;
        excl.low = {-1.0, -pi, -pi, pi / 4.0, -pi};
        excl.high = {1.0, pi, pi, 3.0 * pi / 4.0, pi};
        excl.purpose = RegionPurpose::data_gap;
        p.regions.push_back(excl);
    }
    p.nfp = [](std::span<const double> x) {
        auto [tx, ty] = robot_fk(x);
        return std::vector<double>{tx, ty};
    };
    p.slice = SliceSpec{2, 3, {0.0, 0.0, 0.0, 0.0, 0.0}};
    return p;
}

namespace detail {

inline std::vector<double> label_point(const Problem& p, std::span<const double> x, Rng& noise_rng) {
    std::vector<double> y = p.nfp(x);
    if (static_cast<int>(y.size()) != p.output_dim) throw ShapeError("nfp output dim mismatch");
    if (const RegionSpec* nr = p.noise_region_at(x))
        for (double& v : y) v += noise_rng.normal(0.0, nr->noise_sigma);
    return y;
}

}  // namespace detail

// Uniform design over the domain with gap regions rejected and noise-region
// labels polluted; round_tag 0 throughout.
inline Dataset build_initial_dataset(const Problem& p, int n_points, std::uint64_t seed) {
    if (n_points <= 0) throw ConfigError("n_points must be positive");
    Rng point_rng(derive_seed(seed, tag64("init_points")));
    Dataset ds;
    std::vector<double> x(p.input_dim);
    long draws = 0, accepted = 0;
    while (accepted < n_points) {
        for (int i = 0; i < p.input_dim; ++i) x[i] = point_rng.uniform(p.domain_low[i], p.domain_high[i]);
        ++draws;
        if (draws >= 10000 && accepted * 100 < draws)
            throw ConfigError("rejection rate above 99%: gap regions leave no feasible volume");
        if (p.in_gap(x)) continue;
        Rng noise_rng(derive_seed(seed, tag64("init_noise"), static_cast<std::uint64_t>(accepted)));
        ds.append(x, detail::label_point(p, x, noise_rng), 0);
        ++accepted;
    }
    return ds;
}

// Labels a batch of acquired inputs. Gap regions are queryable here; noise
// regions stay noisy. Per-point derived seeds make a batch query equal to
// element-wise single queries.
inline std::vector<std::vector<double>> nfp_query(const Problem& p,
                                                  const std::vector<std::vector<double>>& inputs,
                                                  std::uint64_t seed) {
    std::vector<std::vector<double>> out;
    out.reserve(inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!p.in_domain(inputs[k]))
            throw DomainError("nfp_query input " + std::to_string(k) + " outside the problem domain");
        Rng noise_rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
        out.push_back(detail::label_point(p, inputs[k], noise_rng));
    }
    return out;
}

}  // namespace uqsep
