#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "uqsep/surrogates.hpp"

using namespace uqsep;

namespace {

// High-precision standard normal CDF through erfc; reference for round trips.
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("inverse normal cdf: symmetry and center") {
    CHECK(inverse_normal_cdf(0.5) == 0.0);
    for (double p : {0.01, 0.1, 0.25, 0.4, 0.45})
        CHECK(inverse_normal_cdf(p) == Catch::Approx(-inverse_normal_cdf(1.0 - p)).margin(1e-14));
}

TEST_CASE("inverse normal cdf: paper anchor points") {
    CHECK(inverse_normal_cdf(0.3085) == Catch::Approx(-0.5).margin(2e-4));
    CHECK(inverse_normal_cdf(0.6915) == Catch::Approx(0.5).margin(2e-4));
    CHECK(inverse_normal_cdf(0.9) == Catch::Approx(1.2815515655446004).margin(1e-12));
}

TEST_CASE("inverse normal cdf: round trip within 1.2e-9 across the domain") {
    for (int k = 1; k < 2000; ++k) {
        const double p = k / 2000.0;
        CHECK(std::fabs(normal_cdf(inverse_normal_cdf(p)) - p) <= 1.2e-9);
    }
    // tails exercised through both rational branches
    for (double p : {1e-3, 1e-6, 1e-9, 1e-12, 1.0 - 1e-3, 1.0 - 1e-6, 1.0 - 1e-9})
        CHECK(std::fabs(normal_cdf(inverse_normal_cdf(p)) - p) <= 1.2e-9);
}

TEST_CASE("inverse normal cdf: domain errors") {
    CHECK_THROWS_AS(inverse_normal_cdf(0.0), DomainError);
    CHECK_THROWS_AS(inverse_normal_cdf(1.0), DomainError);
    CHECK_THROWS_AS(inverse_normal_cdf(-0.2), DomainError);
}

TEST_CASE("alpha_for_unit_sigma matches the appendix value") {
    const AlphaLevel a = alpha_for_unit_sigma();
    CHECK(a.alpha == Catch::Approx(0.3085).margin(1e-4));
    CHECK(a.alpha == Catch::Approx(0.30853753872598689636).margin(1e-12));
    // defining equation 2|z_alpha| = 1
    CHECK(std::fabs(2.0 * std::fabs(inverse_normal_cdf(a.alpha)) - 1.0) <= 1e-9);
    // round trip through the high-precision CDF
    CHECK(std::fabs(normal_cdf(inverse_normal_cdf(a.alpha)) - a.alpha) <= 1.2e-9);
}

TEST_CASE("sigma_from_spread: unit divisor at the appendix alpha") {
    const AlphaLevel a = alpha_for_unit_sigma();
    CHECK(sigma_from_spread(0.3, a) == Catch::Approx(0.3).epsilon(1e-9));
    CHECK(sigma_from_spread(0.0, a) == 0.0);
    for (double s : {0.1, 0.5, 1.7, 12.0})
        CHECK(sigma_from_spread(s, a) == Catch::Approx(s).epsilon(1e-9));
}

TEST_CASE("sigma_from_spread: q0.9 - q0.1 spread of a standard normal gives sigma 1") {
    // 2*z_0.9 = 2.5631031310892009 from the inverse-CDF table
    CHECK(sigma_from_spread(2.5631031310892009, AlphaLevel{0.1}) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("sigma_from_spread: clamps crossed spreads and is positively homogeneous") {
    const AlphaLevel a{0.2};
    CHECK(sigma_from_spread(-0.4, a) == 0.0);
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const double s = rng.uniform(0, 5), k = rng.uniform(0, 3);
        CHECK(sigma_from_spread(k * s, a) == Catch::Approx(k * sigma_from_spread(s, a)).margin(1e-12));
    }
}

TEST_CASE("empirical Gaussian spread recovery at alpha = 0.3085") {
    // sample-quantile oracle: 50k draws from N(0, 0.3^2)
    Rng rng(20240601);
    const int n = 50000;
    std::vector<double> sample(n);
    for (double& v : sample) v = rng.normal(0.0, 0.3);
    std::sort(sample.begin(), sample.end());
    auto quantile = [&](double q) {
        const double pos = q * (n - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - lo;
        return sample[lo] * (1.0 - frac) + sample[lo + 1] * frac;
    };
    const double spread = quantile(1.0 - 0.3085) - quantile(0.3085);
    CHECK(spread == Catch::Approx(0.3).epsilon(0.05));
    CHECK(sigma_from_spread(spread, AlphaLevel{0.3085}) == Catch::Approx(0.3).epsilon(0.051));
}
