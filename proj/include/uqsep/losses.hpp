#pragma once

#include <cmath>

#include "uqsep/errors.hpp"

namespace uqsep {

// Quantile level q in (0,1).
struct QuantileLevel {
    double q;
    explicit QuantileLevel(double q_) : q(q_) {
        if (!(q > 0.0 && q < 1.0)) throw ConfigError("quantile level must lie in (0,1)");
    }
};

// Lower-tail level alpha in (0, 0.5); the paired upper level is 1-alpha.
struct AlphaLevel {
    double alpha;
    explicit AlphaLevel(double a) : alpha(a) {
        if (!(a > 0.0 && a < 0.5)) throw ConfigError("alpha must lie in (0, 0.5)");
    }
};

// Pinball (quantile) loss. Ties y == y_hat take the first branch, so the
// subgradient at the kink is -q.
inline double pinball_loss(double y, double y_hat, QuantileLevel q) {
    return y >= y_hat ? q.q * (y - y_hat) : (1.0 - q.q) * (y_hat - y);
}

// d pinball / d y_hat
inline double pinball_grad(double y, double y_hat, QuantileLevel q) {
    return y >= y_hat ? -q.q : 1.0 - q.q;
}

// Gaussian negative log-likelihood, log-variance parameterization, constant
// term dropped: 0.5*lv + 0.5*(y-mu)^2 * exp(-lv).
inline double gaussian_nll(double y, double mu, double log_var) {
    const double r = y - mu;
    return 0.5 * log_var + 0.5 * r * r * std::exp(-log_var);
}

inline double gaussian_nll_grad_mu(double y, double mu, double log_var) {
    return -(y - mu) * std::exp(-log_var);
}

inline double gaussian_nll_grad_log_var(double y, double mu, double log_var) {
    const double r = y - mu;
    return 0.5 - 0.5 * r * r * std::exp(-log_var);
}

inline double mse(double y, double y_hat) {
    const double r = y_hat - y;
    return r * r;
}

// d mse / d y_hat
inline double mse_grad(double y, double y_hat) {
    return 2.0 * (y_hat - y);
}

}  // namespace uqsep
