#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "uqsep/errors.hpp"
#include "uqsep/losses.hpp"
#include "uqsep/random.hpp"

namespace uqsep {

enum class Activation { relu, tanh };

inline const char* activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "tanh";
}

// Dense feed-forward network parameters. weights[k] is the
// (layer_sizes[k+1] x layer_sizes[k]) matrix of layer k, row-major; hidden
// layers use `activation`, the output layer is linear.
struct MlpParams {
    std::vector<int> layer_sizes;
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
    Activation activation = Activation::tanh;

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    std::size_t n_layers() const { return weights.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
        return n;
    }

    void validate() const {
        if (layer_sizes.size() < 2) throw ShapeError("mlp needs at least input and output layers");
        for (int s : layer_sizes)
            if (s <= 0) throw ShapeError("layer sizes must be positive");
        if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size())
            throw ShapeError("weight/bias layer count does not match layer_sizes");
        for (std::size_t k = 0; k < weights.size(); ++k) {
            const std::size_t rows = static_cast<std::size_t>(layer_sizes[k + 1]);
            const std::size_t cols = static_cast<std::size_t>(layer_sizes[k]);
            if (weights[k].size() != rows * cols) throw ShapeError("weight matrix shape mismatch at layer " + std::to_string(k));
            if (biases[k].size() != rows) throw ShapeError("bias length mismatch at layer " + std::to_string(k));
            for (double w : weights[k])
                if (!std::isfinite(w)) throw ShapeError("non-finite weight at layer " + std::to_string(k));
            for (double b : biases[k])
                if (!std::isfinite(b)) throw ShapeError("non-finite bias at layer " + std::to_string(k));
        }
    }
};

inline MlpParams make_mlp(std::vector<int> layer_sizes, Activation act = Activation::tanh) {
    MlpParams p;
    p.layer_sizes = std::move(layer_sizes);
    p.activation = act;
    for (std::size_t k = 0; k + 1 < p.layer_sizes.size(); ++k) {
        p.weights.emplace_back(static_cast<std::size_t>(p.layer_sizes[k + 1]) * p.layer_sizes[k], 0.0);
        p.biases.emplace_back(p.layer_sizes[k + 1], 0.0);
    }
    p.validate();
    return p;
}

// Scaled Glorot: uniform in +-scale*sqrt(6/(fan_in+fan_out)), biases zero.
inline MlpParams glorot_init(std::vector<int> layer_sizes, Activation act, double scale, Rng& rng) {
    MlpParams p = make_mlp(std::move(layer_sizes), act);
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
        const double fan_in = p.layer_sizes[k];
        const double fan_out = p.layer_sizes[k + 1];
        const double bound = scale * std::sqrt(6.0 / (fan_in + fan_out));
        for (double& w : p.weights[k]) w = rng.uniform(-bound, bound);
    }
    return p;
}

namespace detail {

inline double activate(double z, Activation a) {
    return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// derivative expressed through the post-activation value
inline double activate_deriv(double act_value, Activation a) {
    return a == Activation::relu ? (act_value > 0.0 ? 1.0 : 0.0) : 1.0 - act_value * act_value;
}

inline void affine(const std::vector<double>& w, const std::vector<double>& b,
                   const std::vector<double>& in, std::vector<double>& out) {
    const std::size_t rows = b.size();
    const std::size_t cols = in.size();
    out.resize(rows);
    const double* wp = w.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = b[r];
        const double* row = wp + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * in[c];
        out[r] = acc;
    }
}

}  // namespace detail

// Per-sample forward state kept for backprop. hidden_raw holds activations
// before the dropout scale; drop_scale is 0 or 1/(1-p) per unit (empty when
// dropout is off).
struct ForwardCache {
    std::vector<double> input;
    std::vector<std::vector<double>> hidden_raw;    // per hidden layer
    std::vector<std::vector<double>> hidden;        // after dropout scale
    std::vector<std::vector<double>> drop_scale;    // empty vectors when unused
    std::vector<double> output;
};

inline void mlp_forward_cached(const MlpParams& p, std::span<const double> x, ForwardCache& cache,
                               double dropout_rate = 0.0, Rng* rng = nullptr) {
    if (static_cast<int>(x.size()) != p.input_dim())
        throw ShapeError("input length " + std::to_string(x.size()) + " does not match input dim " +
                         std::to_string(p.input_dim()));
    const std::size_t n_hidden = p.n_layers() - 1;
    cache.input.assign(x.begin(), x.end());
    cache.hidden_raw.resize(n_hidden);
    cache.hidden.resize(n_hidden);
    cache.drop_scale.resize(n_hidden);

    const bool dropping = dropout_rate > 0.0 && rng != nullptr;
    const double keep_scale = dropping ? 1.0 / (1.0 - dropout_rate) : 1.0;

    const std::vector<double>* in = &cache.input;
    for (std::size_t k = 0; k < n_hidden; ++k) {
        detail::affine(p.weights[k], p.biases[k], *in, cache.hidden_raw[k]);
        for (double& v : cache.hidden_raw[k]) v = detail::activate(v, p.activation);
        cache.hidden[k] = cache.hidden_raw[k];
        if (dropping) {
            cache.drop_scale[k].resize(cache.hidden_raw[k].size());
            for (std::size_t u = 0; u < cache.hidden[k].size(); ++u) {
                const double s = rng->uniform() < dropout_rate ? 0.0 : keep_scale;
                cache.drop_scale[k][u] = s;
                cache.hidden[k][u] *= s;
            }
        } else {
            cache.drop_scale[k].clear();
        }
        in = &cache.hidden[k];
    }
    detail::affine(p.weights.back(), p.biases.back(), *in, cache.output);
}

// Deterministic forward pass (no dropout).
inline std::vector<double> mlp_forward(const MlpParams& p, std::span<const double> x) {
    ForwardCache cache;
    mlp_forward_cached(p, x, cache);
    return cache.output;
}

// Stochastic forward pass with inverted dropout on hidden activations, so the
// expectation over masks equals the dropout-free pass.
inline std::vector<double> mlp_forward_dropout(const MlpParams& p, std::span<const double> x,
                                               double dropout_rate, Rng& rng) {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
    ForwardCache cache;
    mlp_forward_cached(p, x, cache, dropout_rate, &rng);
    return cache.output;
}

struct MlpGrads {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    static MlpGrads like(const MlpParams& p) {
        MlpGrads g;
        g.weights.resize(p.weights.size());
        g.biases.resize(p.biases.size());
        for (std::size_t k = 0; k < p.weights.size(); ++k) {
            g.weights[k].assign(p.weights[k].size(), 0.0);
            g.biases[k].assign(p.biases[k].size(), 0.0);
        }
        return g;
    }

    void zero() {
        for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
        for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
    }

    void scale(double s) {
        for (auto& w : weights)
            for (double& v : w) v *= s;
        for (auto& b : biases)
            for (double& v : b) v *= s;
    }
};

// Accumulates dLoss/dTheta into `grads` for the sample held by `cache`.
// With last_layer_only set, propagation below the output layer is skipped
// (used when the trunk is frozen anyway).
inline void backprop_accumulate(const MlpParams& p, const ForwardCache& cache,
                                std::span<const double> loss_grad_at_output, MlpGrads& grads,
                                bool last_layer_only = false) {
    if (static_cast<int>(loss_grad_at_output.size()) != p.output_dim())
        throw ShapeError("output gradient length does not match output dim");

    const std::size_t L = p.n_layers();
    std::vector<double> delta(loss_grad_at_output.begin(), loss_grad_at_output.end());
    std::vector<double> delta_prev;

    for (std::size_t k = L; k-- > 0;) {
        const std::vector<double>& in = k == 0 ? cache.input : cache.hidden[k - 1];
        const std::size_t rows = p.biases[k].size();
        const std::size_t cols = in.size();
        double* gw = grads.weights[k].data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double d = delta[r];
            grads.biases[k][r] += d;
            double* grow = gw + r * cols;
            for (std::size_t c = 0; c < cols; ++c) grow[c] += d * in[c];
        }
        if (k == 0 || last_layer_only) break;

        // delta for the layer below, through weights, dropout scale, activation
        delta_prev.assign(cols, 0.0);
        const double* wp = p.weights[k].data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double d = delta[r];
            const double* row = wp + r * cols;
            for (std::size_t c = 0; c < cols; ++c) delta_prev[c] += d * row[c];
        }
        const std::vector<double>& raw = cache.hidden_raw[k - 1];
        const std::vector<double>& dscale = cache.drop_scale[k - 1];
        for (std::size_t c = 0; c < cols; ++c) {
            double s = dscale.empty() ? 1.0 : dscale[c];
            delta_prev[c] *= s * detail::activate_deriv(raw[c], p.activation);
        }
        delta.swap(delta_prev);
    }
}

// dLoss/dTheta for one input given the loss gradient at the output.
inline MlpGrads backprop(const MlpParams& p, std::span<const double> x,
                         std::span<const double> loss_grad_at_output) {
    ForwardCache cache;
    mlp_forward_cached(p, x, cache);
    MlpGrads g = MlpGrads::like(p);
    backprop_accumulate(p, cache, loss_grad_at_output, g);
    return g;
}

// Adaptive-moment optimizer state; moment arrays mirror the parameter shape.
struct OptimizerState {
    std::vector<std::vector<double>> m_w, v_w, m_b, v_b;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static OptimizerState for_params(const MlpParams& p) {
        OptimizerState s;
        s.m_w.resize(p.weights.size());
        s.v_w.resize(p.weights.size());
        s.m_b.resize(p.biases.size());
        s.v_b.resize(p.biases.size());
        for (std::size_t k = 0; k < p.weights.size(); ++k) {
            s.m_w[k].assign(p.weights[k].size(), 0.0);
            s.v_w[k].assign(p.weights[k].size(), 0.0);
            s.m_b[k].assign(p.biases[k].size(), 0.0);
            s.v_b[k].assign(p.biases[k].size(), 0.0);
        }
        return s;
    }
};

namespace detail {

inline void adam_update(std::vector<double>& theta, const std::vector<double>& g,
                        std::vector<double>& m, std::vector<double>& v,
                        double lr, double b1, double b2, double eps,
                        double bc1, double bc2) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace detail

inline void optimizer_step(MlpParams& params, const MlpGrads& grads, OptimizerState& st, double lr) {
    for (std::size_t k = 0; k < params.weights.size(); ++k) {
        for (double g : grads.weights[k])
            if (!std::isfinite(g))
                throw TrainDivergenceError("non-finite weight gradient at layer " + std::to_string(k));
        for (double g : grads.biases[k])
            if (!std::isfinite(g))
                throw TrainDivergenceError("non-finite bias gradient at layer " + std::to_string(k));
    }
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < params.weights.size(); ++k) {
        detail::adam_update(params.weights[k], grads.weights[k], st.m_w[k], st.v_w[k],
                            lr, st.beta1, st.beta2, st.epsilon, bc1, bc2);
        detail::adam_update(params.biases[k], grads.biases[k], st.m_b[k], st.v_b[k],
                            lr, st.beta1, st.beta2, st.epsilon, bc1, bc2);
    }
}

enum class LrSchedule { constant, cosine };

struct TrainConfig {
    int epochs = 300;
    int batch_size = 64;
    double learning_rate = 2e-3;
    LrSchedule lr_schedule = LrSchedule::constant;
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;
    double weight_init_scale = 1.0;

    // cosine decay to 2% of the base rate; tight final convergence keeps
    // ensemble members in agreement wherever the data pins them down
    double epoch_learning_rate(int epoch) const {
        if (lr_schedule == LrSchedule::constant || epochs <= 1) return learning_rate;
        const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
        const double floor = 0.02;
        return learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t)));
    }

    void validate() const {
        if (epochs <= 0) throw ConfigError("epochs must be positive");
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
        if (!(weight_init_scale > 0.0)) throw ConfigError("weight_init_scale must be positive");
    }
};

// Loss applied head-wise over the network output.
//   mse:          output dim == target dim
//   pinball:      output dim == q_levels.size() * target dim, heads grouped
//                 per target in q_levels order
//   gaussian_nll: output dim == 2 * target dim, (mu, log sigma^2) per target
struct LossSpec {
    enum class Kind { mse, pinball, gaussian_nll };
    Kind kind = Kind::mse;
    std::vector<double> q_levels;

    static LossSpec make_mse() { return LossSpec{Kind::mse, {}}; }
    static LossSpec make_pinball(std::vector<double> levels) {
        if (levels.empty()) throw ConfigError("pinball loss needs at least one quantile level");
        for (double q : levels) QuantileLevel{q};
        return LossSpec{Kind::pinball, std::move(levels)};
    }
    static LossSpec make_gaussian_nll() { return LossSpec{Kind::gaussian_nll, {}}; }

    int heads_per_target() const {
        switch (kind) {
            case Kind::mse: return 1;
            case Kind::pinball: return static_cast<int>(q_levels.size());
            case Kind::gaussian_nll: return 2;
        }
        return 1;
    }

    // Loss and dLoss/dy_hat for one sample, summed over targets and heads.
    double eval(std::span<const double> target, std::span<const double> y_hat,
                std::span<double> grad_out) const {
        const std::size_t heads = static_cast<std::size_t>(heads_per_target());
        if (y_hat.size() != target.size() * heads)
            throw ShapeError("network output dim does not match loss head layout");
        double loss = 0.0;
        for (std::size_t o = 0; o < target.size(); ++o) {
            const double y = target[o];
            switch (kind) {
                case Kind::mse: {
                    loss += mse(y, y_hat[o]);
                    grad_out[o] = mse_grad(y, y_hat[o]);
                    break;
                }
                case Kind::pinball: {
                    for (std::size_t l = 0; l < heads; ++l) {
                        const std::size_t idx = o * heads + l;
                        QuantileLevel q{q_levels[l]};
                        loss += pinball_loss(y, y_hat[idx], q);
                        grad_out[idx] = pinball_grad(y, y_hat[idx], q);
                    }
                    break;
                }
                case Kind::gaussian_nll: {
                    const std::size_t im = 2 * o, iv = 2 * o + 1;
                    loss += gaussian_nll(y, y_hat[im], y_hat[iv]);
                    grad_out[im] = gaussian_nll_grad_mu(y, y_hat[im], y_hat[iv]);
                    grad_out[iv] = gaussian_nll_grad_log_var(y, y_hat[im], y_hat[iv]);
                    break;
                }
            }
        }
        return loss;
    }
};

// Restricts which parameters an optimizer step may move. When `trunk` is
// false all layers below the output stay fixed; `last_layer_rows`, when
// non-empty, whitelists output rows (one flag per output unit).
struct TrainScope {
    bool trunk = true;
    std::vector<char> last_layer_rows;

    void apply(const MlpParams& p, MlpGrads& g) const {
        if (!trunk) {
            for (std::size_t k = 0; k + 1 < g.weights.size(); ++k) {
                std::fill(g.weights[k].begin(), g.weights[k].end(), 0.0);
                std::fill(g.biases[k].begin(), g.biases[k].end(), 0.0);
            }
        }
        if (!last_layer_rows.empty()) {
            const std::size_t k = g.weights.size() - 1;
            const std::size_t cols = static_cast<std::size_t>(p.layer_sizes[k]);
            for (std::size_t r = 0; r < g.biases[k].size(); ++r) {
                if (last_layer_rows[r]) continue;
                std::fill_n(g.weights[k].begin() + r * cols, cols, 0.0);
                g.biases[k][r] = 0.0;
            }
        }
    }
};

struct EpochRecord {
    int phase;
    int epoch;
    double mean_loss;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;

    int phase_count() const {
        int n = 0;
        for (const auto& e : epochs) n = std::max(n, e.phase);
        return n;
    }
};

// Mini-batch training continuing from the given parameters, generic over the
// per-sample loss: loss(target, y_hat, grad_out) -> loss value. Shuffling and
// dropout masks come from the seeded stream; a fresh optimizer state is used,
// which together with TrainScope zeroing keeps frozen parameters bit-stable.
template <class LossFn>
MlpParams train_with(MlpParams params,
                     const std::vector<std::vector<double>>& inputs,
                     const std::vector<std::vector<double>>& targets,
                     LossFn&& loss, const TrainConfig& cfg,
                     TrainLog* log = nullptr, int phase = 1,
                     const TrainScope* scope = nullptr) {
    cfg.validate();
    params.validate();
    if (inputs.empty()) throw ConfigError("training dataset is empty");
    if (inputs.size() != targets.size()) throw ShapeError("input/target row counts differ");

    Rng rng(derive_seed(cfg.seed, tag64("train_stream"), static_cast<std::uint64_t>(phase)));

    const std::size_t n = inputs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    MlpGrads grads = MlpGrads::like(params);
    OptimizerState opt = OptimizerState::for_params(params);
    ForwardCache cache;
    std::vector<double> out_grad(params.output_dim());
    const bool last_layer_only = scope && !scope->trunk;

    double last_finite_loss = 0.0;
    int last_finite_epoch = -1;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.epoch_learning_rate(epoch);
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            grads.zero();
            double batch_loss = 0.0;
            for (std::size_t s = start; s < stop; ++s) {
                const std::size_t i = order[s];
                mlp_forward_cached(params, inputs[i], cache, cfg.dropout_rate,
                                   cfg.dropout_rate > 0.0 ? &rng : nullptr);
                batch_loss += loss(targets[i], std::span<const double>(cache.output),
                                   std::span<double>(out_grad));
                backprop_accumulate(params, cache, out_grad, grads, last_layer_only);
            }
            if (!std::isfinite(batch_loss))
                throw TrainDivergenceError("training loss diverged at phase " + std::to_string(phase) +
                                           " epoch " + std::to_string(epoch) + "; last finite epoch " +
                                           std::to_string(last_finite_epoch) + " had mean loss " +
                                           std::to_string(last_finite_loss));
            grads.scale(1.0 / static_cast<double>(stop - start));
            if (scope) scope->apply(params, grads);
            optimizer_step(params, grads, opt, lr);
            epoch_loss += batch_loss;
        }
        const double mean_loss = epoch_loss / static_cast<double>(n);
        last_finite_loss = mean_loss;
        last_finite_epoch = epoch;
        if (log) log->epochs.push_back({phase, epoch, mean_loss});
    }
    params.validate();
    return params;
}

// train_with specialized to the three named loss kinds.
inline MlpParams train_from(MlpParams params,
                            const std::vector<std::vector<double>>& inputs,
                            const std::vector<std::vector<double>>& targets,
                            const LossSpec& loss, const TrainConfig& cfg,
                            TrainLog* log = nullptr, int phase = 1,
                            const TrainScope* scope = nullptr) {
    const std::size_t heads = static_cast<std::size_t>(loss.heads_per_target());
    if (!targets.empty() &&
        static_cast<std::size_t>(params.output_dim()) != targets.front().size() * heads)
        throw ShapeError("network output dim does not match loss head layout");
    return train_with(
        std::move(params), inputs, targets,
        [&loss](std::span<const double> t, std::span<const double> y, std::span<double> g) {
            return loss.eval(t, y, g);
        },
        cfg, log, phase, scope);
}

// Trains a freshly initialized network: Glorot init, shuffling and dropout
// all drawn from cfg.seed, so identical configs give bit-identical results.
inline MlpParams train(const std::vector<int>& layer_sizes, Activation act,
                       const std::vector<std::vector<double>>& inputs,
                       const std::vector<std::vector<double>>& targets,
                       const LossSpec& loss, const TrainConfig& cfg, TrainLog* log = nullptr) {
    Rng init_rng(derive_seed(cfg.seed, tag64("init")));
    MlpParams p = glorot_init(layer_sizes, act, cfg.weight_init_scale, init_rng);
    return train_from(std::move(p), inputs, targets, loss, cfg, log);
}

}  // namespace uqsep
