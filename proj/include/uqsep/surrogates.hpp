#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uqsep/dataset.hpp"
#include "uqsep/errors.hpp"
#include "uqsep/nn.hpp"
#include "uqsep/parallel.hpp"
#include "uqsep/random.hpp"

namespace uqsep {

// Inverse standard normal CDF, Wichura's PPND16 rational minimax
// approximation (Applied Statistics AS 241); absolute error is far below the
// 1.2e-9 this project relies on.
inline double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("inverse_normal_cdf requires p in (0,1)");
    const double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        const double num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                             1.3314166789178437745e2) * r + 3.3871328727963666080e0);
        const double den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                             4.2313330701600911252e1) * r + 1.0);
        return q * num / den;
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double z;
    if (r <= 5.0) {
        r -= 1.6;
        const double num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                                 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                               3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                             4.63033784615654529590e0) * r + 1.42343711074968357734e0);
        const double den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                                 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                               6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                             2.05319162663775882187e0) * r + 1.0);
        z = num / den;
    } else {
        r -= 5.0;
        const double num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                                 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                               2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                             5.46378491116411436990e0) * r + 6.65790464350110377720e0);
        const double den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                                 1.84631831751005468180e-6) * r + 7.86869131145613259100e-4) * r +
                               1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                             5.99832206555887937690e-1) * r + 1.0);
        z = num / den;
    }
    return q < 0.0 ? -z : z;
}

// Alpha solving 2*|z_alpha| = 1, i.e. Phi(-1/2) ~ 0.308538: at this level the
// (1-alpha)-to-alpha quantile spread of a Gaussian equals one sigma.
inline AlphaLevel alpha_for_unit_sigma() {
    return AlphaLevel{0.5 * std::erfc(0.5 / std::sqrt(2.0))};
}

// Converts an averaged quantile spread q_{1-a} - q_a into a standard
// deviation: spread / (2*|z_a|). Crossed (negative) spreads clamp to zero.
inline double sigma_from_spread(double spread, AlphaLevel alpha) {
    const double divisor = 2.0 * std::fabs(inverse_normal_cdf(alpha.alpha));
    return std::max(spread, 0.0) / divisor;
}

// Per-output prediction with separated uncertainty channels.
struct UncertaintyEstimate {
    double mean = 0.0;
    double sigma_epistemic = 0.0;
    double sigma_aleatoric = 0.0;
};

struct MlpArchitecture {
    std::vector<int> hidden = {64, 64};
    Activation activation = Activation::tanh;

    std::vector<int> layer_sizes(int input_dim, int output_dim) const {
        std::vector<int> s;
        s.push_back(input_dim);
        for (int h : hidden) s.push_back(h);
        s.push_back(output_dim);
        return s;
    }
};

// Common prediction contract of the three uncertainty models.
class Surrogate {
public:
    virtual ~Surrogate() = default;
    virtual int output_dim() const = 0;
    virtual std::string kind() const = 0;
    virtual std::vector<UncertaintyEstimate> predict(std::span<const double> x) const = 0;
};

namespace detail {

// Bootstrap-style subsample without replacement, ceil(fraction*n) rows.
inline std::vector<std::size_t> bag_indices(std::size_t n, double fraction, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    if (take >= n) return idx;
    rng.shuffle(idx);
    idx.resize(take);
    return idx;
}

inline void gather(const Dataset& ds, const std::vector<std::size_t>& idx,
                   std::vector<std::vector<double>>& xs, std::vector<std::vector<double>>& ys) {
    xs.clear();
    ys.clear();
    xs.reserve(idx.size());
    ys.reserve(idx.size());
    for (std::size_t i : idx) {
        xs.push_back(ds.inputs[i]);
        ys.push_back(ds.targets[i]);
    }
}

inline void check_ensemble_preconditions(const Dataset& ds, int n_members, double bag_fraction) {
    if (n_members < 2) throw ConfigError("ensemble needs at least 2 members");
    if (!(bag_fraction > 0.0 && bag_fraction <= 1.0)) throw ConfigError("bag_fraction must lie in (0,1]");
    if (ds.size() < static_cast<std::size_t>(10 * n_members))
        throw ConfigError("dataset too small: need at least 10 rows per ensemble member, have " +
                          std::to_string(ds.size()) + " for " + std::to_string(n_members) + " members");
}

inline double population_std(const std::vector<double>& v, double mean) {
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace detail

struct EqrConfig {
    int n_members = 5;
    AlphaLevel alpha = alpha_for_unit_sigma();
    double bag_fraction = 0.7;
    bool mixed_activations = false;  // alternate tanh/relu across members
    MlpArchitecture arch;
    TrainConfig train;
};

// Ensemble of quantile-regression networks. Each member carries heads
// (q_alpha, q_0.5, q_{1-alpha}) per output; the member-spread of the median
// heads gives the epistemic channel and the averaged quantile spread, passed
// through sigma_from_spread, gives the aleatoric one.
class QuantileSurrogate : public Surrogate {
public:
    std::vector<MlpParams> members;
    AlphaLevel alpha = alpha_for_unit_sigma();
    double bag_fraction = 1.0;
    int outputs = 0;

    QuantileSurrogate() = default;

    int output_dim() const override { return outputs; }
    std::string kind() const override { return "eqr"; }

    int n_members() const { return static_cast<int>(members.size()); }

    // Raw head value of one member: head 0/1/2 = lower/median/upper.
    double head_value(int member, std::span<const double> x, int output, int head) const {
        const auto y = mlp_forward(members[member], x);
        return y[3 * output + head];
    }

    std::vector<UncertaintyEstimate> predict(std::span<const double> x) const override {
        if (members.empty()) throw StateError("quantile surrogate is untrained");
        const int N = n_members();
        std::vector<std::vector<double>> outs(N);
        for (int m = 0; m < N; ++m) outs[m] = mlp_forward(members[m], x);

        std::vector<UncertaintyEstimate> est(outputs);
        std::vector<double> medians(N);
        for (int o = 0; o < outputs; ++o) {
            double median_sum = 0.0, spread_sum = 0.0;
            for (int m = 0; m < N; ++m) {
                medians[m] = outs[m][3 * o + 1];
                median_sum += medians[m];
                spread_sum += outs[m][3 * o + 2] - outs[m][3 * o + 0];
            }
            const double mean = median_sum / N;
            est[o].mean = mean;
            est[o].sigma_epistemic = detail::population_std(medians, mean);
            est[o].sigma_aleatoric = sigma_from_spread(spread_sum / N, alpha);
        }
        return est;
    }
};

inline QuantileSurrogate eqr_train(const Dataset& ds, const EqrConfig& cfg) {
    ds.validate();
    detail::check_ensemble_preconditions(ds, cfg.n_members, cfg.bag_fraction);
    cfg.train.validate();

    QuantileSurrogate model;
    model.alpha = cfg.alpha;
    model.bag_fraction = cfg.bag_fraction;
    model.outputs = ds.output_dim();
    model.members.resize(cfg.n_members);

    const LossSpec loss =
        LossSpec::make_pinball({cfg.alpha.alpha, 0.5, 1.0 - cfg.alpha.alpha});
    const auto sizes = cfg.arch.layer_sizes(ds.input_dim(), 3 * ds.output_dim());

    std::string failure;
    parallel_for(static_cast<std::size_t>(cfg.n_members), [&](std::size_t m) {
        TrainConfig mc = cfg.train;
        mc.seed = derive_seed(cfg.train.seed, tag64("eqr_member"), m);
        Rng bag_rng(derive_seed(mc.seed, tag64("bag")));
        const auto idx = detail::bag_indices(ds.size(), cfg.bag_fraction, bag_rng);
        std::vector<std::vector<double>> xs, ys;
        detail::gather(ds, idx, xs, ys);
        const Activation act = cfg.mixed_activations && m % 2 == 1 ? Activation::relu
                                                                   : cfg.arch.activation;
        try {
            model.members[m] = train(sizes, act, xs, ys, loss, mc);
        } catch (const TrainDivergenceError& e) {
            failure = "member " + std::to_string(m) + ": " + e.what();
        }
    });
    if (!failure.empty()) throw TrainDivergenceError("eqr_train: " + failure);
    return model;
}

struct DeConfig {
    int n_members = 5;
    double bag_fraction = 0.7;
    bool mixed_activations = false;
    MlpArchitecture arch;
    TrainConfig train;
};

// Deep ensemble: members emit (mu, log sigma^2) per output. Phase 1 fits the
// mu heads with mse; phase 2 fits only the log-variance output rows with
// gaussian_nll, leaving the trunk and mu heads untouched so phase-1
// predictions stay frozen in function space.
class DeepEnsemble : public Surrogate {
public:
    std::vector<MlpParams> members;
    double bag_fraction = 1.0;
    int outputs = 0;

    int output_dim() const override { return outputs; }
    std::string kind() const override { return "de"; }

    int n_members() const { return static_cast<int>(members.size()); }

    std::vector<UncertaintyEstimate> predict(std::span<const double> x) const override {
        if (members.empty()) throw StateError("deep ensemble is untrained");
        const int N = n_members();
        std::vector<std::vector<double>> outs(N);
        for (int m = 0; m < N; ++m) outs[m] = mlp_forward(members[m], x);

        std::vector<UncertaintyEstimate> est(outputs);
        std::vector<double> mus(N);
        for (int o = 0; o < outputs; ++o) {
            double mu_sum = 0.0, var_sum = 0.0;
            for (int m = 0; m < N; ++m) {
                mus[m] = outs[m][2 * o];
                mu_sum += mus[m];
                var_sum += std::exp(outs[m][2 * o + 1]);
            }
            const double mean = mu_sum / N;
            est[o].mean = mean;
            est[o].sigma_epistemic = detail::population_std(mus, mean);
            est[o].sigma_aleatoric = std::sqrt(var_sum / N);
        }
        return est;
    }
};

namespace detail {

// Phase 1 of deep-ensemble training: mse on the mu heads; the log-variance
// heads receive no loss gradient.
inline double mu_head_loss(std::span<const double> target, std::span<const double> y_hat,
                           std::span<double> grad_out) {
    double loss = 0.0;
    for (std::size_t o = 0; o < target.size(); ++o) {
        loss += mse(target[o], y_hat[2 * o]);
        grad_out[2 * o] = mse_grad(target[o], y_hat[2 * o]);
        grad_out[2 * o + 1] = 0.0;
    }
    return loss;
}

// Phase 2: gaussian_nll with mu treated as a constant, so only the
// log-variance heads learn.
inline double log_var_head_loss(std::span<const double> target, std::span<const double> y_hat,
                                std::span<double> grad_out) {
    double loss = 0.0;
    for (std::size_t o = 0; o < target.size(); ++o) {
        const double mu = y_hat[2 * o], lv = y_hat[2 * o + 1];
        loss += gaussian_nll(target[o], mu, lv);
        grad_out[2 * o] = 0.0;
        grad_out[2 * o + 1] = gaussian_nll_grad_log_var(target[o], mu, lv);
    }
    return loss;
}

}  // namespace detail

inline DeepEnsemble de_train(const Dataset& ds, const DeConfig& cfg, std::vector<TrainLog>* logs = nullptr) {
    ds.validate();
    detail::check_ensemble_preconditions(ds, cfg.n_members, cfg.bag_fraction);
    cfg.train.validate();

    DeepEnsemble model;
    model.bag_fraction = cfg.bag_fraction;
    model.outputs = ds.output_dim();
    model.members.resize(cfg.n_members);
    if (logs) logs->assign(cfg.n_members, TrainLog{});

    const int O = ds.output_dim();
    const auto sizes = cfg.arch.layer_sizes(ds.input_dim(), 2 * O);

    // phase 2 only moves the log-variance output rows
    TrainScope sigma_scope;
    sigma_scope.trunk = false;
    sigma_scope.last_layer_rows.assign(2 * O, 0);
    for (int o = 0; o < O; ++o) sigma_scope.last_layer_rows[2 * o + 1] = 1;

    std::string failure;
    parallel_for(static_cast<std::size_t>(cfg.n_members), [&](std::size_t m) {
        TrainConfig mc = cfg.train;
        mc.seed = derive_seed(cfg.train.seed, tag64("de_member"), m);
        Rng bag_rng(derive_seed(mc.seed, tag64("bag")));
        const auto idx = detail::bag_indices(ds.size(), cfg.bag_fraction, bag_rng);
        std::vector<std::vector<double>> xs, ys;
        detail::gather(ds, idx, xs, ys);
        TrainLog* log = logs ? &(*logs)[m] : nullptr;
        const Activation act = cfg.mixed_activations && m % 2 == 1 ? Activation::relu
                                                                   : cfg.arch.activation;
        try {
            Rng init_rng(derive_seed(mc.seed, tag64("init")));
            MlpParams p = glorot_init(sizes, act, mc.weight_init_scale, init_rng);
            p = train_with(std::move(p), xs, ys, detail::mu_head_loss, mc, log, 1);
            p = train_with(std::move(p), xs, ys, detail::log_var_head_loss, mc, log, 2, &sigma_scope);
            model.members[m] = std::move(p);
        } catch (const TrainDivergenceError& e) {
            failure = "member " + std::to_string(m) + ": " + e.what();
        }
    });
    if (!failure.empty()) throw TrainDivergenceError("de_train: " + failure);
    return model;
}

struct McDropoutConfig {
    double dropout_rate = 0.1;
    int n_passes = 50;
    MlpArchitecture arch;
    TrainConfig train;
};

// Single network trained with dropout on the full data; uncertainty comes
// from the spread of stochastic forward passes. Aleatoric is zero by
// contract.
class McDropoutModel : public Surrogate {
public:
    MlpParams params;
    double dropout_rate = 0.1;
    int n_passes = 50;
    std::uint64_t predict_seed = 0;
    int outputs = 0;
    bool trained = false;

    int output_dim() const override { return outputs; }
    std::string kind() const override { return "mc_dropout"; }

    std::vector<UncertaintyEstimate> predict(std::span<const double> x) const override {
        Rng rng(derive_seed(predict_seed, hash_doubles(x.data(), x.size())));
        return predict_with(x, rng);
    }

    std::vector<UncertaintyEstimate> predict_with(std::span<const double> x, Rng& rng) const {
        if (!trained) throw StateError("mc-dropout model is untrained");
        if (n_passes < 2) throw ConfigError("mc-dropout needs at least 2 passes");
        std::vector<std::vector<double>> passes(n_passes);
        for (int t = 0; t < n_passes; ++t) passes[t] = mlp_forward_dropout(params, x, dropout_rate, rng);

        std::vector<UncertaintyEstimate> est(outputs);
        std::vector<double> vals(n_passes);
        for (int o = 0; o < outputs; ++o) {
            double sum = 0.0;
            for (int t = 0; t < n_passes; ++t) {
                vals[t] = passes[t][o];
                sum += vals[t];
            }
            const double mean = sum / n_passes;
            est[o].mean = mean;
            est[o].sigma_epistemic = detail::population_std(vals, mean);
            est[o].sigma_aleatoric = 0.0;
        }
        return est;
    }
};

inline std::vector<UncertaintyEstimate> mc_dropout_predict(const McDropoutModel& model,
                                                           std::span<const double> x, Rng& rng) {
    return model.predict_with(x, rng);
}

inline McDropoutModel mc_dropout_train(const Dataset& ds, const McDropoutConfig& cfg) {
    ds.validate();
    if (ds.size() == 0) throw ConfigError("dataset is empty");
    if (!(cfg.dropout_rate > 0.0 && cfg.dropout_rate < 1.0))
        throw ConfigError("mc-dropout requires dropout_rate in (0,1)");
    if (cfg.n_passes < 2) throw ConfigError("mc-dropout needs at least 2 passes");

    McDropoutModel model;
    model.dropout_rate = cfg.dropout_rate;
    model.n_passes = cfg.n_passes;
    model.outputs = ds.output_dim();
    model.predict_seed = derive_seed(cfg.train.seed, tag64("mc_predict"));

    TrainConfig tc = cfg.train;
    tc.dropout_rate = cfg.dropout_rate;
    const auto sizes = cfg.arch.layer_sizes(ds.input_dim(), ds.output_dim());
    model.params = train(sizes, cfg.arch.activation, ds.inputs, ds.targets, LossSpec::make_mse(), tc);
    model.trained = true;
    return model;
}

// ---------------------------------------------------------------------------
// Model container: one binary file for any surrogate kind. Doubles are stored
// raw (native little-endian), so a load is bit-exact.

namespace detail {

constexpr std::uint32_t kModelFormatVersion = 1;
constexpr char kModelMagic[4] = {'U', 'Q', 'S', 'M'};

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_f64s(std::ostream& os, const std::vector<double>& v) {
    write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw ParseError("model container truncated");
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw ParseError("model container truncated");
    return v;
}
inline double read_f64(std::istream& is) {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw ParseError("model container truncated");
    return v;
}
inline std::vector<double> read_f64s(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    if (!is) throw ParseError("model container truncated");
    return v;
}

inline void write_mlp(std::ostream& os, const MlpParams& p) {
    write_u32(os, static_cast<std::uint32_t>(p.layer_sizes.size()));
    for (int s : p.layer_sizes) write_u32(os, static_cast<std::uint32_t>(s));
    write_u32(os, p.activation == Activation::relu ? 0u : 1u);
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
        write_f64s(os, p.weights[k]);
        write_f64s(os, p.biases[k]);
    }
}

inline MlpParams read_mlp(std::istream& is) {
    MlpParams p;
    const std::uint32_t n = read_u32(is);
    p.layer_sizes.resize(n);
    for (auto& s : p.layer_sizes) s = static_cast<int>(read_u32(is));
    p.activation = read_u32(is) == 0u ? Activation::relu : Activation::tanh;
    for (std::size_t k = 0; k + 1 < p.layer_sizes.size(); ++k) {
        p.weights.push_back(read_f64s(is));
        p.biases.push_back(read_f64s(is));
    }
    p.validate();
    return p;
}

}  // namespace detail

inline void save_model(std::ostream& os, const Surrogate& model) {
    using namespace detail;
    os.write(kModelMagic, 4);
    write_u32(os, kModelFormatVersion);
    if (const auto* eqr = dynamic_cast<const QuantileSurrogate*>(&model)) {
        write_u32(os, 0);
        write_u32(os, static_cast<std::uint32_t>(eqr->outputs));
        write_u32(os, static_cast<std::uint32_t>(eqr->members.size()));
        write_f64(os, eqr->alpha.alpha);
        write_f64(os, eqr->bag_fraction);
        for (const auto& m : eqr->members) write_mlp(os, m);
    } else if (const auto* de = dynamic_cast<const DeepEnsemble*>(&model)) {
        write_u32(os, 1);
        write_u32(os, static_cast<std::uint32_t>(de->outputs));
        write_u32(os, static_cast<std::uint32_t>(de->members.size()));
        write_f64(os, de->bag_fraction);
        for (const auto& m : de->members) write_mlp(os, m);
    } else if (const auto* mc = dynamic_cast<const McDropoutModel*>(&model)) {
        write_u32(os, 2);
        write_u32(os, static_cast<std::uint32_t>(mc->outputs));
        write_f64(os, mc->dropout_rate);
        write_u32(os, static_cast<std::uint32_t>(mc->n_passes));
        write_u64(os, mc->predict_seed);
        write_mlp(os, mc->params);
    } else {
        throw StateError("unknown surrogate kind for serialization");
    }
    if (!os) throw IoError("model write failure");
}

inline void save_model(const std::string& path, const Surrogate& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    save_model(os, model);
}

inline std::unique_ptr<Surrogate> load_model(std::istream& is) {
    using namespace detail;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(kModelMagic, 4))
        throw ParseError("not a model container (bad magic)");
    const std::uint32_t version = read_u32(is);
    if (version != kModelFormatVersion)
        throw ParseError("unsupported model format version " + std::to_string(version));
    const std::uint32_t kind = read_u32(is);
    if (kind == 0) {
        auto m = std::make_unique<QuantileSurrogate>();
        m->outputs = static_cast<int>(read_u32(is));
        const std::uint32_t n = read_u32(is);
        m->alpha = AlphaLevel{read_f64(is)};
        m->bag_fraction = read_f64(is);
        for (std::uint32_t i = 0; i < n; ++i) m->members.push_back(read_mlp(is));
        return m;
    }
    if (kind == 1) {
        auto m = std::make_unique<DeepEnsemble>();
        m->outputs = static_cast<int>(read_u32(is));
        const std::uint32_t n = read_u32(is);
        m->bag_fraction = read_f64(is);
        for (std::uint32_t i = 0; i < n; ++i) m->members.push_back(read_mlp(is));
        return m;
    }
    if (kind == 2) {
        auto m = std::make_unique<McDropoutModel>();
        m->outputs = static_cast<int>(read_u32(is));
        m->dropout_rate = read_f64(is);
        m->n_passes = static_cast<int>(read_u32(is));
        m->predict_seed = read_u64(is);
        m->params = detail::read_mlp(is);
        m->trained = true;
        return m;
    }
    throw ParseError("unknown surrogate kind tag " + std::to_string(kind));
}

inline std::unique_ptr<Surrogate> load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return load_model(is);
}

}  // namespace uqsep
