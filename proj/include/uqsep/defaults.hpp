#pragma once

#include <string>

#include "uqsep/separation.hpp"

namespace uqsep {

// Pinned experiment defaults per benchmark problem. These are the "default
// toy/robot configs" the test suites run against; change them and the
// reference runs change with them.
inline SeparationConfig default_separation_config(const std::string& problem_name) {
    SeparationConfig cfg;
    cfg.kind = SurrogateKind::eqr;
    // with saturated channel normalization a pure-epistemic region's total
    // caps near ((1+a)/2)^O ~= 0.3, so the relative threshold must sit below
    // that for single-channel regions to enter the mask at all
    cfg.threshold = 0.2;
    cfg.n_acquire = 0;  // 25% of the initial design
    cfg.grid_res_x = 64;
    cfg.grid_res_y = 64;
    cfg.activity_rel_floor = 0.05;

    MlpArchitecture arch;
    arch.hidden = {64, 64};
    arch.activation = Activation::tanh;

    TrainConfig train;
    train.batch_size = 64;
    train.learning_rate = 3e-3;
    train.lr_schedule = LrSchedule::cosine;
    train.weight_init_scale = 1.0;
    train.dropout_rate = 0.0;

    // deep-ensemble members run two training phases, so they get a reduced
    // per-phase epoch budget
    int de_epochs;
    if (problem_name == "robot") {
        cfg.iterations = 4;
        train.epochs = 150;
        train.batch_size = 128;
        de_epochs = 150;
    } else {
        cfg.iterations = 2;
        train.epochs = 600;
        de_epochs = 300;
    }

    cfg.eqr.n_members = 7;
    cfg.eqr.alpha = alpha_for_unit_sigma();
    cfg.eqr.bag_fraction = 0.7;
    cfg.eqr.mixed_activations = true;
    cfg.eqr.arch = arch;
    cfg.eqr.train = train;

    cfg.de.n_members = 5;
    cfg.de.bag_fraction = 0.7;
    cfg.de.mixed_activations = true;
    cfg.de.arch = arch;
    cfg.de.train = train;
    cfg.de.train.epochs = de_epochs;

    cfg.mc.dropout_rate = 0.1;
    cfg.mc.n_passes = 50;
    cfg.mc.arch = arch;
    cfg.mc.train = train;

    return cfg;
}

}  // namespace uqsep
