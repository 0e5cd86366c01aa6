#pragma once

#include "support.hpp"
#include "vsalign/training.hpp"

namespace vsalign::testing {

/// Small data and short schedules: whole pipeline in well under a second.
struct TinySetup {
    SynthData data;
    TrainConfig cfg;

    explicit TinySetup(std::uint64_t seed = 1) : data(synth_generate(small_synth(), seed)) {
        cfg.seed = seed;
        cfg.encoder.architecture = Architecture::mlp_tiny;
        cfg.encoder.input = data.dataset.shape();
        cfg.encoder.hidden = {32};
        cfg.encoder.output_dim = 16;
        cfg.stage1.epochs = 5;
        cfg.stage1.decay_epochs = {3, 4};
        cfg.stage1.batch_size = 32;
        cfg.stage2.epochs = 2;
        cfg.stage2.batches_per_epoch = 3;
        cfg.stage2.tasks_per_batch = 2;
        cfg.stage2.episode = {5, 1, 5};
    }
};

}  // namespace vsalign::testing
