#pragma once

// Named bundles of generator, split and training settings.

#include <string>

#include "semcov/data.hpp"
#include "semcov/errors.hpp"
#include "semcov/trainer.hpp"

namespace semcov {

struct Preset {
  std::string name;
  SynthConfig synth;
  SplitRatios ratios;
  TrainConfig train;
};

/// "desk": 4000/500/1000 samples, K=7 T=2 S=4, 32x32 images, a 3-layer
/// encoder at C_f=D=E=32 and 6 epochs at lr 1e-3 (single-core budget).
/// "full": same data, C_f=D=E=64, 30 epochs at lr 2e-4.
/// "tiny": a few hundred 16x16 samples for smoke runs.
inline Preset make_preset(const std::string& name, uint64_t seed = 1) {
  Preset p;
  p.name = name;
  p.synth.rng_seed = seed;
  p.train.seed = seed;
  if (name == "desk" || name == "full") {
    p.synth.n_samples = 5500;
    p.ratios = {4000.0 / 5500.0, 500.0 / 5500.0, 1000.0 / 5500.0};
    if (name == "desk") {
      p.train.epochs = 6;
      p.train.base_lr = 1e-3;
    } else {
      p.train.encoder.C_f = p.train.encoder.D = p.train.encoder.E = 64;
    }
  } else if (name == "tiny") {
    p.synth.n_samples = 240;
    p.synth.height = p.synth.width = 16;
    p.ratios = {0.6, 0.2, 0.2};
    auto& e = p.train.encoder;
    e.C_f = 8;
    e.H_f = e.W_f = 4;
    e.D = e.E = 16;
    e.n_layers = 2;
    p.train.epochs = 2;
    p.train.batch_size = 16;
    p.train.base_lr = 1e-3;
  } else {
    throw ConfigError("unknown preset \"" + name + "\" (expected desk, full or tiny)");
  }
  p.train.encoder.K = p.synth.K;
  p.train.encoder.T = p.synth.T;
  p.train.encoder.image_channels = p.synth.channels;
  return p;
}

}  // namespace semcov
