#pragma once

// Encoder plus alignment heads, with named parameter access.

#include <map>
#include <string>

#include "semcov/encoder.hpp"
#include "semcov/objectives.hpp"

namespace semcov {

template <typename T, typename Backbone = ConvBackbone<T>>
struct Model {
  EncoderParams<T, Backbone> encoder;
  DvaParams<T> dva;

  Model() = default;
  Model(const EncoderConfig& cfg, uint64_t seed, bool symmetric_dva = false) {
    Rng rng(seed);
    encoder = EncoderParams<T, Backbone>(cfg, rng);
    dva = DvaParams<T>(cfg.C_f, cfg.K, cfg.E, rng, symmetric_dva);
  }

  const EncoderConfig& config() const { return encoder.cfg; }

  ForwardOutput<T> forward(const Var<T>& x, const Var<T>& p, const ForwardOptions& opt = {}) const {
    return encoder_forward(x, p, encoder, opt);
  }

  /// Every parameter and buffer, including those the configuration leaves
  /// unused (they are still saved).
  ParamList<T> all_parameters() const {
    ParamList<T> out;
    EncoderConfig full = encoder.cfg;
    full.visual_only = false;
    full.feedback = true;
    full.ordering = Ordering::MixtureGated;
    EncoderParams<T, Backbone> view = encoder;
    view.cfg = full;
    view.collect("encoder.", out);
    dva.collect("dva.", out);
    return out;
  }

  /// Parameters the forward pass and losses actually use.
  ParamList<T> parameters() const {
    ParamList<T> out;
    encoder.collect("encoder.", out);
    dva.collect("dva.", out);
    return out;
  }

  ParamList<T> trainable() const {
    ParamList<T> out;
    for (auto& p : parameters())
      if (p.trainable) out.push_back(p);
    return out;
  }
};

}  // namespace semcov
