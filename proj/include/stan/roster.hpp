// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "stan/model.hpp"

namespace stan {

// Audio model families used for parameter accounting.
//   compact: identity transforms, (20) attention GRU, (150,100) GRU, 11 symbols
//   wide:    (50) dense tanh transforms, (20) attention GRU, (200,200) bi-GRU, 51 symbols
enum class RosterFamily { compact, wide };

inline ModelSpec audio_model(RosterFamily family, Architecture arch, std::size_t n_sensors, std::size_t feature_dim = 39,
                             GruVariant gru = GruVariant::reset_after) {
  ModelSpec m;
  m.architecture = arch;
  m.gru = gru;
  SensorSpec s;
  s.feature_dim = feature_dim;
  s.attention_units = arch == Architecture::stan ? 20 : 0;
  if (family == RosterFamily::compact) {
    m.classifier = {{150, 100}, false, 11};
  } else {
    s.transform = TransformKind::dense;
    s.transform_units = 50;
    m.classifier = {{200, 200}, true, 51};
  }
  m.sensors.assign(n_sensors, s);
  return m;
}

struct RosterEntry {
  std::string name;
  ModelSpec spec;
};

inline std::vector<RosterEntry> audio_roster(RosterFamily family, GruVariant gru = GruVariant::reset_after) {
  return {{"single-audio", audio_model(family, Architecture::single, 1, 39, gru)},
          {"double-audio-stan", audio_model(family, Architecture::stan, 2, 39, gru)},
          {"triple-audio-stan", audio_model(family, Architecture::stan, 3, 39, gru)},
          {"double-audio-concat", audio_model(family, Architecture::concat, 2, 39, gru)},
          {"triple-audio-concat", audio_model(family, Architecture::concat, 3, 39, gru)}};
}

}  // namespace stan
