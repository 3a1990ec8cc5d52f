// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stan/corpus.hpp"
#include "stan/io.hpp"
#include "stan/model.hpp"
#include "stan/noise.hpp"
#include "stan/train.hpp"

namespace stan {

// ---------------------------------------------------------------------------
// JSON forms of the noise and training types

inline void to_json(nlohmann::json& j, const WalkConfig& w) {
  j = {{"sigma_max", w.sigma_max}, {"gamma_shape", w.gamma_shape}, {"gamma_scale", w.gamma_scale}};
}

inline void from_json(const nlohmann::json& j, WalkConfig& w) {
  const double sigma_max = j.value("sigma_max", 3.0);
  w = WalkConfig::with_sigma_max(sigma_max, j.value("gamma_shape", 0.8), j.value("gamma_scale", 0.2));
}

inline void to_json(nlohmann::json& j, const NoiseProfileSpec& p) {
  j = {{"kind", to_string(p.kind)}, {"sigma_max", p.sigma_max}};
  switch (p.kind) {
    case NoiseKind::linear_sweep: j.update({{"start", p.start}, {"end", p.end}}); break;
    case NoiseKind::burst:
      j.update({{"onset", p.onset}, {"duration", p.duration}, {"level", p.level}, {"base", p.base}});
      break;
    case NoiseKind::sinusoid:
      j.update({{"amplitude", p.amplitude}, {"offset", p.offset}, {"period", p.period}, {"phase", p.phase}});
      break;
    case NoiseKind::constant: j["level"] = p.level; break;
    case NoiseKind::random_walk: break;
  }
}

inline void from_json(const nlohmann::json& j, NoiseProfileSpec& p) {
  p = NoiseProfileSpec{};
  p.kind = noise_kind_from_string(j.at("kind").get<std::string>());
  p.sigma_max = j.value("sigma_max", p.sigma_max);
  p.start = j.value("start", p.start);
  p.end = j.value("end", p.end);
  p.onset = j.value("onset", p.onset);
  p.duration = j.value("duration", p.duration);
  p.level = j.value("level", p.level);
  p.base = j.value("base", p.base);
  p.amplitude = j.value("amplitude", p.amplitude);
  p.offset = j.value("offset", p.offset);
  p.period = j.value("period", p.period);
  p.phase = j.value("phase", p.phase);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"batch_size", c.batch_size},
       {"validation_fraction", c.validation_fraction},
       {"clip_norm", c.clip_norm},
       {"max_train_samples", c.max_train_samples},
       {"adam", c.adam},
       {"noise", {{"enabled", c.noise.enabled}, {"walk", c.noise.walk}}}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.max_train_samples = j.value("max_train_samples", c.max_train_samples);
  if (j.contains("adam")) c.adam = j.at("adam").get<AdamConfig>();
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    c.noise.enabled = n.value("enabled", true);
    if (n.contains("walk")) c.noise.walk = n.at("walk").get<WalkConfig>();
  }
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct EvalSettings {
  ConditionKind condition = ConditionKind::clean;
  WalkConfig walk;
  std::vector<NoiseProfileSpec> profiles;
  std::size_t batch_size = 32;
  std::size_t copies = 0;
};

struct PreviewSettings {
  NoiseProfileSpec profile;
  std::size_t length = 200;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  SyntheticTaskSpec corpus;
  ModelSpec model;
  TrainConfig train;
  EvalSettings eval;
  PreviewSettings preview;
};

inline ModelSpec default_model_spec() {
  ModelSpec m;
  m.architecture = Architecture::stan;
  SensorSpec s;
  s.feature_dim = 39;
  s.attention_units = 10;
  m.sensors.assign(2, s);
  m.classifier = {{64}, false, 11};
  return m;
}

inline nlohmann::json to_json_tree(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["corpus"] = c.corpus;
  j["model"] = c.model;
  j["train"] = c.train;
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : c.eval.profiles) profiles.push_back(p);
  j["eval"] = {{"condition", to_string(c.eval.condition)},
               {"walk", c.eval.walk},
               {"profiles", profiles},
               {"batch_size", c.eval.batch_size},
               {"copies", c.eval.copies}};
  j["preview"] = {{"profile", c.preview.profile}, {"length", c.preview.length}};
  return j;
}

inline ExperimentConfig from_json_tree(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("corpus")) c.corpus = j.at("corpus").get<SyntheticTaskSpec>();
    c.model = j.contains("model") ? j.at("model").get<ModelSpec>() : default_model_spec();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval.condition = condition_from_string(e.value("condition", std::string("clean")));
      if (e.contains("walk")) c.eval.walk = e.at("walk").get<WalkConfig>();
      if (e.contains("profiles")) c.eval.profiles = e.at("profiles").get<std::vector<NoiseProfileSpec>>();
      c.eval.batch_size = e.value("batch_size", c.eval.batch_size);
      c.eval.copies = e.value("copies", c.eval.copies);
    }
    if (j.contains("preview")) {
      const auto& p = j.at("preview");
      if (p.contains("profile")) c.preview.profile = p.at("profile").get<NoiseProfileSpec>();
      c.preview.length = p.value("length", c.preview.length);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("config: ") + e.what());
  }
  c.train.seed = c.seed;
  c.corpus.validate();
  c.model.validate();
  c.train.validate();
  require(c.eval.batch_size >= 1, ErrorKind::config, "config: eval.batch_size must be >= 1");
  return c;
}

inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.model = default_model_spec();
  c.train.max_epochs = 40;
  c.preview.profile.kind = NoiseKind::random_walk;
  return c;
}

namespace detail {

// Every key of `given` must also appear in `known` (objects compared
// recursively; arrays and scalars are leaves).
inline void check_known_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
  if (!given.is_object() || !known.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    // model specs accept a shorthand "sensor" template and free-form sensor lists
    if (path == "model" && (key == "sensor" || key == "sensors")) continue;
    if (!known.contains(key)) fail(ErrorKind::config, "config: unknown key '" + here + "'");
    check_known_keys(value, known.at(key), here);
  }
}

// Values must keep the JSON type of the default they replace.
inline void check_types(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
  if (known.is_object() && given.is_object()) {
    for (const auto& [key, value] : given.items())
      if (known.contains(key)) check_types(value, known.at(key), path.empty() ? key : path + "." + key);
    return;
  }
  if (known.is_array() && given.is_array()) {
    if (!known.empty())
      for (std::size_t i = 0; i < given.size(); ++i) check_types(given[i], known[0], path + "." + std::to_string(i));
    return;
  }
  if (path == "model.sensors" && given.is_number_unsigned()) return;  // sensor-count shorthand
  const auto bad = [&](const char* want) { fail(ErrorKind::config, "config: '" + path + "' must be " + want); };
  if (known.is_number_unsigned() && !given.is_number_unsigned()) bad("a non-negative integer");
  if (known.is_number_float() && !given.is_number()) bad("a number");
  if (known.is_boolean() && !given.is_boolean()) bad("true or false");
  if (known.is_string() && !given.is_string()) bad("a string");
  if (known.is_array() && !given.is_array()) bad("a list");
  if (known.is_object() && !given.is_object()) bad("an object");
}

inline nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

}  // namespace detail

// Applies "a.b.c=value" to a JSON tree. The value is parsed as JSON when
// possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::config, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  nlohmann::json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), ErrorKind::config, "override key '" + key + "' has an empty component");
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(part);
      } catch (const std::exception&) {
        fail(ErrorKind::config, "override key '" + key + "': '" + part + "' is not an array index");
      }
      require(idx < node->size(), ErrorKind::config, "override key '" + key + "': index out of range");
      node = &(*node)[idx];
    } else {
      require(node->is_object() || node->is_null(), ErrorKind::config, "override key '" + key + "' descends into a scalar");
      node = &(*node)[part];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = detail::parse_override_value(assignment.substr(eq + 1));
}

struct ResolvedConfig {
  ExperimentConfig config;
  nlohmann::json tree;  // fully resolved, explicit form
  std::string hash;     // FNV-1a of the compact resolved tree
};

// Defaults, then the file (JSON, comments allowed), then overrides.
inline ResolvedConfig resolve_config(const std::string& text, const std::vector<std::string>& overrides) {
  nlohmann::json tree = to_json_tree(default_config());
  if (!text.empty()) {
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(text, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, std::string("config parse error: ") + e.what());
    }
    require(file.is_object(), ErrorKind::config, "config root must be an object");
    detail::check_known_keys(file, tree, "");
    // the model section replaces the default model as a whole
    if (file.contains("model")) tree["model"] = file["model"];
    file.erase("model");
    tree.merge_patch(file);
  }
  for (const auto& o : overrides) {
    nlohmann::json probe = nlohmann::json::object();
    apply_override(probe, o);
    detail::check_known_keys(probe, tree, "");
    apply_override(tree, o);
  }
  detail::check_types(tree, to_json_tree(default_config()), "");
  ResolvedConfig out;
  out.config = from_json_tree(tree);
  out.tree = to_json_tree(out.config);
  out.hash = hex64(fnv1a(out.tree.dump()));
  return out;
}

inline ResolvedConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  return resolve_config(path.empty() ? std::string() : read_text(path), overrides);
}

}  // namespace stan
