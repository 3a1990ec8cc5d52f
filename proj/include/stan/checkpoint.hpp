// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <type_traits>

#include <json.hpp>

#include "stan/io.hpp"
#include "stan/model.hpp"

namespace stan {

// On-disk layout: <dir>/manifest.json + <dir>/tensors.bin. Tensors are stored
// little-endian in manifest order.
struct CheckpointMeta {
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();
  std::string config_hash;
};

template <typename Real>
struct LoadedCheckpoint {
  StanModel<Real> model;
  CheckpointMeta meta;
};

template <typename Real>
constexpr const char* precision_name() {
  return std::is_same_v<Real, double> ? "f64" : "f32";
}

template <typename Real>
void save_checkpoint(const fs::path& dir, const StanModel<Real>& model, const CheckpointMeta& meta = {}) {
  ByteWriter blob;
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  for (const auto& e : model.params.entries()) {
    index.push_back({{"name", e.name},
                     {"shape", e.value.shape()},
                     {"offset", blob.bytes().size()},
                     {"precision", precision_name<Real>()}});
    for (Real v : e.value.values()) {
      if constexpr (std::is_same_v<Real, double>)
        blob.f64(v);
      else
        blob.f32(v);
    }
  }
  const Bytes bytes = blob.take();
  nlohmann::ordered_json j;
  j["format"] = "stan-checkpoint";
  j["version"] = 1;
  j["model"] = nlohmann::ordered_json(nlohmann::json(model.spec));
  j["parameter_count"] = model.params.total_size();
  j["tensors"] = index;
  j["tensors_bytes"] = bytes.size();
  j["tensors_fnv1a"] = hex64(fnv1a(bytes.data(), bytes.size()));
  j["config_hash"] = meta.config_hash;
  j["metrics"] = meta.metrics;
  j["provenance"] = meta.provenance;
  fs::create_directories(dir);
  write_file_atomic(dir / "tensors.bin", bytes);
  write_json_atomic(dir / "manifest.json", j);
}

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(mpath));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, mpath.string() + ": " + e.what());
  }
  if (j.value("format", std::string()) != "stan-checkpoint") fail(ErrorKind::format, mpath.string() + ": not a checkpoint");
  if (j.value("version", 0) != 1) fail(ErrorKind::format, mpath.string() + ": unsupported checkpoint version");
  LoadedCheckpoint<Real> out;
  const Bytes bytes = read_file(dir / "tensors.bin");
  try {
    out.model.spec = j.at("model").get<ModelSpec>();
    if (bytes.size() != j.at("tensors_bytes").get<std::size_t>())
      fail(ErrorKind::format, dir.string() + ": tensors.bin size does not match the manifest");
    out.meta.metrics = j.value("metrics", nlohmann::ordered_json::object());
    out.meta.provenance = j.value("provenance", nlohmann::ordered_json::object());
    out.meta.config_hash = j.value("config_hash", std::string());
    for (const auto& t : j.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const std::string precision = t.at("precision").get<std::string>();
      require(precision == "f32" || precision == "f64", ErrorKind::format, "unknown tensor precision '" + precision + "'");
      const std::size_t width = precision == "f64" ? 8 : 4;
      Tensor<Real> tensor(shape);
      require(offset <= bytes.size() && (bytes.size() - offset) / width >= tensor.size(), ErrorKind::format,
              "tensor '" + t.at("name").get<std::string>() + "' runs past the end of tensors.bin");
      ByteReader r(bytes.data() + offset, bytes.size() - offset, "tensors.bin");
      for (auto& v : tensor.values()) v = static_cast<Real>(width == 8 ? r.f64() : static_cast<double>(r.f32()));
      out.model.params.add(t.at("name").get<std::string>(), std::move(tensor));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, mpath.string() + ": " + e.what());
  }
  // The stored tree must match the layout its spec implies.
  const auto specs = ModelLayout(out.model.spec).param_specs();
  require(specs.size() == out.model.params.entries().size(), ErrorKind::format,
          dir.string() + ": tensor list does not match the model spec");
  for (const auto& s : specs) {
    require(out.model.params.contains(s.name), ErrorKind::format, dir.string() + ": missing tensor '" + s.name + "'");
    require(out.model.params.value(s.name).shape() == s.shape, ErrorKind::format,
            dir.string() + ": tensor '" + s.name + "' has shape " + shape_string(out.model.params.value(s.name).shape()) +
                ", spec implies " + shape_string(s.shape));
  }
  return out;
}

// Classifier input dimension of a model, i.e. the merged feature width.
inline std::size_t classifier_input_dim(const ModelSpec& spec) { return spec.merged_dim(); }

// New model whose sensor.* tensors come from `front` and classifier.* tensors
// from `body`. No tensor is modified.
template <typename Real>
StanModel<Real> graft(const StanModel<Real>& front, const StanModel<Real>& body) {
  const std::size_t out_dim = front.spec.merged_dim();
  const std::size_t in_dim = classifier_input_dim(body.spec);
  if (out_dim != in_dim)
    fail(ErrorKind::graft, "graft: front-end emits " + std::to_string(out_dim) +
                               "-dimensional merged features but the classification stage expects " +
                               std::to_string(in_dim));
  StanModel<Real> out;
  out.spec = front.spec;
  out.spec.classifier = body.spec.classifier;
  out.spec.gru = body.spec.gru;
  for (const auto& s : front.spec.sensors)
    require(s.attention_units == 0 || front.spec.gru == body.spec.gru, ErrorKind::graft,
            "graft: front-end and body use different GRU conventions");
  for (const auto& e : front.params.entries())
    if (e.name.starts_with("sensor.")) out.params.add(e.name, e.value);
  for (const auto& e : body.params.entries())
    if (e.name.starts_with("classifier.")) out.params.add(e.name, e.value);
  const auto specs = ModelLayout(out.spec).param_specs();
  require(specs.size() == out.params.entries().size(), ErrorKind::graft, "graft: parameter sets do not compose");
  return out;
}

}  // namespace stan
