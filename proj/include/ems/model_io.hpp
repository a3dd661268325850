// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "ems/encoder.hpp"
#include "ems/geometry.hpp"
#include "ems/losses.hpp"
#include "ems/retrieval.hpp"

namespace ems {

using Json = nlohmann::json;

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
  // Row-major flattening.
  Json values = Json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) values.push_back(m(r, c));
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"values", values}};
}

inline Matrix matrix_from_json(const Json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto& values = j.at("values");
  require(static_cast<Index>(values.size()) == rows * cols,
          "model file: matrix value count mismatch");
  Matrix m(rows, cols);
  std::size_t at = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = values[at++].get<double>();
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json values = Json::array();
  for (Index i = 0; i < v.size(); ++i) values.push_back(v[i]);
  return values;
}

inline Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i)
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

}  // namespace detail

/// Everything needed to resume or evaluate a trained run: the encoder, the
/// class parameters and the loss configuration.
struct Model {
  EncoderParams encoder;
  PrototypeSet prototypes;
  Vector biases;
  LossId loss = LossId::ems;
  double margin = 4.0;
  double scale = 30.0;
  int squeeze_ratio = 4;
  std::uint64_t seed = 0;
};

inline void save_model(const std::string& path, const Model& model) {
  Json j;
  j["format"] = "margin-metric-model";
  j["version"] = 1;
  j["loss"] = loss_name(model.loss);
  j["margin"] = model.margin;
  j["scale"] = model.scale;
  j["squeeze_ratio"] = model.squeeze_ratio;
  j["seed"] = model.seed;
  j["layer_dims"] = model.encoder.layer_dims();
  Json layers = Json::array();
  for (const auto& l : model.encoder.layers) {
    Json jl;
    jl["w"] = detail::matrix_to_json(l.w);
    jl["b"] = detail::vector_to_json(l.b);
    if (l.gate) {
      jl["gate"] = Json{{"squeeze_w", detail::matrix_to_json(l.gate->squeeze_w)},
                        {"squeeze_b", detail::vector_to_json(l.gate->squeeze_b)},
                        {"excite_w", detail::matrix_to_json(l.gate->excite_w)},
                        {"excite_b", detail::vector_to_json(l.gate->excite_b)}};
    }
    layers.push_back(std::move(jl));
  }
  j["layers"] = std::move(layers);
  j["prototypes"] = detail::matrix_to_json(model.prototypes.centers);
  j["biases"] = detail::vector_to_json(model.biases);

  std::ofstream out(path);
  require(out.good(), "save_model: cannot open " + path);
  out << j.dump(2) << '\n';
  require(out.good(), "save_model: write failed for " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_model: cannot open " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument("load_model: invalid JSON in " + path + ": " +
                                e.what());
  }
  require(j.value("format", "") == "margin-metric-model",
          "load_model: not a model file: " + path);

  Model model;
  model.loss = parse_loss(j.at("loss").get<std::string>());
  model.margin = j.at("margin").get<double>();
  model.scale = j.value("scale", 30.0);
  model.squeeze_ratio = j.value("squeeze_ratio", 4);
  model.seed = j.value("seed", std::uint64_t{0});
  for (const auto& jl : j.at("layers")) {
    LayerParams layer;
    layer.w = detail::matrix_from_json(jl.at("w"));
    layer.b = detail::vector_from_json(jl.at("b"));
    if (jl.contains("gate")) {
      CseGateParams gate;
      gate.squeeze_w = detail::matrix_from_json(jl.at("gate").at("squeeze_w"));
      gate.squeeze_b = detail::vector_from_json(jl.at("gate").at("squeeze_b"));
      gate.excite_w = detail::matrix_from_json(jl.at("gate").at("excite_w"));
      gate.excite_b = detail::vector_from_json(jl.at("gate").at("excite_b"));
      layer.gate = std::move(gate);
    }
    model.encoder.layers.push_back(std::move(layer));
  }
  model.prototypes.centers = detail::matrix_from_json(j.at("prototypes"));
  model.biases = detail::vector_from_json(j.at("biases"));
  model.encoder.check();
  return model;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline Json to_json(const RegionReport& report) {
  auto nan_to_null = [](double v) {
    return std::isfinite(v) ? Json(v) : Json(nullptr);
  };
  Json j;
  j["margin"] = report.margin;
  j["classes"] = report.num_classes;
  j["samples_used"] = report.samples_used;
  j["violations"] = report.violations;
  Json intra = Json::array();
  for (double v : report.max_intra) intra.push_back(nan_to_null(v));
  j["max_intra"] = std::move(intra);
  Json inter = Json::array();
  for (Index y = 0; y < report.num_classes; ++y) {
    Json row = Json::array();
    for (Index yp = 0; yp < report.num_classes; ++yp)
      row.push_back(nan_to_null(report.min_inter_at(y, yp)));
    inter.push_back(std::move(row));
  }
  j["min_inter"] = std::move(inter);
  j["samples_per_class"] = report.samples_per_class;
  return j;
}

inline Json to_json(const MetricsReport& report) {
  auto nan_to_null = [](double v) {
    return std::isfinite(v) ? Json(v) : Json(nullptr);
  };
  Json j;
  j["map"] = report.map;
  Json pk = Json::object();
  for (const auto& [k, v] : report.precision_at) pk[std::to_string(k)] = v;
  j["precision_at"] = std::move(pk);
  Json intra = Json::array();
  for (double v : report.distances.max_intra) intra.push_back(nan_to_null(v));
  Json inter = Json::array();
  for (double v : report.distances.min_inter_per_class)
    inter.push_back(nan_to_null(v));
  j["distance_table"] =
      Json{{"max_intra", std::move(intra)}, {"min_inter", std::move(inter)}};
  j["separation_holds"] = report.distances.separation_holds;
  return j;
}

}  // namespace ems
