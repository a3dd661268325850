// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <functional>

#include "ems/losses.hpp"

namespace ems {

/// One fully specified loss evaluation: batch plus whichever parameter set
/// the loss consumes.
struct LossInstance {
  LossId id = LossId::ems;
  EmbeddingBatch batch;
  PrototypeSet protos;        // prototype losses
  ClassifierWeights weights;  // classifier losses
  AngularParams angular;      // angular losses
  double margin = 4.0;        // EMS family
};

inline LossResult evaluate_loss(const LossInstance& inst) {
  switch (inst.id) {
    case LossId::softmax: return softmax_loss(inst.batch, inst.weights);
    case LossId::ems: return ems_loss(inst.batch, inst.protos, inst.margin);
    case LossId::squared_ems:
      return squared_ems_loss(inst.batch, inst.protos, inst.margin);
    case LossId::prototypical:
      return prototypical_loss(inst.batch, inst.protos);
    case LossId::a_softmax:
    case LossId::lmcl:
      return angular_margin_loss(inst.batch, inst.weights, inst.angular);
  }
  throw std::logic_error("evaluate_loss: bad id");
}

namespace detail {

inline Vector pack_instance(const LossInstance& inst) {
  const bool proto = is_prototype_loss(inst.id);
  const Matrix& params = proto ? inst.protos.centers : inst.weights.weights;
  const Index nb = inst.id == LossId::softmax ? inst.weights.biases.size() : 0;
  Vector v(inst.batch.vectors.size() + params.size() + nb);
  Index at = 0;
  for (Index i = 0; i < inst.batch.vectors.size(); ++i)
    v[at++] = inst.batch.vectors.data()[i];
  for (Index i = 0; i < params.size(); ++i) v[at++] = params.data()[i];
  for (Index i = 0; i < nb; ++i) v[at++] = inst.weights.biases[i];
  return v;
}

inline void unpack_instance(const Vector& v, LossInstance& inst) {
  const bool proto = is_prototype_loss(inst.id);
  Matrix& params = proto ? inst.protos.centers : inst.weights.weights;
  Index at = 0;
  for (Index i = 0; i < inst.batch.vectors.size(); ++i)
    inst.batch.vectors.data()[i] = v[at++];
  for (Index i = 0; i < params.size(); ++i) params.data()[i] = v[at++];
  if (inst.id == LossId::softmax)
    for (Index i = 0; i < inst.weights.biases.size(); ++i)
      inst.weights.biases[i] = v[at++];
}

inline Vector pack_gradients(const LossInstance& inst, const LossResult& r) {
  const Index nb = inst.id == LossId::softmax ? r.grad_biases.size() : 0;
  Vector g(r.grad_embeddings.size() + r.grad_centers.size() + nb);
  Index at = 0;
  for (Index i = 0; i < r.grad_embeddings.size(); ++i)
    g[at++] = r.grad_embeddings.data()[i];
  for (Index i = 0; i < r.grad_centers.size(); ++i)
    g[at++] = r.grad_centers.data()[i];
  for (Index i = 0; i < nb; ++i) g[at++] = r.grad_biases[i];
  return g;
}

}  // namespace detail

/// Worst relative error between an analytic gradient and central finite
/// differences of `f` around `x0`. Entries where both sides are below 1e-12
/// count as exact.
inline double max_relative_error(
    const std::function<double(const Vector&)>& f, const Vector& x0,
    const Vector& analytic, double h) {
  require(analytic.size() == x0.size(),
          "max_relative_error: gradient size mismatch");
  double worst = 0.0;
  Vector x = x0;
  for (Index i = 0; i < x0.size(); ++i) {
    x[i] = x0[i] + h;
    const double up = f(x);
    x[i] = x0[i] - h;
    const double down = f(x);
    x[i] = x0[i];
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double mag = std::max(std::abs(a), std::abs(numeric));
    if (mag < 1e-12) continue;
    worst = std::max(worst, std::abs(a - numeric) / mag);
  }
  return worst;
}

/// Central-difference check of every parameter of a loss instance.
/// Returns the worst relative error.
inline double grad_check(const LossInstance& inst, double h = 1e-6) {
  const Vector x0 = detail::pack_instance(inst);
  const LossResult at0 = evaluate_loss(inst);
  const Vector analytic = detail::pack_gradients(inst, at0);
  LossInstance scratch = inst;
  auto f = [&scratch](const Vector& v) {
    detail::unpack_instance(v, scratch);
    return evaluate_loss(scratch).loss;
  };
  return max_relative_error(f, x0, analytic, h);
}

/// Seeded random instance for a loss. For A-Softmax the draw is repeated
/// until every target angle sits at least `boundary_gap` away from each
/// breakpoint of the piecewise psi, where finite differences are meaningless.
inline LossInstance make_random_instance(LossId id, Index n, Index d, Index k,
                                         std::uint64_t seed,
                                         double margin = 4.0,
                                         double scale = 30.0,
                                         double boundary_gap = 2e-3) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 256; ++attempt) {
    LossInstance inst;
    inst.id = id;
    inst.margin = margin;
    inst.batch.vectors = rng.normal_matrix(n, d);
    inst.batch.labels.resize(static_cast<std::size_t>(n));
    inst.batch.domains.assign(static_cast<std::size_t>(n), Domain::photo);
    for (Index i = 0; i < n; ++i)
      inst.batch.labels[static_cast<std::size_t>(i)] =
          static_cast<int>(rng.integer(static_cast<std::uint64_t>(k)));
    if (is_prototype_loss(id)) {
      inst.protos.centers = rng.normal_matrix(k, d);
      return inst;
    }
    inst.weights.weights = rng.normal_matrix(k, d);
    inst.weights.biases = rng.normal_vector(k, 0.1);
    if (id == LossId::softmax) return inst;
    inst.angular.variant = id == LossId::a_softmax
                               ? AngularParams::Variant::a_softmax
                               : AngularParams::Variant::lmcl;
    inst.angular.margin = margin;
    inst.angular.scale = scale;
    if (id == LossId::lmcl) return inst;

    const int m = static_cast<int>(margin);
    bool clear = true;
    for (Index i = 0; i < n && clear; ++i) {
      const Vector x = inst.batch.vectors.row(i);
      const Vector wy = inst.weights.weights.row(inst.batch.labels[i]);
      const double c = wy.dot(x) / (wy.norm() * x.norm());
      const double theta = std::acos(std::clamp(c, -1.0, 1.0));
      for (int kk = 0; kk <= m; ++kk)
        if (std::abs(theta - kk * 3.14159265358979323846 / m) < boundary_gap)
          clear = false;
    }
    if (clear) return inst;
  }
  throw std::runtime_error(
      "make_random_instance: could not place a-softmax angles away from psi "
      "breakpoints");
}

}  // namespace ems
