// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>

#include "ems/encoder.hpp"
#include "ems/losses.hpp"

namespace ems {

/// base_lr * (1 - step/total_steps); exactly 0 at the final step.
inline double lr_schedule(long step, long total_steps, double base_lr) {
  require(total_steps >= 1, "lr_schedule: total_steps must be >= 1");
  require(step >= 0 && step <= total_steps,
          "lr_schedule: step out of [0, total_steps]");
  return base_lr * (1.0 - static_cast<double>(step) /
                              static_cast<double>(total_steps));
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // classic L2, added to the gradient
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;

  explicit AdamState(Index n) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

/// Bias-corrected Adam update in place. The L2 term enters the gradient
/// before moment accumulation.
inline void adam_step(Vector& params, const Vector& grads, AdamState& state,
                      const AdamConfig& cfg) {
  require(params.size() == grads.size() && params.size() == state.m.size(),
          "adam_step: shape mismatch");
  require_finite(grads, "adam gradients");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  Vector g = grads;
  if (cfg.weight_decay != 0.0) g += cfg.weight_decay * params;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  params.array() -= cfg.lr * (state.m.array() / bc1) /
                    ((state.v.array() / bc2).sqrt() + cfg.eps);
}

enum class ProtoMode { parameter, batch_mean };

struct TrainConfig {
  LossId loss = LossId::ems;
  double margin = 4.0;
  double scale = 30.0;  // LMCL

  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0005;
  double base_lr = 3e-3;
  long steps = 5000;
  int batch_size = 16;
  std::uint64_t seed = 0;
  ProtoMode proto_mode = ProtoMode::parameter;

  std::vector<int> hidden_dims = {32, 32};
  int embed_dim = 16;
  int squeeze_ratio = 4;

  void check() const {
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0,
            "TrainConfig: betas must lie in (0, 1)");
    require(base_lr > 0.0, "TrainConfig: lr must be > 0");
    require(batch_size >= 1, "TrainConfig: batch size must be >= 1");
    require(steps >= 0, "TrainConfig: steps must be >= 0");
    require(embed_dim >= 1, "TrainConfig: embed_dim must be >= 1");
    if (loss == LossId::ems || loss == LossId::squared_ems)
      require(margin >= 1.0, "TrainConfig: EMS margin must be >= 1");
    if (loss == LossId::a_softmax) {
      AngularParams p{AngularParams::Variant::a_softmax, margin, scale};
      p.check();
    }
    if (loss == LossId::lmcl) {
      AngularParams p{AngularParams::Variant::lmcl, margin, scale};
      p.check();
    }
  }
};

struct TrainLogEntry {
  long step;
  double lr;
  double loss;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
};

struct TrainResult {
  EncoderParams encoder;
  PrototypeSet prototypes;  // class weight rows for the classifier losses
  Vector biases;            // softmax only; zero otherwise
  TrainLog log;
};

inline void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  require(out.good(), "cannot open log file " + path);
  out << "step,lr,loss\n";
  out << std::setprecision(17);
  for (const auto& e : log.entries)
    out << e.step << ',' << e.lr << ',' << e.loss << '\n';
}

/// Joint mini-batch optimization of the encoder and the class parameters.
/// Prototypes are ordinary Adam parameters (exempt from weight decay); in
/// batch-mean mode they are tracked as running class means instead.
inline TrainResult train(const EmbeddingBatch& dataset,
                         const TrainConfig& cfg) {
  cfg.check();
  dataset.check_consistent();
  require(dataset.size() >= 1, "train: dataset is empty");
  int num_classes = 0;
  for (int label : dataset.labels) {
    require(label >= 0, "train: negative label");
    num_classes = std::max(num_classes, label + 1);
  }
  {
    std::vector<long> counts(static_cast<std::size_t>(num_classes), 0);
    for (int label : dataset.labels) counts[static_cast<std::size_t>(label)]++;
    for (long c : counts)
      require(c > 0, "train: every class in [0, K) must be present");
  }

  std::vector<int> dims;
  dims.push_back(static_cast<int>(dataset.dim()));
  for (int h : cfg.hidden_dims) dims.push_back(h);
  dims.push_back(cfg.embed_dim);

  TrainResult result;
  result.encoder = init_params(dims, cfg.squeeze_ratio, cfg.seed);
  Rng rng(cfg.seed + 1);
  result.prototypes.centers = rng.normal_matrix(
      num_classes, cfg.embed_dim, 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)));
  result.biases = Vector::Zero(num_classes);

  const bool proto_loss = is_prototype_loss(cfg.loss);
  const bool batch_mean =
      proto_loss && cfg.proto_mode == ProtoMode::batch_mean;

  Vector enc_flat = pack(result.encoder);
  AdamState enc_state(enc_flat.size());
  AdamConfig enc_adam{cfg.base_lr, cfg.beta1, cfg.beta2, 1e-8,
                      cfg.weight_decay};

  const Index class_param_count =
      result.prototypes.centers.size() +
      (cfg.loss == LossId::softmax ? num_classes : 0);
  AdamState class_state(class_param_count);
  AdamConfig class_adam = enc_adam;
  if (proto_loss) class_adam.weight_decay = 0.0;

  std::vector<double> mean_counts(static_cast<std::size_t>(num_classes), 0.0);

  AngularParams angular;
  angular.variant = cfg.loss == LossId::a_softmax
                        ? AngularParams::Variant::a_softmax
                        : AngularParams::Variant::lmcl;
  angular.margin = cfg.margin;
  angular.scale = cfg.scale;

  Rng sampler(cfg.seed + 2);
  const auto n = static_cast<std::uint64_t>(dataset.size());

  for (long step = 0; step < cfg.steps; ++step) {
    const double lr = lr_schedule(step, cfg.steps, cfg.base_lr);

    EmbeddingBatch batch;
    batch.vectors.resize(cfg.batch_size, dataset.dim());
    batch.labels.resize(static_cast<std::size_t>(cfg.batch_size));
    batch.domains.resize(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto pick = static_cast<Index>(sampler.integer(n));
      batch.vectors.row(b) = dataset.vectors.row(pick);
      batch.labels[static_cast<std::size_t>(b)] =
          dataset.labels[static_cast<std::size_t>(pick)];
      batch.domains[static_cast<std::size_t>(b)] =
          dataset.domains[static_cast<std::size_t>(pick)];
    }

    auto [embeddings, trace] =
        forward(result.encoder, batch.vectors, batch.domains);
    if (!embeddings.allFinite()) {
      std::ostringstream msg;
      msg << "train: embeddings diverged (non-finite) at step " << step;
      throw std::runtime_error(msg.str());
    }
    EmbeddingBatch emb_batch{std::move(embeddings), batch.labels,
                             batch.domains};

    LossResult loss;
    switch (cfg.loss) {
      case LossId::softmax:
        loss = softmax_loss(emb_batch,
                            {result.prototypes.centers, result.biases});
        break;
      case LossId::ems:
        loss = ems_loss(emb_batch, result.prototypes, cfg.margin);
        break;
      case LossId::squared_ems:
        loss = squared_ems_loss(emb_batch, result.prototypes, cfg.margin);
        break;
      case LossId::prototypical:
        loss = prototypical_loss(emb_batch, result.prototypes);
        break;
      case LossId::a_softmax:
      case LossId::lmcl:
        loss = angular_margin_loss(
            emb_batch, {result.prototypes.centers, result.biases}, angular);
        break;
    }
    if (!std::isfinite(loss.loss)) {
      std::ostringstream msg;
      msg << "train: loss diverged (non-finite) at step " << step;
      throw std::runtime_error(msg.str());
    }

    EncoderBackwardResult enc_grads = backward(trace, loss.grad_embeddings);

    enc_adam.lr = lr;
    Vector enc_grad_flat = pack(enc_grads.param_grads);
    adam_step(enc_flat, enc_grad_flat, enc_state, enc_adam);
    unpack(enc_flat, result.encoder);

    if (batch_mean) {
      // Running class means over every embedding seen so far.
      for (int b = 0; b < cfg.batch_size; ++b) {
        const int y = batch.labels[static_cast<std::size_t>(b)];
        double& cnt = mean_counts[static_cast<std::size_t>(y)];
        cnt += 1.0;
        result.prototypes.centers.row(y) +=
            (emb_batch.vectors.row(b) - result.prototypes.centers.row(y)) / cnt;
      }
    } else {
      class_adam.lr = lr;
      Vector class_flat(class_param_count);
      Vector class_grad(class_param_count);
      Index at = 0;
      for (Index i = 0; i < result.prototypes.centers.size(); ++i) {
        class_flat[at] = result.prototypes.centers.data()[i];
        class_grad[at] = loss.grad_centers.data()[i];
        ++at;
      }
      if (cfg.loss == LossId::softmax)
        for (int j = 0; j < num_classes; ++j) {
          class_flat[at] = result.biases[j];
          class_grad[at] = loss.grad_biases[j];
          ++at;
        }
      adam_step(class_flat, class_grad, class_state, class_adam);
      at = 0;
      for (Index i = 0; i < result.prototypes.centers.size(); ++i)
        result.prototypes.centers.data()[i] = class_flat[at++];
      if (cfg.loss == LossId::softmax)
        for (int j = 0; j < num_classes; ++j) result.biases[j] = class_flat[at++];
    }

    result.log.entries.push_back({step, lr, loss.loss});
  }
  return result;
}

}  // namespace ems
