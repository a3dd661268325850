// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <cstdint>
#include <vector>

#include "ems/common.hpp"

namespace ems {

enum class Domain : std::uint8_t { photo = 0, sketch = 1 };

/// A batch of feature vectors with class labels and photo/sketch tags.
/// Rows of `vectors` are samples.
struct EmbeddingBatch {
  Matrix vectors;               // N x D
  std::vector<int> labels;      // N, values in [0, K)
  std::vector<Domain> domains;  // N

  Index size() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }

  // Structural consistency; holds even for the empty batch.
  void check_consistent() const {
    require(static_cast<Index>(labels.size()) == vectors.rows(),
            "EmbeddingBatch: label count does not match row count");
    require(static_cast<Index>(domains.size()) == vectors.rows(),
            "EmbeddingBatch: domain count does not match row count");
    require_finite(vectors, "EmbeddingBatch vectors");
  }

  // Full loss-facing invariants: nonempty, labels within [0, K).
  void check_for_loss(Index num_classes) const {
    check_consistent();
    require(size() >= 1 && dim() >= 1, "EmbeddingBatch: need N >= 1, D >= 1");
    for (int label : labels)
      require(label >= 0 && label < num_classes,
              "EmbeddingBatch: label out of range");
  }
};

/// The K trainable class centers c_j, one row per class.
struct PrototypeSet {
  Matrix centers;  // K x D

  Index num_classes() const { return centers.rows(); }
  Index dim() const { return centers.cols(); }

  void check() const {
    require(centers.rows() >= 1 && centers.cols() >= 1,
            "PrototypeSet: need K >= 1, D >= 1");
    require_finite(centers, "PrototypeSet centers");
  }
};

/// Per-class weight rows W_j and biases b_j for the classifier losses.
struct ClassifierWeights {
  Matrix weights;  // K x D
  Vector biases;   // K

  Index num_classes() const { return weights.rows(); }
  Index dim() const { return weights.cols(); }

  void check() const {
    require(weights.rows() >= 1 && weights.cols() >= 1,
            "ClassifierWeights: need K >= 1, D >= 1");
    require(biases.size() == weights.rows(),
            "ClassifierWeights: bias count does not match weight rows");
    require_finite(weights, "ClassifierWeights weights");
    require_finite(biases, "ClassifierWeights biases");
  }
};

/// Scalar loss plus exact analytic gradients. For the prototype losses
/// `grad_centers` holds d loss / d c_j; for the classifier losses it holds
/// d loss / d W_j and `grad_biases` is populated. `probs` carries the
/// posterior implied by the loss (rows sum to one).
struct LossResult {
  double loss = 0.0;
  Matrix grad_embeddings;  // N x D
  Matrix grad_centers;     // K x D
  Vector grad_biases;      // K (zero-size when the loss has no biases)
  Matrix probs;            // N x K
};

}  // namespace ems
