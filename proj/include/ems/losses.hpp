// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "ems/data.hpp"

namespace ems {

// Stabilizer added under the square root so the distance gradient stays
// finite when an embedding sits exactly on a prototype. Applied uniformly
// in forward and backward.
inline constexpr double kNormEpsilon = 1e-12;

enum class LossId {
  softmax,
  ems,
  squared_ems,
  prototypical,
  a_softmax,
  lmcl,
};

inline const char* loss_name(LossId id) {
  switch (id) {
    case LossId::softmax: return "softmax";
    case LossId::ems: return "ems";
    case LossId::squared_ems: return "squared-ems";
    case LossId::prototypical: return "prototypical";
    case LossId::a_softmax: return "a-softmax";
    case LossId::lmcl: return "lmcl";
  }
  return "?";
}

inline LossId parse_loss(const std::string& name) {
  if (name == "softmax") return LossId::softmax;
  if (name == "ems") return LossId::ems;
  if (name == "squared-ems" || name == "squared_ems") return LossId::squared_ems;
  if (name == "prototypical") return LossId::prototypical;
  if (name == "a-softmax" || name == "a_softmax") return LossId::a_softmax;
  if (name == "lmcl") return LossId::lmcl;
  throw std::invalid_argument("unknown loss: " + name);
}

inline bool is_prototype_loss(LossId id) {
  return id == LossId::ems || id == LossId::squared_ems ||
         id == LossId::prototypical;
}

struct AngularParams {
  enum class Variant { a_softmax, lmcl };

  Variant variant = Variant::lmcl;
  double margin = 0.35;
  double scale = 30.0;  // LMCL only

  void check() const {
    if (variant == Variant::a_softmax) {
      require(margin >= 1.0 && margin == std::floor(margin),
              "AngularParams: a-softmax needs an integer margin m >= 1");
    } else {
      require(scale > 0.0, "AngularParams: LMCL needs scale s > 0");
      require(margin >= 0.0, "AngularParams: LMCL margin must be >= 0");
    }
  }
};

namespace detail {

// Row-wise softmax cross entropy over precomputed logits. Fills loss, probs
// and d loss / d logits (already averaged over the batch).
inline void softmax_xent(const Matrix& logits, const std::vector<int>& labels,
                         double& loss, Matrix& probs, Matrix& dlogits) {
  const Index n = logits.rows();
  const Index k = logits.cols();
  probs.resize(n, k);
  dlogits.resize(n, k);
  loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    probs.row(i) = e / z;
    loss += std::log(z) - (logits(i, labels[i]) - mx);
  }
  loss /= static_cast<double>(n);
  dlogits = probs;
  for (Index i = 0; i < n; ++i) dlogits(i, labels[i]) -= 1.0;
  dlogits /= static_cast<double>(n);
}

// Softmax over negative prototype distances, with the target-class distance
// multiplied by `margin`. Shared by the EMS family; `squared` switches the
// exponent from the stabilized norm to the plain squared norm.
inline LossResult distance_softmax_loss(const EmbeddingBatch& batch,
                                        const PrototypeSet& protos,
                                        double margin, bool squared) {
  protos.check();
  batch.check_for_loss(protos.num_classes());
  require(batch.dim() == protos.dim(),
          "loss: embedding and prototype dimensions differ");

  const Index n = batch.size();
  const Index k = protos.num_classes();

  // dist(i,j): squared distance, or the eps-stabilized norm.
  Matrix dist(n, k);
  std::vector<Matrix> diffs(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) {
    Matrix& diff = diffs[static_cast<std::size_t>(j)];
    diff = batch.vectors.rowwise() - protos.centers.row(j);
    dist.col(j) = diff.rowwise().squaredNorm();
    if (!squared)
      dist.col(j) = (dist.col(j).array() + kNormEpsilon).sqrt();
  }

  Matrix logits = -dist;
  for (Index i = 0; i < n; ++i) logits(i, batch.labels[i]) *= margin;

  LossResult out;
  Matrix dlogits;
  softmax_xent(logits, batch.labels, out.loss, out.probs, dlogits);

  // d logit / d dist is -1 off target, -m on target.
  Matrix ddist = -dlogits;
  for (Index i = 0; i < n; ++i) ddist(i, batch.labels[i]) *= margin;

  out.grad_embeddings = Matrix::Zero(n, batch.dim());
  out.grad_centers = Matrix::Zero(k, protos.dim());
  for (Index j = 0; j < k; ++j) {
    const Matrix& diff = diffs[static_cast<std::size_t>(j)];
    // d dist / d x_i is 2*diff for squared distance, diff/dist otherwise.
    Vector w = squared ? Vector(2.0 * ddist.col(j))
                       : Vector(ddist.col(j).array() / dist.col(j).array());
    Matrix contrib = diff.array().colwise() * w.array();
    out.grad_embeddings += contrib;
    out.grad_centers.row(j) -= contrib.colwise().sum();
  }
  out.grad_biases.resize(0);
  return out;
}

// Chebyshev polynomial of the second kind, U_{n}(x); sin((n+1)t)/sin(t).
inline double chebyshev_u(int n, double x) {
  if (n < 0) return 0.0;
  double prev = 1.0;  // U_0
  if (n == 0) return prev;
  double cur = 2.0 * x;  // U_1
  for (int i = 2; i <= n; ++i) {
    const double next = 2.0 * x * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

// psi(theta) = (-1)^k cos(m theta) - 2k on theta in [k pi/m, (k+1) pi/m],
// the monotone extension of cos(m theta) used by A-Softmax. Returns the
// value and its derivative with respect to cos(theta); the derivative
// m (-1)^k sin(m theta)/sin(theta) = m (-1)^k U_{m-1}(cos theta) is free of
// the sin(theta) singularity.
inline void asoftmax_psi(double cos_theta, int m, double& value,
                         double& dvalue_dcos) {
  const double c = std::clamp(cos_theta, -1.0, 1.0);
  const double theta = std::acos(c);
  const double pi = 3.14159265358979323846;
  int k = static_cast<int>(std::floor(theta * m / pi));
  k = std::clamp(k, 0, m - 1);
  const double sign = (k % 2 == 0) ? 1.0 : -1.0;
  value = sign * std::cos(m * theta) - 2.0 * k;
  dvalue_dcos = m * sign * chebyshev_u(m - 1, c);
}

}  // namespace detail

/// Plain softmax cross entropy over affine class activations
/// f_j = W_j . x + b_j.
inline LossResult softmax_loss(const EmbeddingBatch& batch,
                               const ClassifierWeights& w) {
  w.check();
  batch.check_for_loss(w.num_classes());
  require(batch.dim() == w.dim(),
          "softmax_loss: embedding and weight dimensions differ");

  Matrix logits = batch.vectors * w.weights.transpose();
  logits.rowwise() += w.biases.transpose();

  LossResult out;
  Matrix dlogits;
  detail::softmax_xent(logits, batch.labels, out.loss, out.probs, dlogits);
  out.grad_embeddings = dlogits * w.weights;
  out.grad_centers = dlogits.transpose() * batch.vectors;
  out.grad_biases = dlogits.colwise().sum();
  return out;
}

/// Euclidean Margin Softmax: softmax over negative Euclidean distances to
/// the class centers, with the target-class distance scaled by m (in both
/// the numerator and its denominator term).
inline LossResult ems_loss(const EmbeddingBatch& batch,
                           const PrototypeSet& protos, double margin) {
  require(margin >= 1.0, "ems_loss: margin must be >= 1");
  return detail::distance_softmax_loss(batch, protos, margin, false);
}

/// EMS with squared Euclidean distance in every exponent.
inline LossResult squared_ems_loss(const EmbeddingBatch& batch,
                                   const PrototypeSet& protos, double margin) {
  require(margin >= 1.0, "squared_ems_loss: margin must be >= 1");
  return detail::distance_softmax_loss(batch, protos, margin, true);
}

/// Prototypical loss: softmax over negative squared distances. Identical
/// expression to squared EMS at m = 1 and shares its code path.
inline LossResult prototypical_loss(const EmbeddingBatch& batch,
                                    const PrototypeSet& protos) {
  return detail::distance_softmax_loss(batch, protos, 1.0, true);
}

/// Per-sample class activations of the angular-margin losses. Weight rows
/// are normalized internally for the angle computation; the margin applies
/// only to the target class.
inline Vector angular_logits(const Vector& x, const ClassifierWeights& w,
                             int target, const AngularParams& p) {
  w.check();
  p.check();
  require(x.size() == w.dim(), "angular_logits: dimension mismatch");
  require(target >= 0 && target < w.num_classes(),
          "angular_logits: target out of range");
  require_finite(x, "angular_logits input");
  const double xn = x.norm();
  require(xn > 0.0, "angular_logits: zero-norm input");

  const Index k = w.num_classes();
  Vector logits(k);
  for (Index j = 0; j < k; ++j) {
    const double wn = w.weights.row(j).norm();
    require(wn > 0.0, "angular_logits: zero-norm weight row");
    const double cos_theta = w.weights.row(j).dot(x) / (wn * xn);
    if (p.variant == AngularParams::Variant::a_softmax) {
      if (j == target) {
        double psi, dpsi;
        detail::asoftmax_psi(cos_theta, static_cast<int>(p.margin), psi, dpsi);
        logits[j] = xn * psi;
      } else {
        logits[j] = xn * cos_theta;
      }
    } else {
      logits[j] = (j == target) ? p.scale * (cos_theta - p.margin)
                                : p.scale * cos_theta;
    }
  }
  return logits;
}

/// Softmax cross entropy over angular_logits with exact gradients for the
/// embeddings and weight rows. Biases take no part (their gradient is zero).
inline LossResult angular_margin_loss(const EmbeddingBatch& batch,
                                      const ClassifierWeights& w,
                                      const AngularParams& p) {
  w.check();
  p.check();
  batch.check_for_loss(w.num_classes());
  require(batch.dim() == w.dim(),
          "angular_margin_loss: dimension mismatch");

  const Index n = batch.size();
  const Index k = w.num_classes();
  const bool sphere = p.variant == AngularParams::Variant::a_softmax;
  const int m_int = sphere ? static_cast<int>(p.margin) : 0;

  Vector wnorm(k);
  Matrix unit_w(k, batch.dim());
  for (Index j = 0; j < k; ++j) {
    wnorm[j] = w.weights.row(j).norm();
    require(wnorm[j] > 0.0, "angular_margin_loss: zero-norm weight row");
    unit_w.row(j) = w.weights.row(j) / wnorm[j];
  }

  Matrix logits(n, k);
  Matrix cos_theta(n, k);
  Matrix dpsi(n, k);  // target-column psi'(cos) cache, a-softmax only
  Vector xnorm(n);
  for (Index i = 0; i < n; ++i) {
    xnorm[i] = batch.vectors.row(i).norm();
    require(xnorm[i] > 0.0, "angular_margin_loss: zero-norm input");
    const int y = batch.labels[i];
    for (Index j = 0; j < k; ++j) {
      const double c = unit_w.row(j).dot(batch.vectors.row(i)) / xnorm[i];
      cos_theta(i, j) = c;
      if (sphere) {
        if (j == y) {
          double psi, dp;
          detail::asoftmax_psi(c, m_int, psi, dp);
          logits(i, j) = xnorm[i] * psi;
          dpsi(i, j) = dp;
        } else {
          logits(i, j) = xnorm[i] * c;
        }
      } else {
        logits(i, j) = (j == y) ? p.scale * (c - p.margin) : p.scale * c;
      }
    }
  }

  LossResult out;
  Matrix dlogits;
  detail::softmax_xent(logits, batch.labels, out.loss, out.probs, dlogits);

  out.grad_embeddings = Matrix::Zero(n, batch.dim());
  out.grad_centers = Matrix::Zero(k, batch.dim());
  out.grad_biases = Vector::Zero(k);
  for (Index i = 0; i < n; ++i) {
    const int y = batch.labels[i];
    const Vector x = batch.vectors.row(i);
    const Vector xhat = x / xnorm[i];
    for (Index j = 0; j < k; ++j) {
      const double g = dlogits(i, j);
      if (g == 0.0) continue;
      const double c = cos_theta(i, j);
      const Vector uj = unit_w.row(j);
      const Vector dcos_dx = (uj - c * xhat) / xnorm[i];
      const Vector dcos_dw = (xhat - c * uj) / wnorm[j];
      if (sphere) {
        if (j == y) {
          double psi, dp;
          psi = logits(i, j) / xnorm[i];
          dp = dpsi(i, j);
          out.grad_embeddings.row(i) +=
              g * (psi * xhat + xnorm[i] * dp * dcos_dx);
          out.grad_centers.row(j) += g * xnorm[i] * dp * dcos_dw;
        } else {
          // f = |x| cos = x . u_j
          out.grad_embeddings.row(i) += g * uj;
          out.grad_centers.row(j) += g * xnorm[i] * dcos_dw;
        }
      } else {
        out.grad_embeddings.row(i) += g * p.scale * dcos_dx;
        out.grad_centers.row(j) += g * p.scale * dcos_dw;
      }
    }
  }
  return out;
}

}  // namespace ems
