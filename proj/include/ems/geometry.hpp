// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "ems/data.hpp"

namespace ems {

/// Decision region R_{y,y'} = { x : m d(x,c_y) <= d(x,c_y') }, an n-ball
/// for m > 1.
struct BallRegion {
  Vector center;
  double radius = 0.0;

  bool contains(const Vector& x) const { return (x - center).norm() <= radius; }
};

inline void check_geometry_margin(double margin) {
  require(margin > 1.0,
          "geometry: margin must be > 1 (m <= 1 gives a half-space, not a "
          "ball)");
}

/// Closed form of the decision region: center c_y + (c_y - c_y')/(m^2 - 1),
/// radius m/(m^2 - 1) * |c_y - c_y'|.
inline BallRegion decision_ball(const Vector& c_y, const Vector& c_other,
                                double margin) {
  check_geometry_margin(margin);
  require(c_y.size() == c_other.size(), "decision_ball: dimension mismatch");
  require_finite(c_y, "decision_ball center");
  require_finite(c_other, "decision_ball center");
  const double dist = (c_y - c_other).norm();
  require(dist > 0.0, "decision_ball: coincident centers");
  const double denom = margin * margin - 1.0;
  BallRegion ball;
  ball.center = c_y + (c_y - c_other) / denom;
  ball.radius = margin / denom * dist;
  return ball;
}

/// Binary-case bounds: the maximum intra-class distance 2m/(m^2-1) * dist
/// (the ball diameter) and the minimum inter-class distance
/// (m^2-2m+1)/(m^2-1) * dist (center gap minus the diameter).
inline std::pair<double, double> binary_margin_bounds(double margin,
                                                      double dist) {
  check_geometry_margin(margin);
  require(dist > 0.0, "binary_margin_bounds: dist must be > 0");
  const double denom = margin * margin - 1.0;
  const double max_intra = 2.0 * margin / denom * dist;
  const double min_inter = (margin * margin - 2.0 * margin + 1.0) / denom * dist;
  return {max_intra, min_inter};
}

/// The smallest margin for which max intra-class distance never exceeds
/// min inter-class distance: the root of m^2 - 4m + 1 above 1.
inline double minimum_margin() { return 2.0 + std::sqrt(3.0); }

/// Samples a box enclosing the ball with 2x margin and counts points where
/// the defining inequality and the closed-form ball disagree, ignoring a
/// band of width `band` around both boundaries.
inline long verify_region_membership(const Vector& c_y, const Vector& c_other,
                                     double margin, long n_samples,
                                     std::uint64_t seed, double band = 1e-9) {
  require(n_samples >= 1, "verify_region_membership: need n_samples >= 1");
  const BallRegion ball = decision_ball(c_y, c_other, margin);
  const Index d = c_y.size();
  Rng rng(seed);
  long disagreements = 0;
  Vector x(d);
  for (long s = 0; s < n_samples; ++s) {
    for (Index i = 0; i < d; ++i)
      x[i] = ball.center[i] + rng.uniform(-2.0 * ball.radius, 2.0 * ball.radius);
    const double ineq = margin * (x - c_y).norm() - (x - c_other).norm();
    const double ballside = (x - ball.center).norm() - ball.radius;
    if (std::abs(ineq) <= band || std::abs(ballside) <= band) continue;
    if ((ineq <= 0.0) != (ballside <= 0.0)) ++disagreements;
  }
  return disagreements;
}

/// Ball containment check for margin growth: the region at margin m + eps
/// must sit inside the region at margin m.
inline bool verify_monotonicity(const Vector& c_y, const Vector& c_other,
                                double margin, double eps) {
  require(eps >= 0.0, "verify_monotonicity: eps must be >= 0");
  const BallRegion big = decision_ball(c_y, c_other, margin);
  const BallRegion small = decision_ball(c_y, c_other, margin + eps);
  return (big.center - small.center).norm() + small.radius <=
         big.radius + 1e-12;
}

/// Far-prototype condition |c_a - c_other| >= (m+1)/(m-1) |c_a - c_b|; when
/// it holds, the (c_a, c_other) region contains the (c_a, c_b) region.
inline bool region_containment_condition(const Vector& c_a, const Vector& c_b,
                             const Vector& c_other, double margin) {
  check_geometry_margin(margin);
  require(c_a.size() == c_b.size() && c_a.size() == c_other.size(),
          "region_containment_condition: dimension mismatch");
  return (c_a - c_other).norm() >=
         (margin + 1.0) / (margin - 1.0) * (c_a - c_b).norm();
}

/// Monte-Carlo estimates of the per-class max intra-class distance and
/// per-pair min inter-class distance over the regions R_y, with the count
/// of pairs violating max_intra(y) <= min_inter(y, y').
struct RegionReport {
  double margin = 0.0;
  Index num_classes = 0;
  // NaN marks a class whose region yielded fewer than two samples.
  std::vector<double> max_intra;
  // Row-major K x K, NaN on the diagonal and for under-sampled pairs.
  std::vector<double> min_inter;
  std::vector<long> samples_per_class;
  long samples_used = 0;
  long violations = 0;

  double min_inter_at(Index y, Index yp) const {
    return min_inter[static_cast<std::size_t>(y * num_classes + yp)];
  }
};

namespace detail {

// Uniform point inside a ball: normal direction, radius by u^(1/d).
inline Vector ball_point(Rng& rng, const BallRegion& ball) {
  const Index d = ball.center.size();
  Vector dir = rng.unit_vector(d);
  const double r =
      ball.radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
  return ball.center + r * dir;
}

// Streaming sketch of a convex sample cloud: extreme points along a fixed
// direction set plus a deterministic reservoir. Pairwise statistics over
// the sketch are tight for convex regions because diameter and separation
// are attained at directional extremes.
struct PointSketch {
  std::vector<Vector> dirs;
  std::vector<double> max_proj, min_proj;
  std::vector<Vector> argmax, argmin;
  std::vector<Vector> reservoir;
  std::size_t reservoir_cap = 2048;
  long count = 0;

  explicit PointSketch(std::vector<Vector> directions)
      : dirs(std::move(directions)),
        max_proj(dirs.size(), -std::numeric_limits<double>::infinity()),
        min_proj(dirs.size(), std::numeric_limits<double>::infinity()),
        argmax(dirs.size()),
        argmin(dirs.size()) {}

  void add(const Vector& x, Rng& rng) {
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      const double p = dirs[i].dot(x);
      if (p > max_proj[i]) {
        max_proj[i] = p;
        argmax[i] = x;
      }
      if (p < min_proj[i]) {
        min_proj[i] = p;
        argmin[i] = x;
      }
    }
    ++count;
    if (reservoir.size() < reservoir_cap) {
      reservoir.push_back(x);
    } else {
      const std::uint64_t slot =
          rng.integer(static_cast<std::uint64_t>(count));
      if (slot < reservoir_cap) reservoir[static_cast<std::size_t>(slot)] = x;
    }
  }

  std::vector<Vector> candidates() const {
    std::vector<Vector> pts = reservoir;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      if (std::isfinite(max_proj[i])) pts.push_back(argmax[i]);
      if (std::isfinite(min_proj[i])) pts.push_back(argmin[i]);
    }
    return pts;
  }
};

inline double max_pairwise(const std::vector<Vector>& pts) {
  double best = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      best = std::max(best, (pts[i] - pts[j]).norm());
  return best;
}

inline double min_cross(const std::vector<Vector>& a,
                        const std::vector<Vector>& b) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vector& x : a)
    for (const Vector& y : b) best = std::min(best, (x - y).norm());
  return best;
}

}  // namespace detail

/// Draws up to n_samples candidate points per class from the smallest
/// enclosing decision ball and keeps those inside the full intersection
/// R_y. Returns the accepted points per class.
inline std::vector<std::vector<Vector>> sample_regions(
    const PrototypeSet& protos, double margin, long n_samples,
    std::uint64_t seed) {
  protos.check();
  check_geometry_margin(margin);
  const Index k = protos.num_classes();
  require(k >= 2, "sample_regions: need K >= 2");
  require(n_samples >= 1, "sample_regions: need n_samples >= 1");

  std::vector<std::vector<Vector>> accepted(static_cast<std::size_t>(k));
  for (Index y = 0; y < k; ++y) {
    std::vector<BallRegion> balls;
    for (Index yp = 0; yp < k; ++yp) {
      if (yp == y) continue;
      balls.push_back(
          decision_ball(protos.centers.row(y), protos.centers.row(yp), margin));
    }
    std::size_t smallest = 0;
    for (std::size_t b = 1; b < balls.size(); ++b)
      if (balls[b].radius < balls[smallest].radius) smallest = b;

    Rng rng(seed + static_cast<std::uint64_t>(y) * 0x9e3779b97f4a7c15ull);
    auto& out = accepted[static_cast<std::size_t>(y)];
    for (long s = 0; s < n_samples; ++s) {
      Vector x = detail::ball_point(rng, balls[smallest]);
      bool inside = true;
      for (std::size_t b = 0; b < balls.size() && inside; ++b)
        if (b != smallest) inside = balls[b].contains(x);
      if (inside) out.push_back(std::move(x));
    }
  }
  return accepted;
}

/// Monte-Carlo check of the region-level separation property: estimates
/// max intra-class distance per region and min inter-class distance per
/// region pair, and counts violating pairs. The estimates shrink intra and
/// stretch inter, so a true property is never reported as violated.
inline RegionReport verify_region_separation(const PrototypeSet& protos, double margin,
                              long n_samples, std::uint64_t seed) {
  protos.check();
  check_geometry_margin(margin);
  const Index k = protos.num_classes();
  require(k >= 2, "verify_region_separation: need K >= 2");
  require(n_samples >= 1, "verify_region_separation: need n_samples >= 1");
  const Index d = protos.dim();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Direction set: coordinate axes, all center differences, plus random
  // fill. Center-difference directions align with the diameter/separation
  // extremes of the binary geometry.
  std::vector<Vector> dirs;
  for (Index i = 0; i < d; ++i) {
    Vector e = Vector::Zero(d);
    e[i] = 1.0;
    dirs.push_back(e);
  }
  for (Index a = 0; a < k; ++a)
    for (Index b = a + 1; b < k; ++b) {
      Vector diff = protos.centers.row(a) - protos.centers.row(b);
      if (diff.norm() > 0) dirs.push_back(diff.normalized());
    }
  Rng dir_rng(seed ^ 0xd1b54a32d192ed03ull);
  while (dirs.size() < static_cast<std::size_t>(d) + 64)
    dirs.push_back(dir_rng.unit_vector(d));

  std::vector<detail::PointSketch> sketches;
  sketches.reserve(static_cast<std::size_t>(k));
  for (Index y = 0; y < k; ++y) sketches.emplace_back(dirs);

  RegionReport report;
  report.margin = margin;
  report.num_classes = k;
  report.max_intra.assign(static_cast<std::size_t>(k), nan);
  report.min_inter.assign(static_cast<std::size_t>(k * k), nan);
  report.samples_per_class.assign(static_cast<std::size_t>(k), 0);

  for (Index y = 0; y < k; ++y) {
    std::vector<BallRegion> balls;
    for (Index yp = 0; yp < k; ++yp) {
      if (yp == y) continue;
      balls.push_back(
          decision_ball(protos.centers.row(y), protos.centers.row(yp), margin));
    }
    std::size_t smallest = 0;
    for (std::size_t b = 1; b < balls.size(); ++b)
      if (balls[b].radius < balls[smallest].radius) smallest = b;

    Rng rng(seed + static_cast<std::uint64_t>(y) * 0x9e3779b97f4a7c15ull);
    Rng reservoir_rng(seed ^ (0x2545f4914f6cdd1dull +
                              static_cast<std::uint64_t>(y)));
    auto& sketch = sketches[static_cast<std::size_t>(y)];
    for (long s = 0; s < n_samples; ++s) {
      Vector x = detail::ball_point(rng, balls[smallest]);
      bool inside = true;
      for (std::size_t b = 0; b < balls.size() && inside; ++b)
        if (b != smallest) inside = balls[b].contains(x);
      if (inside) sketch.add(x, reservoir_rng);
    }
    report.samples_per_class[static_cast<std::size_t>(y)] = sketch.count;
    report.samples_used += sketch.count;
  }

  std::vector<std::vector<Vector>> cands(static_cast<std::size_t>(k));
  for (Index y = 0; y < k; ++y) {
    cands[static_cast<std::size_t>(y)] =
        sketches[static_cast<std::size_t>(y)].candidates();
    if (cands[static_cast<std::size_t>(y)].size() >= 2)
      report.max_intra[static_cast<std::size_t>(y)] =
          detail::max_pairwise(cands[static_cast<std::size_t>(y)]);
  }
  for (Index y = 0; y < k; ++y)
    for (Index yp = 0; yp < k; ++yp) {
      if (y == yp) continue;
      const auto& a = cands[static_cast<std::size_t>(y)];
      const auto& b = cands[static_cast<std::size_t>(yp)];
      if (a.empty() || b.empty()) continue;
      const double sep = detail::min_cross(a, b);
      report.min_inter[static_cast<std::size_t>(y * k + yp)] = sep;
      const double intra = report.max_intra[static_cast<std::size_t>(y)];
      if (std::isfinite(intra) && intra > sep) ++report.violations;
    }
  return report;
}

}  // namespace ems
