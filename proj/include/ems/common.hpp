// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ems {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(const Matrix& m, const std::string& what) {
  require(m.allFinite(), what + " contains non-finite entries");
}

inline void require_finite(const Vector& v, const std::string& what) {
  require(v.allFinite(), what + " contains non-finite entries");
}

// Deterministic random source. std::mt19937_64 is fully specified by the
// standard; the distributions below avoid the implementation-defined
// std::normal_distribution so the same seed yields the same stream on every
// platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // uniform integer in [0, n), multiply-shift reduction
  std::uint64_t integer(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

  Vector normal_vector(Index n, double stddev = 1.0) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = stddev * normal();
    return v;
  }

  Matrix normal_matrix(Index rows, Index cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = stddev * normal();
    return m;
  }

  // point uniform on the unit sphere
  Vector unit_vector(Index n) {
    Vector v = normal_vector(n);
    double norm = v.norm();
    while (norm < 1e-12) {
      v = normal_vector(n);
      norm = v.norm();
    }
    return v / norm;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ems
