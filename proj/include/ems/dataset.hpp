// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <utility>

#include "ems/data.hpp"

namespace ems {

/// Two-domain synthetic retrieval data. Photo samples cluster around a
/// class anchor; sketch samples cluster around a fixed orthogonal transform
/// of the anchor scaled by (1 + domain_gap), so the domain gap is
/// deterministic and invertible.
struct SyntheticConfig {
  int classes = 10;
  int per_class_per_domain = 200;
  int input_dim = 16;
  double sigma = 0.1;
  double domain_gap = 0.2;
  // Anchor sphere radius; <= 0 selects the default 10 * sigma * sqrt(D).
  double anchor_radius = -1.0;
  std::uint64_t seed = 0;

  double effective_radius() const {
    return anchor_radius > 0.0
               ? anchor_radius
               : 10.0 * sigma * std::sqrt(static_cast<double>(input_dim));
  }

  void check() const {
    require(classes >= 2, "SyntheticConfig: need K >= 2");
    require(per_class_per_domain >= 1, "SyntheticConfig: counts must be >= 1");
    require(input_dim >= 1, "SyntheticConfig: input_dim must be >= 1");
    require(sigma >= 0.0, "SyntheticConfig: sigma must be >= 0");
    require(domain_gap >= 0.0, "SyntheticConfig: domain_gap must be >= 0");
  }
};

namespace detail {

// Random orthogonal matrix: QR of a Gaussian matrix with the signs of the
// R diagonal folded in, which makes the distribution Haar and the result
// unique for the given draw.
inline Matrix random_orthogonal(Index d, Rng& rng) {
  Matrix a = rng.normal_matrix(d, d);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index i = 0; i < d; ++i)
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  return q;
}

// Values pass through float so that the EMB1 file round-trip is exact.
inline double as_f32(double v) { return static_cast<float>(v); }

}  // namespace detail

inline EmbeddingBatch generate(const SyntheticConfig& cfg) {
  cfg.check();
  Rng rng(cfg.seed);
  const Index d = cfg.input_dim;
  const double radius = cfg.effective_radius();
  const Matrix transform = detail::random_orthogonal(d, rng);

  Matrix anchors(cfg.classes, d);
  for (int k = 0; k < cfg.classes; ++k)
    anchors.row(k) = radius * rng.unit_vector(d);

  const Index n =
      static_cast<Index>(cfg.classes) * cfg.per_class_per_domain * 2;
  EmbeddingBatch batch;
  batch.vectors.resize(n, d);
  batch.labels.resize(static_cast<std::size_t>(n));
  batch.domains.resize(static_cast<std::size_t>(n));

  Index row = 0;
  for (int k = 0; k < cfg.classes; ++k) {
    const Vector photo_anchor = anchors.row(k);
    const Vector sketch_anchor =
        (1.0 + cfg.domain_gap) * (transform * photo_anchor);
    for (int domain = 0; domain < 2; ++domain) {
      const Vector& anchor = domain == 0 ? photo_anchor : sketch_anchor;
      for (int s = 0; s < cfg.per_class_per_domain; ++s) {
        for (Index i = 0; i < d; ++i)
          batch.vectors(row, i) =
              detail::as_f32(anchor[i] + cfg.sigma * rng.normal());
        batch.labels[static_cast<std::size_t>(row)] = k;
        batch.domains[static_cast<std::size_t>(row)] =
            domain == 0 ? Domain::photo : Domain::sketch;
        ++row;
      }
    }
  }
  return batch;
}

struct SplitSpec {
  enum class Mode { standard, zero_shot };
  Mode mode = Mode::standard;
  std::vector<int> holdout;  // zero-shot only
  std::uint64_t seed = 0;
};

/// Partition into a source set (no held-out classes) and a target set
/// (held-out classes only). Sample order is preserved.
inline std::pair<EmbeddingBatch, EmbeddingBatch> split_zero_shot(
    const EmbeddingBatch& dataset, const SplitSpec& spec) {
  dataset.check_consistent();
  std::set<int> held(spec.holdout.begin(), spec.holdout.end());
  if (spec.mode == SplitSpec::Mode::zero_shot) {
    std::set<int> present(dataset.labels.begin(), dataset.labels.end());
    for (int h : held)
      require(present.count(h) > 0,
              "split_zero_shot: held-out class absent from dataset");
  }

  std::vector<Index> source_rows, target_rows;
  for (Index i = 0; i < dataset.size(); ++i) {
    if (held.count(dataset.labels[static_cast<std::size_t>(i)]) > 0)
      target_rows.push_back(i);
    else
      source_rows.push_back(i);
  }
  require(!source_rows.empty(),
          "split_zero_shot: held-out list empties the source set");

  auto take = [&dataset](const std::vector<Index>& rows) {
    EmbeddingBatch out;
    out.vectors.resize(static_cast<Index>(rows.size()), dataset.dim());
    out.labels.resize(rows.size());
    out.domains.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.vectors.row(static_cast<Index>(i)) = dataset.vectors.row(rows[i]);
      out.labels[i] = dataset.labels[static_cast<std::size_t>(rows[i])];
      out.domains[i] = dataset.domains[static_cast<std::size_t>(rows[i])];
    }
    return out;
  };
  return {take(source_rows), take(target_rows)};
}

// ---------------------------------------------------------------------------
// EMB1 file format: magic "EMB1", u32 LE sample count N, u32 LE dimension D,
// then N records of D little-endian f32 features, one u32 LE label and one
// byte domain (0 photo, 1 sketch).
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  require(in.gcount() == 4, "EMB1: truncated file while reading " + what);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline float get_f32(std::istream& in) {
  const std::uint32_t bits = get_u32(in, "feature");
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline void write_embeddings(const std::string& path,
                             const EmbeddingBatch& batch) {
  batch.check_consistent();
  require(batch.size() == 0 || batch.dim() >= 1,
          "write_embeddings: zero-dimensional batch");
  require(batch.size() <= 0xffffffffll && batch.dim() <= 0xffffffffll,
          "write_embeddings: dimension overflow");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "write_embeddings: cannot open " + path);
  out.write("EMB1", 4);
  detail::put_u32(out, static_cast<std::uint32_t>(batch.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(batch.dim()));
  for (Index i = 0; i < batch.size(); ++i) {
    for (Index j = 0; j < batch.dim(); ++j)
      detail::put_f32(out, static_cast<float>(batch.vectors(i, j)));
    detail::put_u32(out, static_cast<std::uint32_t>(
                             batch.labels[static_cast<std::size_t>(i)]));
    const char domain =
        batch.domains[static_cast<std::size_t>(i)] == Domain::sketch ? 1 : 0;
    out.write(&domain, 1);
  }
  require(out.good(), "write_embeddings: write failed for " + path);
}

inline EmbeddingBatch read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "read_embeddings: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.gcount() == 4 && std::memcmp(magic, "EMB1", 4) == 0,
          "read_embeddings: bad magic in " + path + " (expected \"EMB1\")");
  const std::uint32_t n = detail::get_u32(in, "sample count");
  const std::uint32_t d = detail::get_u32(in, "dimension");
  require(n == 0 || d >= 1, "read_embeddings: zero dimension");
  // 4D + 5 bytes per record; reject sizes that cannot be addressed.
  require(d < (1u << 24) && n < (1u << 28),
          "read_embeddings: dimension overflow");

  EmbeddingBatch batch;
  batch.vectors.resize(static_cast<Index>(n), static_cast<Index>(d));
  batch.labels.resize(n);
  batch.domains.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j)
      batch.vectors(static_cast<Index>(i), static_cast<Index>(j)) =
          detail::get_f32(in);
    batch.labels[i] = static_cast<int>(detail::get_u32(in, "label"));
    char domain;
    in.read(&domain, 1);
    require(in.gcount() == 1, "read_embeddings: truncated record");
    require(domain == 0 || domain == 1, "read_embeddings: bad domain byte");
    batch.domains[i] = domain == 1 ? Domain::sketch : Domain::photo;
  }
  return batch;
}

}  // namespace ems
