// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "ems/data.hpp"
#include "ems/training.hpp"

namespace ems {

/// Dimension-reduction autoencoder for hashing: encoder affine -> tanh with
/// output width = bit count, decoder plain affine back to the prototype
/// space. `tanh_encoder` exists so a raw linear autoencoder can be built.
struct HashAutoencoder {
  Matrix enc_w;  // B x D
  Vector enc_b;  // B
  Matrix dec_w;  // D x B
  Vector dec_b;  // D
  bool tanh_encoder = true;

  Index bits() const { return enc_w.rows(); }
  Index input_dim() const { return enc_w.cols(); }

  void check() const {
    require(enc_w.rows() >= 1 && enc_w.cols() >= 1,
            "HashAutoencoder: empty encoder");
    require(enc_b.size() == enc_w.rows() && dec_w.rows() == enc_w.cols() &&
                dec_w.cols() == enc_w.rows() && dec_b.size() == dec_w.rows(),
            "HashAutoencoder: decoder shapes do not invert the encoder");
    require_finite(enc_w, "encoder weights");
    require_finite(dec_w, "decoder weights");
  }

  Vector encode(const Vector& x) const {
    require(x.size() == input_dim(), "HashAutoencoder: dimension mismatch");
    Vector z = enc_w * x + enc_b;
    if (tanh_encoder) z = z.array().tanh();
    return z;
  }

  Vector decode(const Vector& z) const { return dec_w * z + dec_b; }
};

struct HashLossTerms {
  double rec = 0.0;
  double scat = 0.0;
  double quant = 0.0;
  bool quant_enabled = false;
  double total = 0.0;
};

struct HashLossFlags {
  bool rec = true;
  bool scat = true;
  bool quant = false;
};

inline HashLossFlags parse_loss_terms(const std::string& spec) {
  HashLossFlags flags{false, false, false};
  for (char c : spec) {
    if (c == '+' || c == ' ') continue;
    if (c == 'r') flags.rec = true;
    else if (c == 's') flags.scat = true;
    else if (c == 'q') flags.quant = true;
    else throw std::invalid_argument("loss-terms: expected r, s, q and '+'");
  }
  require(flags.rec || flags.scat || flags.quant,
          "loss-terms: at least one term required");
  return flags;
}

namespace detail {

// Signed code target of the quantization loss: +1 for positive encoder
// outputs, -1 otherwise (matching the bit convention sign(0) -> 0).
inline Vector sign_vector(const Vector& v) {
  Vector s(v.size());
  for (Index i = 0; i < v.size(); ++i) s[i] = v[i] > 0.0 ? 1.0 : -1.0;
  return s;
}

struct HashGrads {
  Matrix enc_w;
  Vector enc_b;
  Matrix dec_w;
  Vector dec_b;

  explicit HashGrads(const HashAutoencoder& ae)
      : enc_w(Matrix::Zero(ae.enc_w.rows(), ae.enc_w.cols())),
        enc_b(Vector::Zero(ae.enc_b.size())),
        dec_w(Matrix::Zero(ae.dec_w.rows(), ae.dec_w.cols())),
        dec_b(Vector::Zero(ae.dec_b.size())) {}
};

// Backpropagate a gradient on the encoder output of `x` into the encoder
// parameters.
inline void encoder_backprop(const HashAutoencoder& ae, const Vector& x,
                             const Vector& t, const Vector& dt,
                             HashGrads& grads) {
  Vector dpre = dt;
  if (ae.tanh_encoder)
    dpre = dt.array() * (1.0 - t.array().square());
  grads.enc_w += dpre * x.transpose();
  grads.enc_b += dpre;
}

// All three terms with gradients; each term's gradient accumulates only if
// its flag is set. `embeddings` may be null when quant is off.
inline HashLossTerms hash_losses_impl(const PrototypeSet& protos,
                                      const EmbeddingBatch* embeddings,
                                      const HashAutoencoder& ae,
                                      const HashLossFlags& flags,
                                      bool enable_quant, HashGrads* grads) {
  protos.check();
  ae.check();
  const Index k = protos.num_classes();
  require(k >= 2, "hash_losses: need K >= 2");
  require(protos.dim() == ae.input_dim(),
          "hash_losses: prototype dimension does not match the encoder");
  if (enable_quant)
    require(embeddings != nullptr,
            "hash_losses: quantization loss requires embeddings");

  std::vector<Vector> enc(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j)
    enc[static_cast<std::size_t>(j)] = ae.encode(protos.centers.row(j));

  HashLossTerms out;
  const double kd = static_cast<double>(k);

  // Reconstruction over prototypes.
  for (Index j = 0; j < k; ++j) {
    const Vector& t = enc[static_cast<std::size_t>(j)];
    const Vector recon = ae.decode(t);
    const Vector resid = Vector(protos.centers.row(j)) - recon;
    out.rec += resid.squaredNorm() / kd;
    if (grads && flags.rec) {
      grads->dec_w += (-2.0 / kd) * resid * t.transpose();
      grads->dec_b += (-2.0 / kd) * resid;
      const Vector dt = (-2.0 / kd) * (ae.dec_w.transpose() * resid);
      encoder_backprop(ae, protos.centers.row(j), t, dt, *grads);
    }
  }

  // Scatter: mean pairwise cosine of encoded prototypes.
  std::vector<double> norms(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) {
    norms[static_cast<std::size_t>(j)] = enc[static_cast<std::size_t>(j)].norm();
    if (norms[static_cast<std::size_t>(j)] == 0.0) {
      std::ostringstream msg;
      msg << "hash_losses: prototype " << j
          << " encodes to the zero vector; cosine scatter undefined";
      throw std::invalid_argument(msg.str());
    }
  }
  const double pair_w = 1.0 / (kd * (kd - 1.0));
  std::vector<Vector> denc(static_cast<std::size_t>(k),
                           Vector::Zero(ae.bits()));
  for (Index j = 0; j < k; ++j)
    for (Index l = j + 1; l < k; ++l) {
      const Vector& u = enc[static_cast<std::size_t>(j)];
      const Vector& v = enc[static_cast<std::size_t>(l)];
      const double nu = norms[static_cast<std::size_t>(j)];
      const double nv = norms[static_cast<std::size_t>(l)];
      const double cos_uv = u.dot(v) / (nu * nv);
      out.scat += 2.0 * pair_w * cos_uv;  // both orders of the pair
      if (grads && flags.scat) {
        denc[static_cast<std::size_t>(j)] +=
            2.0 * pair_w * (v / (nu * nv) - cos_uv * u / (nu * nu));
        denc[static_cast<std::size_t>(l)] +=
            2.0 * pair_w * (u / (nu * nv) - cos_uv * v / (nv * nv));
      }
    }
  if (grads && flags.scat)
    for (Index j = 0; j < k; ++j)
      encoder_backprop(ae, protos.centers.row(j),
                       enc[static_cast<std::size_t>(j)],
                       denc[static_cast<std::size_t>(j)], *grads);

  // Quantization: pull encoded embeddings onto the signed code of their
  // class prototype (the sign target is a constant).
  out.quant_enabled = enable_quant;
  if (enable_quant) {
    embeddings->check_for_loss(k);
    require(embeddings->dim() == ae.input_dim(),
            "hash_losses: embedding dimension does not match the encoder");
    const double nd = static_cast<double>(embeddings->size());
    std::vector<Vector> targets(static_cast<std::size_t>(k));
    for (Index j = 0; j < k; ++j)
      targets[static_cast<std::size_t>(j)] =
          sign_vector(enc[static_cast<std::size_t>(j)]);
    for (Index i = 0; i < embeddings->size(); ++i) {
      const Vector x = embeddings->vectors.row(i);
      const Vector t = ae.encode(x);
      const Vector resid =
          t - targets[static_cast<std::size_t>(
                  embeddings->labels[static_cast<std::size_t>(i)])];
      out.quant += resid.squaredNorm() / nd;
      if (grads && flags.quant)
        encoder_backprop(ae, x, t, (2.0 / nd) * resid, *grads);
    }
  }

  out.total = out.rec + out.scat + (enable_quant ? out.quant : 0.0);
  return out;
}

}  // namespace detail

/// Loss terms of the hashing objective: reconstruction and scatter, plus
/// the optional quantization term over embeddings.
inline HashLossTerms hash_losses(const PrototypeSet& protos,
                                 const EmbeddingBatch* embeddings,
                                 const HashAutoencoder& ae,
                                 bool enable_quant = false) {
  return detail::hash_losses_impl(protos, embeddings, ae, HashLossFlags{},
                                  enable_quant, nullptr);
}

struct HashTrainConfig {
  int bits = 32;
  long steps = 10000;
  std::uint64_t seed = 0;
  HashLossFlags flags{true, true, false};  // r+s
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0005;
};

inline HashAutoencoder init_hasher(Index input_dim, int bits,
                                   std::uint64_t seed) {
  require(bits >= 1, "init_hasher: bits must be >= 1");
  Rng rng(seed);
  HashAutoencoder ae;
  ae.enc_w = rng.normal_matrix(bits, input_dim,
                               1.0 / std::sqrt(static_cast<double>(input_dim)));
  ae.enc_b = Vector::Zero(bits);
  ae.dec_w = rng.normal_matrix(input_dim, bits,
                               1.0 / std::sqrt(static_cast<double>(bits)));
  ae.dec_b = Vector::Zero(input_dim);
  return ae;
}

/// Full-batch Adam optimization of the selected loss terms over a frozen
/// prototype set (and embeddings when quantization is on).
inline HashAutoencoder train_hasher(const PrototypeSet& protos,
                                    const EmbeddingBatch* embeddings,
                                    const HashTrainConfig& cfg) {
  protos.check();
  require(cfg.steps >= 0, "train_hasher: steps must be >= 0");
  if (cfg.flags.quant)
    require(embeddings != nullptr, "train_hasher: quant term needs embeddings");

  HashAutoencoder ae = init_hasher(protos.dim(), cfg.bits, cfg.seed);
  const Index np =
      ae.enc_w.size() + ae.enc_b.size() + ae.dec_w.size() + ae.dec_b.size();
  AdamState state(np);
  AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay};

  Vector flat(np);
  Vector grad_flat(np);
  auto pack_ae = [&](const Matrix& ew, const Vector& eb, const Matrix& dw,
                     const Vector& db, Vector& v) {
    Index at = 0;
    for (Index i = 0; i < ew.size(); ++i) v[at++] = ew.data()[i];
    for (Index i = 0; i < eb.size(); ++i) v[at++] = eb[i];
    for (Index i = 0; i < dw.size(); ++i) v[at++] = dw.data()[i];
    for (Index i = 0; i < db.size(); ++i) v[at++] = db[i];
  };

  for (long step = 0; step < cfg.steps; ++step) {
    detail::HashGrads grads(ae);
    const HashLossTerms terms = detail::hash_losses_impl(
        protos, embeddings, ae, cfg.flags, cfg.flags.quant, &grads);
    double objective = 0.0;
    if (cfg.flags.rec) objective += terms.rec;
    if (cfg.flags.scat) objective += terms.scat;
    if (cfg.flags.quant) objective += terms.quant;
    if (!std::isfinite(objective)) {
      std::ostringstream msg;
      msg << "train_hasher: objective diverged at step " << step;
      throw std::runtime_error(msg.str());
    }
    pack_ae(ae.enc_w, ae.enc_b, ae.dec_w, ae.dec_b, flat);
    pack_ae(grads.enc_w, grads.enc_b, grads.dec_w, grads.dec_b, grad_flat);
    adam.lr = lr_schedule(step, cfg.steps, cfg.lr);
    adam_step(flat, grad_flat, state, adam);
    Index at = 0;
    for (Index i = 0; i < ae.enc_w.size(); ++i) ae.enc_w.data()[i] = flat[at++];
    for (Index i = 0; i < ae.enc_b.size(); ++i) ae.enc_b[i] = flat[at++];
    for (Index i = 0; i < ae.dec_w.size(); ++i) ae.dec_w.data()[i] = flat[at++];
    for (Index i = 0; i < ae.dec_b.size(); ++i) ae.dec_b[i] = flat[at++];
  }
  return ae;
}

// ---------------------------------------------------------------------------
// Binary codes
// ---------------------------------------------------------------------------

struct HashCode {
  std::vector<std::uint64_t> words;
  int bits = 0;

  bool bit(int b) const {
    return (words[static_cast<std::size_t>(b / 64)] >>
            static_cast<unsigned>(b % 64)) &
           1u;
  }
};

/// Bit b set iff encoder output coordinate b is strictly positive; an exact
/// zero maps to 0.
inline HashCode encode_binary(const HashAutoencoder& ae, const Vector& x) {
  const Vector z = ae.encode(x);
  HashCode code;
  code.bits = static_cast<int>(z.size());
  code.words.assign(static_cast<std::size_t>((code.bits + 63) / 64), 0);
  for (Index b = 0; b < z.size(); ++b)
    if (z[b] > 0.0)
      code.words[static_cast<std::size_t>(b / 64)] |=
          std::uint64_t{1} << static_cast<unsigned>(b % 64);
  return code;
}

inline int hamming_distance(const HashCode& a, const HashCode& b) {
  require(a.bits == b.bits, "hamming_distance: bit width mismatch");
  int dist = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w)
    dist += std::popcount(a.words[w] ^ b.words[w]);
  return dist;
}

struct HashCodes {
  int bits = 0;
  std::vector<HashCode> codes;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return codes.size(); }
};

inline HashCodes encode_batch(const HashAutoencoder& ae,
                              const EmbeddingBatch& batch) {
  HashCodes out;
  out.bits = static_cast<int>(ae.bits());
  out.codes.reserve(static_cast<std::size_t>(batch.size()));
  out.labels.reserve(static_cast<std::size_t>(batch.size()));
  for (Index i = 0; i < batch.size(); ++i) {
    out.codes.push_back(encode_binary(ae, batch.vectors.row(i)));
    out.labels.push_back(static_cast<std::uint32_t>(
        batch.labels[static_cast<std::size_t>(i)]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Codes file: magic "HSH1", u32 LE count N, u32 LE bit width B, then N
// records of ceil(B/8) code bytes (bit 0 = least significant bit of byte 0)
// followed by a u32 LE label.
// ---------------------------------------------------------------------------

inline void write_codes(const std::string& path, const HashCodes& codes) {
  require(codes.codes.size() == codes.labels.size(),
          "write_codes: label count mismatch");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "write_codes: cannot open " + path);
  out.write("HSH1", 4);
  auto put_u32 = [&out](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(static_cast<std::uint32_t>(codes.size()));
  put_u32(static_cast<std::uint32_t>(codes.bits));
  const int nbytes = (codes.bits + 7) / 8;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const HashCode& c = codes.codes[i];
    require(c.bits == codes.bits, "write_codes: inconsistent bit width");
    for (int byte = 0; byte < nbytes; ++byte) {
      const unsigned char v = static_cast<unsigned char>(
          (c.words[static_cast<std::size_t>(byte / 8)] >>
           static_cast<unsigned>((byte % 8) * 8)) &
          0xff);
      out.write(reinterpret_cast<const char*>(&v), 1);
    }
    put_u32(codes.labels[i]);
  }
  require(out.good(), "write_codes: write failed for " + path);
}

inline HashCodes read_codes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "read_codes: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.gcount() == 4 && std::memcmp(magic, "HSH1", 4) == 0,
          "read_codes: bad magic in " + path + " (expected \"HSH1\")");
  auto get_u32 = [&in](const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    require(in.gcount() == 4, std::string("read_codes: truncated ") + what);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };
  const std::uint32_t n = get_u32("count");
  const std::uint32_t bits = get_u32("bit width");
  require(bits >= 1 && bits <= (1u << 20), "read_codes: bad bit width");
  HashCodes out;
  out.bits = static_cast<int>(bits);
  const int nbytes = (static_cast<int>(bits) + 7) / 8;
  for (std::uint32_t i = 0; i < n; ++i) {
    HashCode c;
    c.bits = static_cast<int>(bits);
    c.words.assign(static_cast<std::size_t>((bits + 63) / 64), 0);
    for (int byte = 0; byte < nbytes; ++byte) {
      unsigned char v;
      in.read(reinterpret_cast<char*>(&v), 1);
      require(in.gcount() == 1, "read_codes: truncated code record");
      c.words[static_cast<std::size_t>(byte / 8)] |=
          static_cast<std::uint64_t>(v)
          << static_cast<unsigned>((byte % 8) * 8);
    }
    out.codes.push_back(std::move(c));
    out.labels.push_back(get_u32("label"));
  }
  return out;
}

}  // namespace ems
