#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "ems/hashing.hpp"
#include "ems/retrieval.hpp"
#include "test_support.hpp"

using namespace ems;

namespace {

HashAutoencoder linear_identity(Index d) {
  HashAutoencoder ae;
  ae.enc_w = Matrix::Identity(d, d);
  ae.enc_b = Vector::Zero(d);
  ae.dec_w = Matrix::Identity(d, d);
  ae.dec_b = Vector::Zero(d);
  ae.tanh_encoder = false;
  return ae;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path("/tmp/ems_hash_" + name + "_" + std::to_string(::getpid())) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("identity autoencoder reconstructs exactly") {
  PrototypeSet protos{Matrix::Random(3, 4)};
  const HashLossTerms terms = hash_losses(protos, nullptr, linear_identity(4));
  CHECK(terms.rec == 0.0);
  CHECK(terms.total == terms.rec + terms.scat);
}

TEST_CASE("antipodal encodings give scatter -1") {
  Matrix centers(2, 2);
  centers << 1, 0, -1, 0;
  PrototypeSet protos{centers};
  const HashLossTerms terms = hash_losses(protos, nullptr, linear_identity(2));
  CHECK(terms.scat == Catch::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("quantization loss vanishes on corner embeddings") {
  Matrix centers(2, 2);
  centers << 1, -1, -1, 1;  // already sign vectors
  PrototypeSet protos{centers};
  EmbeddingBatch emb;
  emb.vectors = centers;
  emb.labels = {0, 1};
  emb.domains = {Domain::photo, Domain::sketch};
  const HashLossTerms terms =
      hash_losses(protos, &emb, linear_identity(2), true);
  CHECK(terms.quant == 0.0);
  CHECK(terms.quant_enabled);
  CHECK(terms.total == terms.rec + terms.scat + terms.quant);
}

TEST_CASE("zero-norm encoded prototype names the offender") {
  HashAutoencoder ae = linear_identity(2);
  ae.enc_w.setZero();
  PrototypeSet protos{Matrix::Random(2, 2)};
  CHECK_THROWS_WITH(hash_losses(protos, nullptr, ae),
                    Catch::Matchers::ContainsSubstring("prototype 0"));
}

TEST_CASE("quant term requires embeddings") {
  PrototypeSet protos{Matrix::Random(2, 2)};
  CHECK_THROWS_AS(hash_losses(protos, nullptr, linear_identity(2), true),
                  std::invalid_argument);
}

TEST_CASE("hash loss gradients match finite differences") {
  // All three terms at once, against the test-side oracle.
  Rng rng(3);
  PrototypeSet protos{rng.normal_matrix(4, 3)};
  EmbeddingBatch emb;
  emb.vectors = rng.normal_matrix(6, 3);
  emb.labels = {0, 1, 2, 3, 1, 2};
  emb.domains.assign(6, Domain::photo);
  HashAutoencoder ae = init_hasher(3, 5, 7);

  HashLossFlags flags{true, true, true};
  detail::HashGrads grads(ae);
  detail::hash_losses_impl(protos, &emb, ae, flags, true, &grads);

  auto objective = [&](const HashAutoencoder& a) {
    const HashLossTerms t = hash_losses(protos, &emb, a, true);
    return t.rec + t.scat + t.quant;
  };

  const double h = 1e-6;
  double worst = 0.0;
  auto check_block = [&](double* param, const double* grad, Index n) {
    for (Index i = 0; i < n; ++i) {
      const double keep = param[i];
      param[i] = keep + h;
      const double up = objective(ae);
      param[i] = keep - h;
      const double down = objective(ae);
      param[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double mag = std::max(std::abs(grad[i]), std::abs(numeric));
      if (mag < 1e-12) continue;
      worst = std::max(worst, std::abs(grad[i] - numeric) / mag);
    }
  };
  check_block(ae.enc_w.data(), grads.enc_w.data(), ae.enc_w.size());
  check_block(ae.enc_b.data(), grads.enc_b.data(), ae.enc_b.size());
  check_block(ae.dec_w.data(), grads.dec_w.data(), ae.dec_w.size());
  check_block(ae.dec_b.data(), grads.dec_b.data(), ae.dec_b.size());
  CHECK(worst <= 1e-6);
}

TEST_CASE("train_hasher on orthogonal prototypes improves both terms") {
  Matrix centers = 3.0 * Matrix::Identity(4, 4);
  PrototypeSet protos{centers};
  HashTrainConfig cfg;
  cfg.bits = 32;
  cfg.steps = 2000;
  cfg.seed = 5;
  const HashAutoencoder before = init_hasher(4, 32, 5);
  const HashLossTerms initial = hash_losses(protos, nullptr, before);
  const HashAutoencoder after = train_hasher(protos, nullptr, cfg);
  const HashLossTerms final_terms = hash_losses(protos, nullptr, after);
  CHECK(final_terms.scat < 0.0);
  CHECK(final_terms.rec < initial.rec);

  // Codes of well-separated prototypes are pairwise distinct afterwards.
  std::vector<HashCode> codes;
  for (Index j = 0; j < 4; ++j)
    codes.push_back(encode_binary(after, protos.centers.row(j)));
  for (std::size_t a = 0; a < codes.size(); ++a)
    for (std::size_t b = a + 1; b < codes.size(); ++b)
      CHECK(hamming_distance(codes[a], codes[b]) > 0);
}

TEST_CASE("train_hasher with zero steps returns the initialization") {
  PrototypeSet protos{Matrix::Random(3, 4)};
  HashTrainConfig cfg;
  cfg.bits = 8;
  cfg.steps = 0;
  cfg.seed = 9;
  const HashAutoencoder ae = train_hasher(protos, nullptr, cfg);
  const HashAutoencoder fresh = init_hasher(4, 8, 9);
  CHECK((ae.enc_w.array() == fresh.enc_w.array()).all());
  CHECK((ae.dec_w.array() == fresh.dec_w.array()).all());
}

TEST_CASE("train_hasher is deterministic") {
  Rng rng(11);
  PrototypeSet protos{rng.normal_matrix(4, 4, 2.0)};
  HashTrainConfig cfg;
  cfg.bits = 16;
  cfg.steps = 500;
  cfg.seed = 13;
  const HashAutoencoder a = train_hasher(protos, nullptr, cfg);
  const HashAutoencoder b = train_hasher(protos, nullptr, cfg);
  CHECK((a.enc_w.array() == b.enc_w.array()).all());
  CHECK((a.dec_b.array() == b.dec_b.array()).all());
}

TEST_CASE("loss terms stay in range on random autoencoders") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const Index k = 2 + static_cast<Index>(rng.integer(5));
    const Index d = 2 + static_cast<Index>(rng.integer(5));
    PrototypeSet protos{rng.normal_matrix(k, d, 2.0)};
    EmbeddingBatch emb;
    emb.vectors = rng.normal_matrix(3 * k, d, 2.0);
    emb.labels.resize(static_cast<std::size_t>(3 * k));
    for (Index i = 0; i < 3 * k; ++i)
      emb.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % k);
    emb.domains.assign(static_cast<std::size_t>(3 * k), Domain::photo);
    const HashAutoencoder ae =
        init_hasher(d, 4 + static_cast<int>(rng.integer(12)),
                    1000 + static_cast<std::uint64_t>(trial));
    const HashLossTerms t = hash_losses(protos, &emb, ae, true);
    CHECK(t.rec >= 0.0);
    CHECK(t.quant >= 0.0);
    CHECK(t.scat >= -1.0);
    CHECK(t.scat <= 1.0);
    CHECK(t.total == t.rec + t.scat + t.quant);
  }
}

TEST_CASE("encode_binary sign convention") {
  HashAutoencoder ae = linear_identity(3);
  Vector x(3);
  x << 0.3, -0.2, 0.0;
  const HashCode code = encode_binary(ae, x);
  CHECK(code.bit(0));
  CHECK_FALSE(code.bit(1));
  CHECK_FALSE(code.bit(2));  // exact zero maps to 0
}

TEST_CASE("encode_binary is invariant to positive row scaling") {
  HashAutoencoder ae = init_hasher(4, 6, 21);
  Rng rng(23);
  const Vector x = rng.normal_vector(4);
  const HashCode base = encode_binary(ae, x);
  HashAutoencoder scaled = ae;
  for (Index b = 0; b < 6; ++b) {
    const double s = rng.uniform(0.1, 10.0);
    scaled.enc_w.row(b) *= s;
    scaled.enc_b[b] *= s;
  }
  const HashCode after = encode_binary(scaled, x);
  CHECK(hamming_distance(base, after) == 0);
}

TEST_CASE("antipodal encoder outputs give complementary codes") {
  HashAutoencoder ae = linear_identity(64);
  Rng rng(29);
  Vector x = rng.normal_vector(64);
  for (Index i = 0; i < 64; ++i)
    if (x[i] == 0.0) x[i] = 1.0;
  const HashCode a = encode_binary(ae, x);
  const HashCode b = encode_binary(ae, Vector(-x));
  CHECK(hamming_distance(a, b) == 64);
}

TEST_CASE("hamming distance basics") {
  auto code = [](std::initializer_list<int> bits) {
    HashCode c;
    c.bits = static_cast<int>(bits.size());
    c.words.assign(1, 0);
    int i = 0;
    for (int bit : bits) {
      if (bit) c.words[0] |= std::uint64_t{1} << i;
      ++i;
    }
    return c;
  };
  CHECK(hamming_distance(code({1, 0, 1, 0}), code({0, 1, 1, 0})) == 2);
  const HashCode x = code({1, 1, 0, 1});
  CHECK(hamming_distance(x, x) == 0);
  CHECK_THROWS_AS(hamming_distance(code({1, 0}), code({1, 0, 1})),
                  std::invalid_argument);
}

TEST_CASE("hamming distance is a metric") {
  Rng rng(31);
  HashAutoencoder ae = init_hasher(6, 24, 33);
  auto random_code = [&] { return encode_binary(ae, rng.normal_vector(6)); };
  for (int trial = 0; trial < 200; ++trial) {
    const HashCode a = random_code();
    const HashCode b = random_code();
    const HashCode c = random_code();
    CHECK(hamming_distance(a, b) == hamming_distance(b, a));
    CHECK(hamming_distance(a, a) == 0);
    CHECK(hamming_distance(a, c) <=
          hamming_distance(a, b) + hamming_distance(b, c));
  }
}

TEST_CASE("codes file round trips") {
  Rng rng(37);
  HashAutoencoder ae = init_hasher(5, 33, 39);  // odd width exercises padding
  HashCodes codes;
  codes.bits = 33;
  for (int i = 0; i < 17; ++i) {
    codes.codes.push_back(encode_binary(ae, rng.normal_vector(5)));
    codes.labels.push_back(static_cast<std::uint32_t>(i % 4));
  }
  TempFile file("codes");
  write_codes(file.path, codes);
  const HashCodes back = read_codes(file.path);
  REQUIRE(back.size() == codes.size());
  CHECK(back.bits == codes.bits);
  CHECK(back.labels == codes.labels);
  for (std::size_t i = 0; i < codes.size(); ++i)
    CHECK(hamming_distance(back.codes[i], codes.codes[i]) == 0);
}

TEST_CASE("codes file rejects a corrupt header") {
  TempFile file("badcodes");
  {
    std::ofstream out(file.path, std::ios::binary);
    out.write("XXXX\1\0\0\0\40\0\0\0", 12);
  }
  CHECK_THROWS_WITH(read_codes(file.path),
                    Catch::Matchers::ContainsSubstring("HSH1"));
}
