#include <catch2/catch_amalgamated.hpp>

#include "ems/dataset.hpp"
#include "ems/retrieval.hpp"
#include "ems/training.hpp"
#include "test_support.hpp"

using namespace ems;

namespace {

EmbeddingBatch embed_with(const EncoderParams& enc, const EmbeddingBatch& d) {
  auto [e, trace] = forward(enc, d.vectors, d.domains);
  return {e, d.labels, d.domains};
}

double nearest_prototype_accuracy(const EmbeddingBatch& emb,
                                  const PrototypeSet& protos) {
  long correct = 0;
  for (Index i = 0; i < emb.size(); ++i) {
    Index best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < protos.num_classes(); ++j) {
      const double d = (emb.vectors.row(i) - protos.centers.row(j)).norm();
      if (d < best_dist) {
        best_dist = d;
        best = j;
      }
    }
    if (static_cast<int>(best) == emb.labels[static_cast<std::size_t>(i)])
      ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(emb.size());
}

}  // namespace

TEST_CASE("lr schedule is the affine decay to zero") {
  CHECK(lr_schedule(0, 100, 0.5) == 0.5);
  CHECK(lr_schedule(100, 100, 0.5) == 0.0);
  CHECK(lr_schedule(500, 1000, 1e-4) == Catch::Approx(5e-5).epsilon(1e-15));
  CHECK_THROWS_AS(lr_schedule(101, 100, 0.5), std::invalid_argument);
  // Affine in the step index.
  const double a = lr_schedule(10, 100, 0.3);
  const double b = lr_schedule(30, 100, 0.3);
  CHECK(lr_schedule(20, 100, 0.3) == Catch::Approx((a + b) / 2).epsilon(1e-15));
}

TEST_CASE("adam first-step magnitude is lr * |g| / (|g| + eps)") {
  Vector params = Vector::Zero(1);
  Vector grads(1);
  grads << 0.3;
  AdamState state(1);
  AdamConfig cfg;
  cfg.lr = 0.01;
  adam_step(params, grads, state, cfg);
  const double expected = -cfg.lr * 0.3 / (0.3 + cfg.eps);
  CHECK(params[0] == Catch::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(params[0]) == Catch::Approx(cfg.lr).epsilon(1e-6));
}

TEST_CASE("adam with zero gradient and zero decay is a fixed point") {
  Vector params(3);
  params << 1.0, -2.0, 0.5;
  const Vector before = params;
  AdamState state(3);
  AdamConfig cfg;
  for (int i = 0; i < 5; ++i) adam_step(params, Vector::Zero(3), state, cfg);
  CHECK((params.array() == before.array()).all());
}

TEST_CASE("adam trajectories are deterministic") {
  auto run = [] {
    Rng rng(3);
    Vector params = rng.normal_vector(8);
    AdamState state(8);
    AdamConfig cfg;
    cfg.lr = 0.05;
    cfg.weight_decay = 0.01;
    for (int i = 0; i < 50; ++i)
      adam_step(params, rng.normal_vector(8), state, cfg);
    return params;
  };
  const Vector a = run();
  const Vector b = run();
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("adam rejects shape mismatches and non-finite gradients") {
  Vector params = Vector::Zero(2);
  AdamState state(2);
  AdamConfig cfg;
  CHECK_THROWS_AS(adam_step(params, Vector::Zero(3), state, cfg),
                  std::invalid_argument);
  Vector bad(2);
  bad << 1.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step(params, bad, state, cfg), std::invalid_argument);
}

TEST_CASE("training solves the separable K=4 benchmark") {
  SyntheticConfig sc;
  sc.classes = 4;
  sc.per_class_per_domain = 50;
  sc.input_dim = 8;
  sc.sigma = 0.1;
  sc.domain_gap = 0.2;
  sc.seed = 1;
  const EmbeddingBatch data = generate(sc);

  TrainConfig tc;
  tc.loss = LossId::ems;
  tc.margin = 4.0;
  tc.base_lr = 1e-2;
  tc.steps = 2000;
  tc.seed = 3;
  const TrainResult result = train(data, tc);

  REQUIRE(result.log.entries.size() == 2000);
  CHECK(result.log.entries.back().loss < 0.05);
  const EmbeddingBatch emb = embed_with(result.encoder, data);
  CHECK(nearest_prototype_accuracy(emb, result.prototypes) == 1.0);
  CHECK(distance_report(emb).separation_holds);
}

TEST_CASE("zero training steps return the initialization unchanged") {
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class_per_domain = 5;
  sc.input_dim = 4;
  sc.seed = 2;
  const EmbeddingBatch data = generate(sc);
  TrainConfig tc;
  tc.steps = 0;
  tc.seed = 9;
  const TrainResult result = train(data, tc);
  CHECK(result.log.entries.empty());
  const EncoderParams fresh = init_params({4, 32, 32, 16}, 4, 9);
  CHECK((pack(result.encoder).array() == pack(fresh).array()).all());
  Rng rng(10);  // seed + 1 stream used for prototypes
  const Matrix proto0 = rng.normal_matrix(2, 16, 1.0 / std::sqrt(16.0));
  CHECK((result.prototypes.centers.array() == proto0.array()).all());
}

TEST_CASE("training is deterministic under the seed") {
  SyntheticConfig sc;
  sc.classes = 3;
  sc.per_class_per_domain = 10;
  sc.input_dim = 6;
  sc.seed = 4;
  const EmbeddingBatch data = generate(sc);
  TrainConfig tc;
  tc.steps = 50;
  tc.seed = 21;
  tc.hidden_dims = {8};
  tc.embed_dim = 4;
  const TrainResult a = train(data, tc);
  const TrainResult b = train(data, tc);
  REQUIRE(a.log.entries.size() == b.log.entries.size());
  for (std::size_t i = 0; i < a.log.entries.size(); ++i) {
    CHECK(a.log.entries[i].loss == b.log.entries[i].loss);
    CHECK(a.log.entries[i].lr == b.log.entries[i].lr);
  }
  CHECK((a.prototypes.centers.array() == b.prototypes.centers.array()).all());
}

TEST_CASE("prototype shape never changes during training") {
  SyntheticConfig sc;
  sc.classes = 5;
  sc.per_class_per_domain = 8;
  sc.input_dim = 6;
  sc.seed = 5;
  const EmbeddingBatch data = generate(sc);
  TrainConfig tc;
  tc.steps = 30;
  tc.hidden_dims = {8};
  tc.embed_dim = 4;
  const TrainResult result = train(data, tc);
  CHECK(result.prototypes.num_classes() == 5);
  CHECK(result.prototypes.dim() == 4);
}

TEST_CASE("batch-mean prototype mode tracks class means") {
  SyntheticConfig sc;
  sc.classes = 4;
  sc.per_class_per_domain = 50;
  sc.input_dim = 8;
  sc.sigma = 0.1;
  sc.seed = 6;
  const EmbeddingBatch data = generate(sc);
  TrainConfig tc;
  tc.loss = LossId::prototypical;
  tc.proto_mode = ProtoMode::batch_mean;
  tc.base_lr = 1e-2;
  tc.steps = 2000;
  tc.seed = 11;
  const TrainResult result = train(data, tc);
  const EmbeddingBatch emb = embed_with(result.encoder, data);
  CHECK(nearest_prototype_accuracy(emb, result.prototypes) > 0.95);
}

TEST_CASE("training aborts on divergence with the offending step") {
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class_per_domain = 5;
  sc.input_dim = 4;
  sc.seed = 7;
  const EmbeddingBatch data = generate(sc);
  TrainConfig tc;
  tc.base_lr = 1e120;  // guaranteed activation overflow
  tc.steps = 50;
  tc.hidden_dims = {8};
  tc.embed_dim = 4;
  CHECK_THROWS_AS(train(data, tc), std::runtime_error);
}

TEST_CASE("training rejects an empty or gappy class set") {
  EmbeddingBatch data;
  data.vectors = Matrix::Random(4, 3);
  data.labels = {0, 0, 2, 2};  // class 1 missing
  data.domains.assign(4, Domain::photo);
  TrainConfig tc;
  tc.steps = 1;
  CHECK_THROWS_AS(train(data, tc), std::invalid_argument);
}
