#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "ems/dataset.hpp"

using namespace ems;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path("/tmp/ems_test_" + name + "_" +
             std::to_string(::getpid())) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("generate produces balanced two-domain data") {
  SyntheticConfig cfg;
  cfg.classes = 2;
  cfg.per_class_per_domain = 3;
  cfg.input_dim = 5;
  cfg.seed = 1;
  const EmbeddingBatch batch = generate(cfg);
  REQUIRE(batch.size() == 12);
  long photos = 0, sketches = 0;
  std::vector<long> per_class(2, 0);
  for (Index i = 0; i < batch.size(); ++i) {
    (batch.domains[static_cast<std::size_t>(i)] == Domain::photo ? photos
                                                                 : sketches)++;
    per_class[static_cast<std::size_t>(
        batch.labels[static_cast<std::size_t>(i)])]++;
  }
  CHECK(photos == 6);
  CHECK(sketches == 6);
  CHECK(per_class[0] == 6);
  CHECK(per_class[1] == 6);
}

TEST_CASE("zero noise and zero gap leave only the orthogonal transform") {
  SyntheticConfig cfg;
  cfg.classes = 3;
  cfg.per_class_per_domain = 2;
  cfg.input_dim = 6;
  cfg.sigma = 0.0;
  cfg.domain_gap = 0.0;
  cfg.anchor_radius = 2.0;  // explicit: the default radius collapses at sigma=0
  cfg.seed = 3;
  const EmbeddingBatch batch = generate(cfg);

  // Collect one photo and one sketch vector per class.
  Matrix photo(3, 6), sketch(3, 6);
  for (Index i = 0; i < batch.size(); ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    if (batch.domains[static_cast<std::size_t>(i)] == Domain::photo)
      photo.row(y) = batch.vectors.row(i);
    else
      sketch.row(y) = batch.vectors.row(i);
  }
  // An orthogonal map preserves the Gram matrix (f32 storage rounding only).
  const Matrix gram_photo = photo * photo.transpose();
  const Matrix gram_sketch = sketch * sketch.transpose();
  CHECK((gram_photo - gram_sketch).cwiseAbs().maxCoeff() < 1e-5);
  for (Index y = 0; y < 3; ++y)
    CHECK(photo.row(y).norm() ==
          Catch::Approx(sketch.row(y).norm()).epsilon(1e-6));
}

TEST_CASE("generation is deterministic under the seed") {
  SyntheticConfig cfg;
  cfg.classes = 4;
  cfg.per_class_per_domain = 5;
  cfg.input_dim = 7;
  cfg.seed = 11;
  const EmbeddingBatch a = generate(cfg);
  const EmbeddingBatch b = generate(cfg);
  CHECK((a.vectors.array() == b.vectors.array()).all());
  cfg.seed = 12;
  const EmbeddingBatch c = generate(cfg);
  CHECK((a.vectors - c.vectors).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zero-shot split partitions by class") {
  SyntheticConfig cfg;
  cfg.classes = 10;
  cfg.per_class_per_domain = 3;
  cfg.input_dim = 4;
  cfg.seed = 13;
  const EmbeddingBatch batch = generate(cfg);

  SplitSpec spec;
  spec.mode = SplitSpec::Mode::zero_shot;
  spec.holdout = {8, 9};
  const auto [source, target] = split_zero_shot(batch, spec);
  CHECK(source.size() + target.size() == batch.size());

  std::set<int> source_classes(source.labels.begin(), source.labels.end());
  std::set<int> target_classes(target.labels.begin(), target.labels.end());
  CHECK(source_classes.size() == 8);
  CHECK(target_classes == std::set<int>{8, 9});
  CHECK(source_classes.count(8) == 0);
  CHECK(source_classes.count(9) == 0);
}

TEST_CASE("standard split with no holdout leaves the target empty") {
  SyntheticConfig cfg;
  cfg.classes = 3;
  cfg.per_class_per_domain = 2;
  cfg.input_dim = 4;
  cfg.seed = 17;
  const EmbeddingBatch batch = generate(cfg);
  SplitSpec spec;  // standard, empty holdout
  const auto [source, target] = split_zero_shot(batch, spec);
  CHECK(source.size() == batch.size());
  CHECK(target.size() == 0);
}

TEST_CASE("split errors") {
  SyntheticConfig cfg;
  cfg.classes = 3;
  cfg.per_class_per_domain = 2;
  cfg.input_dim = 4;
  cfg.seed = 19;
  const EmbeddingBatch batch = generate(cfg);
  SplitSpec spec;
  spec.mode = SplitSpec::Mode::zero_shot;
  spec.holdout = {7};  // absent class
  CHECK_THROWS_AS(split_zero_shot(batch, spec), std::invalid_argument);
  spec.holdout = {0, 1, 2};  // empties the source
  CHECK_THROWS_AS(split_zero_shot(batch, spec), std::invalid_argument);
}

TEST_CASE("EMB1 round trip is the identity") {
  SyntheticConfig cfg;
  cfg.classes = 3;
  cfg.per_class_per_domain = 4;
  cfg.input_dim = 5;
  cfg.seed = 23;
  const EmbeddingBatch batch = generate(cfg);
  TempFile file("roundtrip");
  write_embeddings(file.path, batch);
  const EmbeddingBatch back = read_embeddings(file.path);
  CHECK((back.vectors.array() == batch.vectors.array()).all());
  CHECK(back.labels == batch.labels);
  CHECK(back.domains == batch.domains);
}

TEST_CASE("empty batch writes a header-only 12-byte file") {
  EmbeddingBatch empty;
  empty.vectors.resize(0, 4);
  TempFile file("empty");
  write_embeddings(file.path, empty);
  std::ifstream in(file.path, std::ios::binary | std::ios::ate);
  CHECK(in.tellg() == 12);
  const EmbeddingBatch back = read_embeddings(file.path);
  CHECK(back.size() == 0);
}

TEST_CASE("corrupted magic is reported with the expected magic") {
  TempFile file("badmagic");
  {
    std::ofstream out(file.path, std::ios::binary);
    out.write("NOPE\0\0\0\0\0\0\0\0", 12);
  }
  CHECK_THROWS_WITH(read_embeddings(file.path),
                    Catch::Matchers::ContainsSubstring("EMB1"));
}

TEST_CASE("truncated files are rejected") {
  SyntheticConfig cfg;
  cfg.classes = 2;
  cfg.per_class_per_domain = 2;
  cfg.input_dim = 3;
  cfg.seed = 29;
  const EmbeddingBatch batch = generate(cfg);
  TempFile file("trunc");
  write_embeddings(file.path, batch);
  // Chop the last few bytes.
  std::ifstream in(file.path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(file.path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<long>(bytes.size()) - 3);
  out.close();
  CHECK_THROWS_AS(read_embeddings(file.path), std::invalid_argument);
}
