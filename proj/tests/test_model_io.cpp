#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "ems/model_io.hpp"

using namespace ems;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path("/tmp/ems_model_" + name + "_" + std::to_string(::getpid())) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("model save/load round trip is exact") {
  Model model;
  model.encoder = init_params({5, 8, 6}, 2, 43);
  Rng rng(47);
  model.prototypes.centers = rng.normal_matrix(4, 6);
  model.biases = Vector::Zero(4);
  model.loss = LossId::ems;
  model.margin = 4.0;
  model.seed = 99;

  TempFile file("roundtrip");
  save_model(file.path, model);
  const Model back = load_model(file.path);

  CHECK(back.loss == LossId::ems);
  CHECK(back.margin == 4.0);
  CHECK(back.seed == 99);
  CHECK((pack(back.encoder).array() == pack(model.encoder).array()).all());
  CHECK((back.prototypes.centers.array() ==
         model.prototypes.centers.array())
            .all());
}

TEST_CASE("loading a non-model file fails cleanly") {
  TempFile file("notmodel");
  {
    std::ofstream out(file.path);
    out << "{\"hello\": 1}\n";
  }
  CHECK_THROWS_AS(load_model(file.path), std::invalid_argument);
  {
    std::ofstream out(file.path, std::ios::trunc);
    out << "this is not json";
  }
  CHECK_THROWS_AS(load_model(file.path), std::invalid_argument);
  CHECK_THROWS_AS(load_model("/nonexistent/path.json"), std::invalid_argument);
}

TEST_CASE("region report serializes violations and tables") {
  Matrix centers(2, 2);
  centers << 0, 0, 1, 0;
  PrototypeSet protos{centers};
  const RegionReport report = verify_region_separation(protos, 3.0, 50000, 3);
  const Json j = to_json(report);
  CHECK(j.at("classes").get<int>() == 2);
  CHECK(j.at("violations").get<long>() >= 1);
  CHECK(j.at("max_intra").size() == 2);
  CHECK(j.at("min_inter").size() == 2);
  CHECK(j.at("min_inter")[0][0].is_null());  // diagonal
}
