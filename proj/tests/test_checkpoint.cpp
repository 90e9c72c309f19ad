#include <doctest.h>

#include "amh/checkpoint.hpp"
#include "amh/random.hpp"
#include "amh/train.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>

using namespace amh;
namespace fs = std::filesystem;

namespace {

AmhNet perturbed_model(const std::string& variant, std::uint64_t seed) {
  ModelConfig cfg = build_ablation(variant);
  cfg.hierarchy.crf_init_scale = 0.2;
  cfg.init_seed = seed;
  AmhNet net(cfg);
  Rng rng(seed);
  jitter_biases(net, rng, 0.1);
  return net;
}

std::vector<unsigned char> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("save, load, save is byte-identical") {
  const fs::path d = fs::temp_directory_path() / "amh_test_checkpoint";
  fs::remove_all(d);
  fs::create_directories(d);
  for (const char* v : {"flag", "plag", "no_agcrf", "baseline"}) {
    const AmhNet net = perturbed_model(v, 3);
    save_checkpoint((d / "a.ckpt").string(), net);
    const AmhNet back = load_checkpoint((d / "a.ckpt").string());
    save_checkpoint((d / "b.ckpt").string(), back);
    CHECK(read_file(d / "a.ckpt") == read_file(d / "b.ckpt"));
    CHECK(back.config().to_text() == net.config().to_text());
  }
  fs::remove_all(d);
}

TEST_CASE("a reloaded model predicts bit-exactly") {
  const AmhNet net = perturbed_model("flag", 4);
  const AmhNet back = deserialize_checkpoint(serialize_checkpoint(net));
  Rng rng(5);
  const Tensor img = random_tensor({1, 32, 32}, rng, 0.0, 1.0);
  const PredictionSet a = net.predict(img), b = back.predict(img);
  REQUIRE(a.heads.size() == b.heads.size());
  for (std::size_t i = 0; i < a.heads.size(); ++i) CHECK(a.heads[i] == b.heads[i]);
  CHECK(a.fused == b.fused);
}

TEST_CASE("learnable unary weights survive a round trip") {
  ModelConfig cfg;
  cfg.hierarchy.learnable_a = true;
  AmhNet net(cfg);
  net.parameters().at("l1.crf.a0").value(0, 0, 0) = 0.37;
  const AmhNet back = deserialize_checkpoint(serialize_checkpoint(net));
  CHECK(back.parameters().at("l1.crf.a0").value(0, 0, 0) == 0.37);
}

TEST_CASE("header layout") {
  const auto bytes = serialize_checkpoint(perturbed_model("baseline", 1));
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "AMHN");
  CHECK(bytes[4] == kCheckpointVersion);
  CHECK(bytes[5] == 0);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto good = serialize_checkpoint(perturbed_model("plag", 2));

  auto bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), CheckpointError);

  bad = good;
  bad[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad), CheckpointError);

  for (std::size_t cut : {std::size_t{2}, std::size_t{7}, std::size_t{40}, good.size() - 1}) {
    const std::vector<unsigned char> shorter(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(deserialize_checkpoint(shorter), CheckpointError);
  }

  bad = good;
  bad.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(bad), CheckpointError);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/model.ckpt"), CheckpointError);
}
