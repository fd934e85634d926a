#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "mtp/checkpoint.hpp"

using namespace mtp;
using namespace mtp::checkpoint;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

model::ModelConfig toy_config() {
  model::ModelConfig cfg;
  cfg.series_len = 12;
  cfg.embed_dim = 4;
  cfg.fusion_dim = 8;
  cfg.depth = 1;
  cfg.taps = 5;
  cfg.filters = 2;
  cfg.image_size = 16;
  cfg.num_classes = 2;
  cfg.vocab_size = 7;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoints round-trip meta, vocab and tensors") {
  std::mt19937 rng(3);
  Checkpoint ckpt;
  ckpt.meta = "[run]\nline one\n[model]\nseries_len = 12\n";
  ckpt.vocab_tokens = {"<unk>", "traffic", "3.5"};
  ckpt.tensors.emplace_back("a.matrix", Tensor::uniform({3, 4}, 1.0, rng));
  ckpt.tensors.emplace_back("b.cube", Tensor::uniform({2, 2, 2}, 2.0, rng));

  const std::string path = temp_path("mtp_ckpt_roundtrip.mtpc");
  save(path, ckpt);
  auto back = load(path);
  std::remove(path.c_str());

  REQUIRE(back.meta == ckpt.meta);
  REQUIRE(back.vocab_tokens == ckpt.vocab_tokens);
  REQUIRE(back.tensors.size() == 2);
  for (std::size_t t = 0; t < 2; ++t) {
    REQUIRE(back.tensors[t].first == ckpt.tensors[t].first);
    REQUIRE(back.tensors[t].second.shape() == ckpt.tensors[t].second.shape());
    for (std::size_t i = 0; i < ckpt.tensors[t].second.numel(); ++i) {
      // Values survive the f32 storage precision.
      REQUIRE(back.tensors[t].second[i] ==
              Catch::Approx(ckpt.tensors[t].second[i]).margin(1e-6));
    }
  }
}

TEST_CASE("saving the same checkpoint twice is byte-identical") {
  std::mt19937 rng(5);
  Checkpoint ckpt;
  ckpt.meta = "meta";
  ckpt.vocab_tokens = {"<unk>"};
  ckpt.tensors.emplace_back("w", Tensor::uniform({4, 4}, 1.0, rng));

  const std::string p1 = temp_path("mtp_ckpt_a.mtpc"), p2 = temp_path("mtp_ckpt_b.mtpc");
  save(p1, ckpt);
  save(p2, ckpt);
  REQUIRE(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("model parameters restore by name") {
  auto cfg = toy_config();
  auto src = model::Model::init(cfg, 11);
  auto dst = model::Model::init(cfg, 99);

  const std::string path = temp_path("mtp_ckpt_model.mtpc");
  save(path, from_model(src, "[run]\n[model]\n", {"<unk>"}));
  auto ckpt = load(path);
  std::remove(path.c_str());
  restore_params(dst, ckpt);

  for (std::size_t i = 0; i < src.params.entries.size(); ++i) {
    const auto& a = src.params.entries[i].value;
    const auto& b = dst.params.entries[i].value;
    for (std::size_t j = 0; j < a.numel(); ++j)
      REQUIRE(b[j] == Catch::Approx(a[j]).margin(1e-6));
  }
}

TEST_CASE("missing tensors and shape mismatches are errors") {
  auto cfg = toy_config();
  auto mdl = model::Model::init(cfg, 1);

  Checkpoint empty;
  empty.vocab_tokens = {"<unk>"};
  REQUIRE_THROWS_AS(restore_params(mdl, empty), std::runtime_error);

  auto full = from_model(mdl, "m", {"<unk>"});
  full.tensors[0].second = Tensor::zeros({1, 1});
  REQUIRE_THROWS_AS(restore_params(mdl, full), std::invalid_argument);
}

TEST_CASE("corrupt magic is rejected") {
  const std::string path = temp_path("mtp_ckpt_bad.mtpc");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE0000000000000000";
  }
  REQUIRE_THROWS(load(path));
  std::remove(path.c_str());
}
