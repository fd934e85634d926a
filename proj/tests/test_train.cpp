#include <catch_amalgamated.hpp>

#include <random>

#include "mtp/train.hpp"
#include "synthetic.hpp"

using namespace mtp;

namespace {

model::ModelConfig tiny_config(int series_len, int vocab_size) {
  model::ModelConfig cfg;
  cfg.series_len = series_len;
  cfg.channels = 1;
  cfg.embed_dim = 8;
  cfg.fusion_dim = 16;
  cfg.depth = 1;
  cfg.taps = 5;
  cfg.filters = 2;
  cfg.pool_width = 3;
  cfg.phi = 8.0;
  cfg.image_size = 16;
  cfg.num_classes = 2;
  cfg.vocab_size = vocab_size;
  return cfg;
}

}  // namespace

TEST_CASE("training reduces the loss and beats chance on separable data") {
  testutil::WaveSpec spec;
  spec.length = 16;
  spec.fast_cycles = 5.0;
  spec.noise = 0.15;
  auto train_set = testutil::encoded_waves(10, spec, 1, 11);
  auto val_set = testutil::encoded_waves(8, spec, 2, 11);

  auto cfg = tiny_config(spec.length, 11);
  auto mdl = model::Model::init(cfg, 7);

  train::TrainConfig tcfg;
  tcfg.lr = 1e-2;
  tcfg.epochs = 25;
  tcfg.batch_size = 10;
  tcfg.seed = 7;
  auto history = train::train_epochs(mdl, train_set, val_set, tcfg);

  REQUIRE(history.size() == 25);
  for (const auto& rec : history) {
    REQUIRE(std::isfinite(rec.total));
    REQUIRE(rec.ce >= 0.0);
  }
  REQUIRE(history.back().total < history.front().total);
  REQUIRE(history.back().val_accuracy > 0.6);

  auto report = train::evaluate(mdl, val_set);
  REQUIRE(report.accuracy == history.back().val_accuracy);
  REQUIRE(report.class_count == 2);
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
  testutil::WaveSpec spec;
  spec.length = 12;
  auto data = testutil::encoded_waves(6, spec, 3, 9);
  auto cfg = tiny_config(spec.length, 9);

  train::TrainConfig tcfg;
  tcfg.lr = 1e-3;
  tcfg.epochs = 3;
  tcfg.batch_size = 4;
  tcfg.seed = 21;

  auto m1 = model::Model::init(cfg, 5);
  auto h1 = train::train_epochs(m1, data, data, tcfg);
  auto m2 = model::Model::init(cfg, 5);
  auto h2 = train::train_epochs(m2, data, data, tcfg);

  for (std::size_t i = 0; i < m1.params.entries.size(); ++i)
    REQUIRE(m1.params.entries[i].value.vec() == m2.params.entries[i].value.vec());
  REQUIRE(h1.size() == h2.size());
  for (std::size_t e = 0; e < h1.size(); ++e) {
    REQUIRE(h1[e].total == h2[e].total);
    REQUIRE(h1[e].val_accuracy == h2[e].val_accuracy);
  }

  // A different seed must change the trajectory.
  auto m3 = model::Model::init(cfg, 6);
  tcfg.seed = 22;
  auto h3 = train::train_epochs(m3, data, data, tcfg);
  bool same = true;
  for (std::size_t i = 0; i < m1.params.entries.size() && same; ++i)
    same = m1.params.entries[i].value.vec() == m3.params.entries[i].value.vec();
  REQUIRE_FALSE(same);
}

TEST_CASE("weight decay is decoupled: zero-gradient parameters still shrink") {
  testutil::WaveSpec spec;
  spec.length = 12;
  auto data = testutil::encoded_waves(4, spec, 4, 9);
  auto cfg = tiny_config(spec.length, 9);
  cfg.drop_vision = true;  // vision parameters never enter the graph
  auto mdl = model::Model::init(cfg, 8);

  const Tensor before = mdl.params[mdl.conv1d_k].value;
  train::TrainConfig tcfg;
  tcfg.lr = 1e-3;
  tcfg.weight_decay = 0.5;
  tcfg.epochs = 2;
  tcfg.batch_size = 4;
  tcfg.seed = 1;
  train::train_epochs(mdl, data, data, tcfg);
  const Tensor& after = mdl.params[mdl.conv1d_k].value;
  for (std::size_t i = 0; i < before.numel(); ++i)
    REQUIRE(std::abs(after[i]) < std::abs(before[i]) + 1e-15);
}

TEST_CASE("training rejects unlabeled instances and empty sets") {
  testutil::WaveSpec spec;
  spec.length = 12;
  auto data = testutil::encoded_waves(3, spec, 5, 9);
  auto cfg = tiny_config(spec.length, 9);
  auto mdl = model::Model::init(cfg, 1);

  train::TrainConfig tcfg;
  tcfg.epochs = 1;
  REQUIRE_THROWS_AS(train::train_epochs(mdl, {}, data, tcfg), std::invalid_argument);

  auto bad = data;
  bad[0].label = data::kUnlabeled;
  REQUIRE_THROWS_AS(train::train_epochs(mdl, bad, data, tcfg), std::invalid_argument);
  REQUIRE_THROWS_AS(train::evaluate(mdl, bad), std::invalid_argument);
}
