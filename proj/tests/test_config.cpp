#include <catch_amalgamated.hpp>

#include <sstream>

#include "mtp/config.hpp"

using namespace mtp::config;

TEST_CASE("config parses key = value lines with comments and blanks") {
  std::istringstream in(
      "# run settings\n"
      "dataset = data/train.ts\n"
      "\n"
      "format = ucr\n"
      "epochs = 7\n"
      "lr = 0.0005\n"
      "drop_text = 1\n"
      "text_position = route 66 northbound\n");
  auto cfg = parse(in);
  REQUIRE(cfg.dataset == "data/train.ts");
  REQUIRE(cfg.epochs == 7);
  REQUIRE(cfg.lr == Catch::Approx(0.0005));
  REQUIRE(cfg.drop_text);
  REQUIRE_FALSE(cfg.drop_vision);
  REQUIRE(cfg.text_position == "route 66 northbound");
  // Unspecified keys keep defaults.
  REQUIRE(cfg.tau == Catch::Approx(0.07));
  REQUIRE(cfg.batch_size == 64);
}

TEST_CASE("unknown keys and malformed lines are rejected with line numbers") {
  std::istringstream bad_key("dataset = x\nlearning_rate = 0.1\n");
  REQUIRE_THROWS_WITH(parse(bad_key), Catch::Matchers::ContainsSubstring("learning_rate"));

  std::istringstream no_eq("dataset = x\njust some words\n");
  REQUIRE_THROWS_WITH(parse(no_eq), Catch::Matchers::ContainsSubstring("line 2"));

  std::istringstream bad_bool("drop_vision = yes\n");
  REQUIRE_THROWS_AS(parse(bad_bool), std::invalid_argument);
}

TEST_CASE("echo round-trips every field") {
  std::istringstream in(
      "dataset = a.ts\n"
      "test_dataset = b.ts\n"
      "split_mode = archive\n"
      "epochs = 3\n"
      "alpha = 0.25\n"
      "seed = 99\n"
      "drop_vision = 1\n"
      "out_dir = /tmp/xyz\n");
  auto cfg = parse(in);
  std::istringstream echoed(echo(cfg));
  auto cfg2 = parse(echoed);
  REQUIRE(echo(cfg2) == echo(cfg));
  REQUIRE(cfg2.alpha == cfg.alpha);
  REQUIRE(cfg2.seed == cfg.seed);
  REQUIRE(cfg2.split_mode == "archive");
}

TEST_CASE("validation enforces the run-config invariants") {
  RunConfig cfg;
  cfg.dataset = "x.ts";
  REQUIRE_NOTHROW(cfg.validate());

  SECTION("dataset required") {
    cfg.dataset = "";
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("archive mode needs a test file") {
    cfg.split_mode = "archive";
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.test_dataset = "y.ts";
    REQUIRE_NOTHROW(cfg.validate());
  }
  SECTION("at most two ablation flags") {
    cfg.drop_vision = true;
    cfg.drop_text = true;
    REQUIRE_NOTHROW(cfg.validate());
    cfg.drop_timeseries = true;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("format whitelist") {
    cfg.format = "parquet";
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("positive temperature") {
    cfg.tau = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}
