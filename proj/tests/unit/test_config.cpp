#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gknet/config.hpp"
#include "gknet/errors.hpp"

using namespace gknet;

TEST_SUITE("config") {

TEST_CASE("round trip through JSON") {
  ConfigFile c;
  c.network.depth = 4;
  c.network.kernel_sizes = {3, 5, 5, 3};
  c.network.transformer.heads = 2;
  c.train.lr = 3e-4;
  c.train.loss.a_min = 50;
  c.train.checkpoint_dir = "ckpt";
  c.synthesis.gamma = {0.8, 1.2};
  const json j = to_json(c);
  ConfigFile back = parse_config(j);
  CHECK(back.network == c.network);
  CHECK(back.synthesis == c.synthesis);
  back.train.network = c.train.network;
  CHECK(back.train == c.train);
}

TEST_CASE("missing keys keep defaults") {
  ConfigFile c = parse_config(json::parse(R"({"train": {"lr": 0.002}})"));
  CHECK(c.train.lr == 0.002);
  CHECK(c.train.batch_size == TrainConfig::desk().batch_size);
  CHECK(c.network == NetworkConfig::desk());
}

TEST_CASE("unknown keys are rejected with their path") {
  auto bad = [](const char* text) { return parse_config(json::parse(text)); };
  CHECK_THROWS_AS(bad(R"({"netwrk": {}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"network": {"depht": 3}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"train": {"loss": {"amin": 3}}})"), ConfigError);
  try {
    bad(R"({"network": {"transformer": {"head": 2}}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("network.transformer.head") != std::string::npos);
  }
}

TEST_CASE("wrong value types are configuration errors") {
  CHECK_THROWS_AS(parse_config(json::parse(R"({"train": {"lr": "fast"}})")), ConfigError);
}

TEST_CASE("config file with comments sets the training network") {
  const auto path = std::filesystem::temp_directory_path() / "gknet_config.json";
  {
    std::ofstream os(path);
    os << "{\n  // smaller model\n  \"network\": {\"base_channels\": 8},\n  \"train\": {\"seed\": 3}\n}\n";
  }
  ConfigFile c = load_config_file(path);
  CHECK(c.network.base_channels == 8);
  CHECK(c.train.network.base_channels == 8);
  CHECK(c.train.seed == 3);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config_file(path), ConfigError);
}

}
