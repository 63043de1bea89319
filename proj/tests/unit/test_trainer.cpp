#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "../support.hpp"
#include "gknet/checkpoint.hpp"
#include "gknet/errors.hpp"
#include "gknet/trainer.hpp"

using namespace gktest;
namespace fs = std::filesystem;

namespace {

std::vector<ImageTriple> synthetic_set(int count, int res, std::uint64_t seed) {
  std::vector<ImageTriple> out;
  SynthesisConfig cfg;
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i));
    auto real = quantize8(synthesize_scene(res, res, rng));
    auto t = synthesize_composite(real, cfg, rng, "t" + std::to_string(i));
    t.composite = quantize8(t.composite);
    out.push_back(std::move(t));
  }
  return out;
}

TrainConfig small_config(int res = 16) {
  TrainConfig c;
  c.network = tiny_config(2, res);
  c.batch_size = 2;
  c.epochs = 1000;
  c.lr = 1e-3;
  c.log_interval = 0;
  c.seed = 5;
  return c;
}

std::vector<double> loss_trace(TrainState& state, const std::vector<ImageTriple>& data, long long until,
                               std::vector<std::string>* ids = nullptr) {
  std::vector<double> losses;
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& log) {
    losses.push_back(log.loss);
    if (ids)
      for (const auto& id : log.batch_ids) ids->push_back(id);
  };
  train(state, data, nullptr, hooks, until);
  return losses;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("full-scale preset") {
  const auto c = TrainConfig::full_scale();
  CHECK(c.lr == 1e-4);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
  CHECK(c.eps == 1e-8);
  CHECK(c.epochs == 120);
  CHECK(c.batch_size == 16);
  CHECK(c.network.resolution == 256);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config validation") {
  auto c = small_config();
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.beta2 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("batch order covers each epoch once and depends only on (seed, step)") {
  auto c = small_config();
  c.batch_size = 3;
  CHECK(steps_per_epoch(10, 3) == 4);
  std::vector<int> seen;
  for (long long s = 0; s < 4; ++s) {
    auto b = batch_indices(c, 10, s);
    CHECK(b == batch_indices(c, 10, s));
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  REQUIRE(seen.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(seen[i] == i);
  auto other = c;
  other.seed = 6;
  bool differs = false;
  for (long long s = 0; s < 8; ++s) differs = differs || batch_indices(c, 10, s) != batch_indices(other, 10, s);
  CHECK(differs);
}

TEST_CASE("zero epochs leaves the model untouched") {
  auto data = synthetic_set(2, 16, 90);
  auto c = small_config();
  c.epochs = 0;
  TrainState state(c);
  auto before = export_parameters(state.model);
  auto losses = loss_trace(state, data, -1);
  CHECK(losses.empty());
  CHECK(state.step == 0);
  CHECK(export_parameters(state.model) == before);
}

TEST_CASE("single-sample overfit with a falling loss trend") {
  auto data = synthetic_set(1, 32, 91);
  auto c = small_config(32);
  c.batch_size = 1;
  c.max_steps = 500;
  TrainState state(c);
  auto losses = loss_trace(state, data, -1);
  REQUIRE(losses.size() == 500);
  MESSAGE("loss step 1 " << losses.front() << ", step 500 " << losses.back());
  CHECK(losses.back() < 0.01 * losses.front());

  // 100-step moving average after step 100: upward excursions stay within 5%.
  std::vector<double> avg;
  double window = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    window += losses[i];
    if (i >= 100) window -= losses[i - 100];
    if (i >= 199) avg.push_back(window / 100);
  }
  double low = avg.front();
  for (double a : avg) {
    CHECK(a <= 1.05 * low);
    low = std::min(low, a);
  }
}

TEST_CASE("identical seeds give bit-identical loss traces") {
  auto data = synthetic_set(4, 16, 92);
  auto c = small_config();
  TrainState a(c), b(c);
  CHECK(loss_trace(a, data, 12) == loss_trace(b, data, 12));
  CHECK(export_parameters(a.model) == export_parameters(b.model));
}

TEST_CASE("resume at step 10 reproduces uninterrupted training through step 20") {
  auto data = synthetic_set(5, 16, 93);
  auto c = small_config();
  const fs::path ckpt = fs::temp_directory_path() / "gknet_resume.ckpt";

  TrainState straight(c);
  std::vector<std::string> ids_straight;
  auto trace = loss_trace(straight, data, 20, &ids_straight);

  TrainState first(c);
  std::vector<std::string> ids;
  auto part1 = loss_trace(first, data, 10, &ids);
  save_train_state(ckpt, first);
  TrainState second = resume(ckpt, &c);
  CHECK(second.step == 10);
  auto part2 = loss_trace(second, data, 20, &ids);
  part1.insert(part1.end(), part2.begin(), part2.end());
  CHECK(part1 == trace);
  CHECK(ids == ids_straight);
  CHECK(export_parameters(second.model) == export_parameters(straight.model));

  auto altered = c;
  altered.network.base_channels = 4;
  CHECK_THROWS_AS(resume(ckpt, &altered), ConfigError);
  altered = c;
  altered.seed = 99;
  CHECK_THROWS_AS(resume(ckpt, &altered), ConfigError);
  fs::remove(ckpt);
}

TEST_CASE("identity-initialised model scores exactly the composite baseline") {
  auto data = synthetic_set(3, 16, 94);
  GKNet<float> net(tiny_config(2, 16), 3);
  auto a = evaluate(net, data), b = composite_baseline(data);
  CHECK(a.overall.mse == b.overall.mse);
  CHECK(a.overall.fmse == b.overall.fmse);
  CHECK_THROWS_AS(evaluate(net, std::vector<ImageTriple>{}), ConfigError);
}

TEST_CASE("log lines round-trip") {
  StepLog log;
  log.step = 42;
  log.loss = 0.0123456789;
  log.lr = 1e-4;
  log.seconds = 3.5;
  const auto line = format_log_line(log);
  long long step = 0;
  double loss = 0;
  REQUIRE(parse_log_line(line, step, loss));
  CHECK(step == 42);
  CHECK(loss == doctest::Approx(0.0123456789).epsilon(1e-8));
  CHECK_FALSE(parse_log_line("eval step=1 psnr=3", step, loss));
}

TEST_CASE("non-finite loss is reported with the offending sample") {
  auto data = synthetic_set(2, 16, 95);
  data[1].real[0] = std::numeric_limits<float>::quiet_NaN();
  data[1].mask[0] = 1.0f;
  auto c = small_config();
  TrainState state(c);
  try {
    train_step(state, data, {0, 1});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("t1") != std::string::npos);
  }
}

}
