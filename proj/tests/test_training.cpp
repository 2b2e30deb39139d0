#include <doctest.h>

#include <filesystem>

#include "iterflow/training.hpp"

using namespace iterflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("iterflow_" + name);
  fs::remove_all(dir);
  return dir;
}

training::RunConfig tiny_config() {
  training::RunConfig c;
  c.num_points = 64;
  c.model.iterations = 4;
  c.epochs = 5;
  c.seed = 3;
  return c;
}

// 20 scenes: 16 training, 4 validation
const dataset::Split& tiny_split() {
  static const dataset::Split split = [] {
    dataset::GenerateSpec g;
    g.num_scenes = 20;
    g.seed = 500;
    const auto dir = scratch("tiny_data");
    dataset::generate_dataset(g, dir);
    auto s = dataset::load_dataset(dir, tiny_config().sample_options());
    fs::remove_all(dir);
    return s;
  }();
  return split;
}

double mean_loss(const training::RunConfig& cfg, const ad::ParamStore& params) {
  std::vector<const dataset::Sample*> all;
  for (const auto& s : tiny_split().train) all.push_back(&s);
  auto m = cfg.model;
  m.seed = cfg.seed;
  return training::batch_gradients(params, m, all).loss.total;
}

}  // namespace

TEST_CASE("run config round trip") {
  auto c = tiny_config();
  c.learning_rate = 5e-4;
  c.model.encoder_radii = {1.5, 3.0, 6.0};
  c.model.product = model::CorrelationProduct::kInner;
  c.flow_unit = labeling::FlowUnit::kVelocity;
  auto back = training::RunConfig::from_key_values(c.to_key_values());
  CHECK(back.to_key_values() == c.to_key_values());
  CHECK(back.model.encoder_radii.size() == 3);
  CHECK_THROWS(training::RunConfig::from_key_values({{"lerning_rate", "1"}}));
  CHECK_THROWS(training::RunConfig::from_key_values({{"batch_size", "0"}}));
}

TEST_CASE("dataset split by seed") {
  const auto& s = tiny_split();
  CHECK(s.train.size() == 16);
  CHECK(s.validation.size() == 4);
  for (const auto& v : s.validation) CHECK(dataset::is_validation_seed(v.seed));
  for (const auto& t : s.train) {
    CHECK(t.source.size() == 64);
    CHECK(t.target.size() == 64);
  }
}

TEST_CASE("training frames are kept for resampling") {
  const auto& s = tiny_split();
  REQUIRE(s.train_pairs.size() == s.train.size());
  auto opts = tiny_config().sample_options();
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    const auto again = dataset::prepare_sample(s.train_pairs[i], opts, s.train[i].name);
    CHECK(again.source.positions == s.train[i].source.positions);
    CHECK(again.static_set == s.train[i].static_set);
  }
  opts.seed += 1;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < s.train.size(); ++i)
    changed += dataset::prepare_sample(s.train_pairs[i], opts).source.positions != s.train[i].source.positions;
  CHECK(changed > 0);

  auto fixed = tiny_config();
  fixed.epochs = 1;
  fixed.resample_points = false;
  auto fresh = fixed;
  fresh.resample_points = true;
  auto a = training::initial_state(fixed), b = training::initial_state(fresh);
  training::train(fixed, s, a, {});
  training::train(fresh, s, b, {});
  CHECK(a.params.tensors()[0].data()[0] != b.params.tensors()[0].data()[0]);
}

TEST_CASE("checkpoint round trip is exact") {
  auto cfg = tiny_config();
  auto state = training::initial_state(cfg);
  state.adam.step = 3;
  state.adam.first_moment[0][0] = 0.125;
  state.rng.discard(17);
  state.history.push_back({1, {0.5, 0.25, 0.125, 0.875}, 0.3});
  const auto bytes = training::encode_checkpoint(cfg, state);
  auto [cfg2, st2] = training::decode_checkpoint(bytes);
  CHECK(training::encode_checkpoint(cfg2, st2) == bytes);
  CHECK(st2.rng == state.rng);
  CHECK(st2.history[0].loss.total == 0.875);
  CHECK_THROWS(training::decode_checkpoint(bytes.substr(0, bytes.size() / 2)));
}

TEST_CASE("batch gradients do not depend on thread count") {
  auto cfg = tiny_config();
  auto params = model::init_params(cfg.model);
  std::vector<const dataset::Sample*> batch;
  for (std::size_t i = 0; i < 5; ++i) batch.push_back(&tiny_split().train[i]);
  auto a = training::batch_gradients(params, cfg.model, batch, 1);
  auto b = training::batch_gradients(params, cfg.model, batch, 3);
  CHECK(a.gradients == b.gradients);
  CHECK(a.loss.total == b.loss.total);
}

TEST_CASE("zero epochs writes the initial checkpoint only") {
  auto cfg = tiny_config();
  cfg.epochs = 0;
  const auto dir = scratch("zero_epochs");
  auto state = training::initial_state(cfg);
  training::train(cfg, tiny_split(), state, dir);
  CHECK(fs::exists(dir / training::checkpoint_name(0)));
  CHECK(!fs::exists(dir / "final.ifc"));
  CHECK(state.epoch == 0);
  fs::remove_all(dir);
}

TEST_CASE("a short run lowers the loss and resumes exactly") {
  auto cfg = tiny_config();
  cfg.checkpoint_every = 2;
  const auto dir = scratch("short_run");
  auto state = training::initial_state(cfg);
  const double before = mean_loss(cfg, state.params);
  training::train(cfg, tiny_split(), state, dir);
  const double after = mean_loss(cfg, state.params);
  CHECK(after < before);
  REQUIRE(state.history.size() == 5);
  CHECK(state.history.back().loss.total < state.history.front().loss.total);
  CHECK(fs::exists(dir / "final.ifc"));
  CHECK(fs::exists(dir / training::checkpoint_name(4)));
  CHECK(fs::exists(dir / training::checkpoint_name(5)));

  auto [cfg2, resumed] = training::load_checkpoint(dir / training::checkpoint_name(2));
  CHECK(resumed.epoch == 2);
  const auto dir2 = scratch("short_run_resumed");
  training::train(cfg2, tiny_split(), resumed, dir2);
  CHECK(io::read_file(dir2 / "final.ifc") == io::read_file(dir / "final.ifc"));
  CHECK(io::read_file(dir2 / "train_log.csv") == io::read_file(dir / "train_log.csv"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("non-finite parameters abort training") {
  auto cfg = tiny_config();
  const auto dir = scratch("nan_run");
  auto state = training::initial_state(cfg);
  state.params.get("head.1.b").mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    training::train(cfg, tiny_split(), state, dir);
    FAIL("expected TrainingAborted");
  } catch (const training::TrainingAborted& e) {
    CHECK(std::string(e.what()).find(training::checkpoint_name(0)) != std::string::npos);
  }
  CHECK(fs::exists(dir / training::checkpoint_name(0)));
  CHECK(!fs::exists(dir / "final.ifc"));
  fs::remove_all(dir);
}

TEST_CASE("baseline predictors") {
  auto cfg = tiny_config();
  auto gt = training::evaluate_samples(tiny_split().validation, cfg, nullptr, training::Predictor::kGroundTruth);
  CHECK(gt.report.epe == 0.0);
  CHECK(gt.report.acc_s == 1.0);
  CHECK(gt.scenes.size() == tiny_split().validation.size());

  synth::SceneSpec still;
  still.seed = 1;
  auto sample = dataset::prepare_sample(synth::generate_pair(still), cfg.sample_options(), "still");
  auto zero = training::evaluate_samples({sample}, cfg, nullptr, training::Predictor::kZero);
  CHECK(zero.report.epe == 0.0);
  CHECK_THROWS(training::evaluate_samples({sample}, cfg, nullptr, training::Predictor::kModel));
}

TEST_CASE("sweeps") {
  auto cfg = tiny_config();
  auto params = model::init_params(cfg.model);
  auto rows = training::sweep_eval(tiny_split().validation, cfg, params, training::SweepAxis::kIterations, {1, 4, 12});
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(std::isfinite(r.report.three_way.mean));
  auto radius = training::sweep_eval(tiny_split().validation, cfg, params, training::SweepAxis::kRadius, {0.5, 1, 2});
  CHECK(radius.size() == 3);
  CHECK_THROWS(training::sweep_eval(tiny_split().validation, cfg, params, training::SweepAxis::kNeighbors, {}));
  CHECK_THROWS(training::sweep_train(tiny_split(), cfg, training::SweepAxis::kNeighbors, {}));
  CHECK(training::parse_sweep_axis("K") == training::SweepAxis::kIterations);
  CHECK_THROWS(training::parse_sweep_axis("Q"));
}
