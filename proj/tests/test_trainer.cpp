// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/dataset.hpp"
#include "gill/evalkit.hpp"
#include "gill/trainer.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace gill;
namespace fs = std::filesystem;

namespace {

struct Pool {
  FrozenBackbones bb = build_frozen(BackboneConfig{});
  std::vector<TrainingExample> examples;
  TargetCache targets;

  explicit Pool(int count) {
    ShapeworldSpec spec;
    spec.count = count;
    spec.distinct = 0;
    spec.heldout_count = 0;
    spec.candidate_count = count;
    examples = EvalCorpus::from_shapeworld(synthesize_shapeworld(spec), bb.vocab).train;
    std::vector<std::vector<int>> captions;
    for (const auto& ex : examples) captions.push_back(ex.caption);
    targets = precompute_targets(bb, captions);
  }
};

Pool& small_pool() {
  static Pool p(32);
  return p;
}

RunConfig small_run(int batch = 4) {
  RunConfig cfg;
  cfg.train.batch_size = batch;
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gill_test_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Trainer, AdamMatchesHandOracle) {
  Tensor p = Tensor::from({3}, Eigen::Vector3d(0.5, -1.0, 2.0), true);
  ParamList params{{"p", p}};
  AdamState state = AdamState::for_params(params);
  TrainConfig cfg;
  cfg.lr = 0.01;
  oracle::HandAdam hand{0.01};
  std::vector<double> mirror{0.5, -1.0, 2.0};
  Rng rng = make_rng(41, 0);
  for (int step = 0; step < 25; ++step) {
    Eigen::VectorXd g(3);
    for (auto& x : g) x = std::normal_distribution<double>(0, 1)(rng);
    p.zero_grad();
    accumulate_grad(*p.node(), g);
    adam_update(params, state, cfg);
    hand.step(mirror, {g[0], g[1], g[2]});
    for (int i = 0; i < 3; ++i) ASSERT_NEAR(p.data()[i], mirror[static_cast<std::size_t>(i)], 1e-14) << step;
  }
  EXPECT_EQ(state.step, 25);
}

TEST(Trainer, AdamSkipsParametersWithoutGradient) {
  Tensor p = Tensor::from({2}, Eigen::Vector2d(1, 2), true);
  ParamList params{{"p", p}};
  AdamState state = AdamState::for_params(params);
  adam_update(params, state, TrainConfig{});
  EXPECT_EQ(p.data(), Eigen::Vector2d(1, 2));
}

TEST(Trainer, ConfigValidation) {
  TrainConfig c;
  c.pack_probability = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Trainer, RunConfigJsonRoundTripAndUnknownKeys) {
  RunConfig cfg;
  cfg.adapter.mapper = MapperVariant::Mlp3;
  cfg.train.steps = 17;
  cfg.backbone.r = 3;
  const nlohmann::json j = cfg;
  const RunConfig back = j.get<RunConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  nlohmann::json bad = j;
  bad["train"]["learning_rate"] = 0.1;
  EXPECT_THROW(bad.get<RunConfig>(), std::exception);
  const RunConfig flat = nlohmann::json{{"lr", 0.25}, {"r", 2}}.get<RunConfig>();
  EXPECT_EQ(flat.train.lr, 0.25);
  EXPECT_EQ(flat.backbone.r, 2);
}

TEST(Trainer, SamplerVisitsEveryIndexOncePerEpoch) {
  BatchSampler s(10, 3);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<int> seen(10, 0);
    for (int i = 0; i < 10; ++i) ++seen[s.next()];
    EXPECT_EQ(seen, std::vector<int>(10, 1));
  }
  BatchSampler a(10, 3), b(10, 3);
  for (int i = 0; i < 25; ++i) EXPECT_EQ(a.next(), b.next());
  BatchSampler c(10, 3);
  for (int i = 0; i < 7; ++i) c.next();
  BatchSampler d(10, 99);
  d.restore(c.state());
  for (int i = 0; i < 25; ++i) EXPECT_EQ(c.next(), d.next());
}

TEST(Trainer, PackRateFollowsProbability) {
  auto& pool = small_pool();
  for (double prob : {0.0, 0.5, 1.0}) {
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.pack_probability = prob;
    BatchSampler sampler(pool.examples.size(), 5);
    int packed = 0, total = 0;
    for (int b = 0; b < 40; ++b) {
      for (const auto& item : pack_batch(sampler, pool.examples, cfg)) {
        const auto n = item.image_count();
        ASSERT_TRUE(n == 1 || n == 2);
        packed += n == 2;
        ++total;
      }
    }
    const double rate = static_cast<double>(packed) / total;
    // 1280 Bernoulli draws: 5 standard deviations at p = 0.5 is about 0.07.
    EXPECT_NEAR(rate, prob, 0.07) << prob;
  }
}

TEST(Trainer, TargetCacheRoundTripAndCollisions) {
  auto& pool = small_pool();
  const fs::path dir = scratch_dir("cache");
  pool.targets.save(dir / "targets.gill");
  const TargetCache back = TargetCache::load(dir / "targets.gill");
  EXPECT_EQ(back.size(), pool.targets.size());
  for (const auto& ex : pool.examples) {
    ASSERT_NE(back.find(ex.caption), nullptr);
    EXPECT_LE((*back.find(ex.caption) - *pool.targets.find(ex.caption)).cwiseAbs().maxCoeff(), 1e-6);
  }
  EXPECT_EQ(back.find({4, 4, 4, 4, 4}), nullptr);

  TargetCache colliding([](const std::vector<int>&) { return std::uint64_t{7}; });
  colliding.insert({1, 2}, RowMatrix::Zero(2, 2));
  colliding.insert({1, 2}, RowMatrix::Ones(2, 2));
  EXPECT_EQ(colliding.size(), 1u);
  EXPECT_THROW(colliding.insert({2, 1}, RowMatrix::Zero(2, 2)), std::runtime_error);
  EXPECT_EQ(colliding.find({2, 1}), nullptr);
  EXPECT_NE(TargetCache::fnv1a({1, 2}), TargetCache::fnv1a({2, 1}));
}

TEST(Trainer, ContainerDecodeRejectsCorruption) {
  Container c;
  c.meta["k"] = 1;
  c.arrays.push_back({"a", {2, 2}, Eigen::Vector4d(1, 2, 3, 4)});
  const auto bytes = encode_container(c);
  const Container back = decode_container(bytes);
  EXPECT_EQ(back.at("a").values, c.arrays[0].values);
  EXPECT_EQ(back.meta, c.meta);
  for (std::size_t cut : {std::size_t{0}, std::size_t{7}, std::size_t{15}, bytes.size() - 1}) {
    EXPECT_THROW(decode_container(std::span(bytes.data(), cut)), FormatError) << cut;
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_container(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 99;
  EXPECT_THROW(decode_container(bad_version), FormatError);
  EXPECT_THROW(back.at("missing"), std::exception);
}

TEST(Trainer, CheckpointSaveLoadSaveIsByteIdentical) {
  auto& pool = small_pool();
  TrainState state = TrainState::fresh(small_run(), pool.examples.size());
  for (int i = 0; i < 2; ++i) train_one(pool.bb, state, pool.examples, &pool.targets);
  const fs::path dir = scratch_dir("ckpt");
  save_checkpoint(dir / "a.gill", state);
  save_checkpoint(dir / "b.gill", load_checkpoint(dir / "a.gill"));
  EXPECT_EQ(read_file_bytes(dir / "a.gill"), read_file_bytes(dir / "b.gill"));

  const TrainState back = load_checkpoint(dir / "a.gill");
  EXPECT_EQ(back.step, 2);
  const ParamList a = state.adapters.parameters(), b = back.adapters.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_LE((a[i].tensor.data() - b[i].tensor.data()).cwiseAbs().maxCoeff(), 1e-6) << a[i].name;
  }

  auto bytes = read_file_bytes(dir / "a.gill");
  bytes.resize(bytes.size() / 2);
  write_file_bytes(dir / "truncated.gill", bytes);
  EXPECT_THROW(load_checkpoint(dir / "truncated.gill"), FormatError);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  auto& pool = small_pool();
  const RunConfig cfg = small_run();
  TrainState straight = TrainState::fresh(cfg, pool.examples.size());
  std::vector<double> expected;
  for (int i = 0; i < 6; ++i) expected.push_back(train_one(pool.bb, straight, pool.examples, &pool.targets).total);

  TrainState first = TrainState::fresh(cfg, pool.examples.size());
  for (int i = 0; i < 3; ++i) train_one(pool.bb, first, pool.examples, &pool.targets);
  const fs::path dir = scratch_dir("resume");
  save_checkpoint(dir / "mid.gill", first);
  TrainState resumed = load_checkpoint(dir / "mid.gill");
  for (int i = 3; i < 6; ++i) {
    EXPECT_NEAR(train_one(pool.bb, resumed, pool.examples, &pool.targets).total, expected[static_cast<std::size_t>(i)],
                1e-5)
        << "step " << i;
  }
}

TEST(Trainer, IdenticalSeedsGiveIdenticalTrajectories) {
  auto& pool = small_pool();
  TrainState a = TrainState::fresh(small_run(), pool.examples.size());
  TrainState b = TrainState::fresh(small_run(), pool.examples.size());
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(train_one(pool.bb, a, pool.examples, &pool.targets).total,
              train_one(pool.bb, b, pool.examples, &pool.targets).total);
  }
}

TEST(Trainer, EveryStepLeavesFrozenChecksumUnchanged) {
  auto& pool = small_pool();
  const std::string before = pool.bb.checksum();
  TrainState state = TrainState::fresh(small_run(), pool.examples.size());
  for (int i = 0; i < 3; ++i) {
    train_one(pool.bb, state, pool.examples, &pool.targets);
    EXPECT_EQ(pool.bb.checksum(), before) << "after step " << i + 1;
  }
  EXPECT_EQ(state.adam.step, 3);
}

TEST(Trainer, NonFiniteLossIsReported) {
  auto& pool = small_pool();
  TrainState state = TrainState::fresh(small_run(), pool.examples.size());
  state.adapters.img_embeds.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train_one(pool.bb, state, pool.examples, &pool.targets), std::runtime_error);
}

TEST(Trainer, OverfitSetLossDropsByStep500) {
  auto& pool = small_pool();
  RunConfig cfg = small_run(32);
  TrainState state = TrainState::fresh(cfg, pool.examples.size());
  const double first = train_one(pool.bb, state, pool.examples, &pool.targets).total;
  double last = first;
  while (state.step < 500) last = train_one(pool.bb, state, pool.examples, &pool.targets).total;
  EXPECT_LT(last, first);
}
