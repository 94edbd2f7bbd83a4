// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/adapters.hpp"
#include "gill/checkpoint.hpp"
#include "gill/losses.hpp"
#include "gill/target_cache.hpp"

#include "json.hpp"

#include <filesystem>
#include <random>
#include <vector>

namespace gill {

struct TrainConfig {
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int steps = 2000;
  double pack_probability = 0.5;
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // 0 disables periodic checkpoints
  double grad_clip = 0.0;       // global-norm clip; 0 disables
  LossOptions losses{};

  void validate() const;
};

/// Everything a run needs to be reconstructed.
struct RunConfig {
  BackboneConfig backbone;
  AdapterConfig adapter;
  TrainConfig train;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);
void to_json(nlohmann::json& j, const AdapterConfig& c);
void from_json(const nlohmann::json& j, AdapterConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
/// Accepts either nested {"backbone":…, "adapter":…, "train":…} or flat keys. Unknown keys throw.
void from_json(const nlohmann::json& j, RunConfig& c);

struct AdamState {
  std::vector<Eigen::VectorXd> m, v;
  std::int64_t step = 0;

  static AdamState for_params(const ParamList& params);
};

/// Bias-corrected Adam update of every parameter that has a gradient.
void adam_update(ParamList& params, AdamState& state, const TrainConfig& cfg);

/// Epoch-wise reshuffled index stream.
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(std::size_t pool_size, std::uint64_t seed);
  std::size_t next();
  double uniform();

  nlohmann::json state() const;
  void restore(const nlohmann::json& s);

 private:
  void reshuffle();
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

MultimodalSequence make_sequence(const std::vector<const TrainingExample*>& parts);

/// With probability pack_probability an item interleaves two examples, otherwise one.
std::vector<MultimodalSequence> pack_batch(BatchSampler& sampler, const std::vector<TrainingExample>& pool,
                                           const TrainConfig& cfg);

struct TrainState {
  RunConfig config;
  AdapterSet adapters;
  AdamState adam;
  BatchSampler sampler;
  std::int64_t step = 0;

  static TrainState fresh(const RunConfig& cfg, std::size_t pool_size);
};

/// One optimizer step on `batch`; returns the pre-update losses. Throws on a
/// non-finite loss, naming the component.
LossBreakdown train_step(const FrozenBackbones& backbones, TrainState& state,
                         const std::vector<MultimodalSequence>& batch, const TargetCache* targets);

/// Packs a batch from the pool and runs train_step.
LossBreakdown train_one(const FrozenBackbones& backbones, TrainState& state,
                        const std::vector<TrainingExample>& pool, const TargetCache* targets);

Container checkpoint_container(const TrainState& state);
TrainState state_from_container(const Container& c);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Adapter-only parameter view used by inference.
AdapterSet load_adapters(const std::filesystem::path& path, RunConfig* config = nullptr);

/// Frozen networks in the shared container format.
Container backbones_container(const FrozenBackbones& b);
/// Rebuilds from the stored config and overwrites every weight; verifies the checksum when present.
FrozenBackbones backbones_from_container(const Container& c);

}  // namespace gill
