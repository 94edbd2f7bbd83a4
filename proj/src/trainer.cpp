// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace gill {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const std::set<std::string> kBackboneKeys = {"V", "r", "e", "d", "L", "c", "n_layer", "n_head",
                                             "H", "W", "C", "max_positions", "seed"};
const std::set<std::string> kAdapterKeys = {"k", "p", "m", "mapper_heads", "mapper", "mlp_hidden",
                                            "mlp_slope", "tau", "img_embed_std", "seed"};
const std::set<std::string> kTrainKeys = {"lr", "adam_beta1", "adam_beta2", "adam_eps", "batch_size", "steps",
                                          "pack_probability", "seed", "checkpoint_interval", "grad_clip",
                                          "use_caption", "use_img_pred", "use_gen", "use_retrieval",
                                          "gen_sum_reduction"};

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("train config: lr must be positive");
  if (!(pack_probability >= 0 && pack_probability <= 1)) {
    throw std::invalid_argument("train config: pack_probability must lie in [0, 1]");
  }
  if (batch_size <= 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (steps < 0) throw std::invalid_argument("train config: steps must be non-negative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw std::invalid_argument("train config: Adam betas must lie in [0, 1)");
  }
}

void to_json(json& j, const BackboneConfig& c) {
  j = json{{"V", c.V}, {"r", c.r}, {"e", c.e}, {"d", c.d}, {"L", c.L}, {"c", c.c}, {"n_layer", c.n_layer},
           {"n_head", c.n_head}, {"H", c.H}, {"W", c.W}, {"C", c.C}, {"max_positions", c.max_positions},
           {"seed", c.seed}};
}

void from_json(const json& j, BackboneConfig& c) {
  reject_unknown(j, kBackboneKeys, "backbone config");
  read_opt(j, "V", c.V);
  read_opt(j, "r", c.r);
  read_opt(j, "e", c.e);
  read_opt(j, "d", c.d);
  read_opt(j, "L", c.L);
  read_opt(j, "c", c.c);
  read_opt(j, "n_layer", c.n_layer);
  read_opt(j, "n_head", c.n_head);
  read_opt(j, "H", c.H);
  read_opt(j, "W", c.W);
  read_opt(j, "C", c.C);
  read_opt(j, "max_positions", c.max_positions);
  read_opt(j, "seed", c.seed);
}

void to_json(json& j, const AdapterConfig& c) {
  j = json{{"k", c.k}, {"p", c.p}, {"m", c.m}, {"mapper_heads", c.mapper_heads},
           {"mapper", std::string(to_string(c.mapper))}, {"mlp_hidden", c.mlp_hidden},
           {"mlp_slope", c.mlp_slope}, {"tau", c.tau}, {"img_embed_std", c.img_embed_std}, {"seed", c.seed}};
}

void from_json(const json& j, AdapterConfig& c) {
  reject_unknown(j, kAdapterKeys, "adapter config");
  read_opt(j, "k", c.k);
  read_opt(j, "p", c.p);
  read_opt(j, "m", c.m);
  read_opt(j, "mapper_heads", c.mapper_heads);
  if (j.contains("mapper")) c.mapper = parse_mapper_variant(j.at("mapper").get<std::string>());
  read_opt(j, "mlp_hidden", c.mlp_hidden);
  read_opt(j, "mlp_slope", c.mlp_slope);
  read_opt(j, "tau", c.tau);
  read_opt(j, "img_embed_std", c.img_embed_std);
  read_opt(j, "seed", c.seed);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr", c.lr},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"batch_size", c.batch_size},
           {"steps", c.steps},
           {"pack_probability", c.pack_probability},
           {"seed", c.seed},
           {"checkpoint_interval", c.checkpoint_interval},
           {"grad_clip", c.grad_clip},
           {"use_caption", c.losses.use_caption},
           {"use_img_pred", c.losses.use_img_pred},
           {"use_gen", c.losses.use_gen},
           {"use_retrieval", c.losses.use_retrieval},
           {"gen_sum_reduction", c.losses.gen_sum_reduction}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j, kTrainKeys, "train config");
  read_opt(j, "lr", c.lr);
  read_opt(j, "adam_beta1", c.adam_beta1);
  read_opt(j, "adam_beta2", c.adam_beta2);
  read_opt(j, "adam_eps", c.adam_eps);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "steps", c.steps);
  read_opt(j, "pack_probability", c.pack_probability);
  read_opt(j, "seed", c.seed);
  read_opt(j, "checkpoint_interval", c.checkpoint_interval);
  read_opt(j, "grad_clip", c.grad_clip);
  read_opt(j, "use_caption", c.losses.use_caption);
  read_opt(j, "use_img_pred", c.losses.use_img_pred);
  read_opt(j, "use_gen", c.losses.use_gen);
  read_opt(j, "use_retrieval", c.losses.use_retrieval);
  read_opt(j, "gen_sum_reduction", c.losses.gen_sum_reduction);
}

void to_json(json& j, const RunConfig& c) { j = json{{"backbone", c.backbone}, {"adapter", c.adapter}, {"train", c.train}}; }

void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("run config: expected a JSON object");
  const bool nested = j.contains("backbone") || j.contains("adapter") || j.contains("train");
  if (nested) {
    reject_unknown(j, {"backbone", "adapter", "train"}, "run config");
    if (j.contains("backbone")) c.backbone = j.at("backbone").get<BackboneConfig>();
    if (j.contains("adapter")) c.adapter = j.at("adapter").get<AdapterConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  } else {
    // Flat layout: one namespace, a single "seed" drives every stream.
    json b = json::object(), a = json::object(), t = json::object();
    for (const auto& [key, value] : j.items()) {
      bool used = false;
      if (kBackboneKeys.count(key)) b[key] = value, used = true;
      if (kAdapterKeys.count(key)) a[key] = value, used = true;
      if (kTrainKeys.count(key)) t[key] = value, used = true;
      if (!used) throw std::invalid_argument("run config: unknown key '" + key + "'");
    }
    c.backbone = b.get<BackboneConfig>();
    c.adapter = a.get<AdapterConfig>();
    c.train = t.get<TrainConfig>();
  }
  c.backbone.validate();
  c.adapter.validate();
  c.train.validate();
}

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::for_params(const ParamList& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(Eigen::VectorXd::Zero(p.tensor.size()));
    s.v.push_back(Eigen::VectorXd::Zero(p.tensor.size()));
  }
  return s;
}

void adam_update(ParamList& params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.size() != params.size()) throw std::logic_error("adam: state does not match the parameter list");
  double clip_scale = 1.0;
  if (cfg.grad_clip > 0) {
    double sq = 0.0;
    for (const auto& p : params) {
      if (p.tensor.has_grad()) sq += p.tensor.grad().squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    if (!p.has_grad()) continue;
    const Eigen::VectorXd g = clip_scale * p.grad();
    state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * g;
    state.v[i] = cfg.adam_beta2 * state.v[i] + (1.0 - cfg.adam_beta2) * g.cwiseAbs2();
    p.mutable_data().array() -=
        cfg.lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + cfg.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Sampling and packing

BatchSampler::BatchSampler(std::size_t pool_size, std::uint64_t seed) : rng_(make_rng(seed, 200)) {
  if (pool_size == 0) throw std::invalid_argument("sampler: empty pool");
  order_.resize(pool_size);
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::size_t BatchSampler::next() {
  if (order_.empty()) throw std::logic_error("sampler: not initialized");
  if (cursor_ == order_.size()) reshuffle();
  return order_[cursor_++];
}

double BatchSampler::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

json BatchSampler::state() const {
  std::ostringstream os;
  os << rng_;
  return json{{"rng", os.str()}, {"order", order_}, {"cursor", cursor_}};
}

void BatchSampler::restore(const json& s) {
  std::istringstream is(s.at("rng").get<std::string>());
  is >> rng_;
  if (!is) throw FormatError("sampler: corrupt rng state");
  order_ = s.at("order").get<std::vector<std::size_t>>();
  cursor_ = s.at("cursor").get<std::size_t>();
  if (cursor_ > order_.size()) throw FormatError("sampler: cursor out of range");
}

MultimodalSequence make_sequence(const std::vector<const TrainingExample*>& parts) {
  MultimodalSequence seq;
  for (const auto* ex : parts) {
    seq.append_image(ImageSlot{ImageSource::Input, ex->image, -1, 0.0, {}});
    seq.append_text(ex->caption);
  }
  return seq;
}

std::vector<MultimodalSequence> pack_batch(BatchSampler& sampler, const std::vector<TrainingExample>& pool,
                                           const TrainConfig& cfg) {
  if (pool.empty()) throw std::invalid_argument("pack_batch: empty pool");
  std::vector<MultimodalSequence> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) {
    const bool pack = sampler.uniform() < cfg.pack_probability;
    std::vector<const TrainingExample*> parts{&pool[sampler.next()]};
    if (pack) parts.push_back(&pool[sampler.next()]);
    batch.push_back(make_sequence(parts));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Training

TrainState TrainState::fresh(const RunConfig& cfg, std::size_t pool_size) {
  TrainState s{cfg, AdapterSet::init(cfg.backbone, cfg.adapter), {}, BatchSampler(pool_size, cfg.train.seed), 0};
  s.adam = AdamState::for_params(s.adapters.parameters());
  return s;
}

LossBreakdown train_step(const FrozenBackbones& backbones, TrainState& state,
                         const std::vector<MultimodalSequence>& batch, const TargetCache* targets) {
  TapeScope scope;
  ParamList params = state.adapters.parameters();
  for (auto& p : params) p.tensor.zero_grad();

  LossContext ctx{backbones, state.adapters, targets, true, state.config.train.losses};
  LossBreakdown b = total_loss(ctx, batch);
  const std::pair<const char*, double> parts[] = {{"l_c", b.l_c}, {"l_p", b.l_p}, {"l_g", b.l_g}, {"l_r", b.l_r}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      throw std::runtime_error(std::string("train_step: non-finite ") + name + " at step " +
                               std::to_string(state.step));
    }
  }
  if (b.total_tensor.defined() && b.total_tensor.requires_grad()) scope.tape().backward(b.total_tensor);
  adam_update(params, state.adam, state.config.train);
  state.adapters.clamp_tau();
  for (auto& p : params) p.tensor.zero_grad();
  state.step += 1;
  return b;
}

LossBreakdown train_one(const FrozenBackbones& backbones, TrainState& state,
                        const std::vector<TrainingExample>& pool, const TargetCache* targets) {
  auto batch = pack_batch(state.sampler, pool, state.config.train);
  return train_step(backbones, state, batch, targets);
}

// ---------------------------------------------------------------------------
// Checkpoints

Container checkpoint_container(const TrainState& state) {
  Container c;
  c.meta["kind"] = "checkpoint";
  c.meta["config"] = state.config;
  c.meta["step"] = state.step;
  c.meta["adam_step"] = state.adam.step;
  c.meta["tau"] = state.adapters.retrieval.tau;
  c.meta["sampler"] = state.sampler.state();
  const ParamList params = state.adapters.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    c.arrays.push_back({"adapter/" + p.name, p.tensor.shape(), p.tensor.data()});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    c.arrays.push_back({"adam_m/" + p.name, p.tensor.shape(), state.adam.m[i]});
    c.arrays.push_back({"adam_v/" + p.name, p.tensor.shape(), state.adam.v[i]});
  }
  return c;
}

namespace {

void fill_params(const Container& c, ParamList& params) {
  for (auto& p : params) {
    const ArrayRecord& a = c.at("adapter/" + p.name);
    if (a.shape != p.tensor.shape()) {
      throw FormatError("checkpoint: '" + p.name + "' has shape " + shape_str(a.shape) + ", expected " +
                        shape_str(p.tensor.shape()));
    }
    p.tensor.mutable_data() = a.values;
  }
}

}  // namespace

TrainState state_from_container(const Container& c) {
  if (c.meta.value("kind", "") != "checkpoint") throw FormatError("checkpoint: container is not a checkpoint");
  TrainState s;
  try {
    s.config = c.meta.at("config").get<RunConfig>();
    s.adapters = AdapterSet::init(s.config.backbone, s.config.adapter);
    s.adapters.retrieval.tau = c.meta.at("tau").get<double>();
    s.step = c.meta.at("step").get<std::int64_t>();
    s.adam.step = c.meta.at("adam_step").get<std::int64_t>();
    s.sampler.restore(c.meta.at("sampler"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed metadata: ") + e.what());
  }
  ParamList params = s.adapters.parameters();
  fill_params(c, params);
  for (const auto& p : params) {
    s.adam.m.push_back(c.at("adam_m/" + p.name).values);
    s.adam.v.push_back(c.at("adam_v/" + p.name).values);
    if (s.adam.m.back().size() != p.tensor.size() || s.adam.v.back().size() != p.tensor.size()) {
      throw FormatError("checkpoint: optimizer state for '" + p.name + "' has the wrong size");
    }
  }
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  write_container(path, checkpoint_container(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) { return state_from_container(read_container(path)); }

AdapterSet load_adapters(const std::filesystem::path& path, RunConfig* config) {
  TrainState s = load_checkpoint(path);
  if (config) *config = s.config;
  return std::move(s.adapters);
}

Container backbones_container(const FrozenBackbones& b) {
  Container c;
  c.meta["kind"] = "backbones";
  c.meta["config"] = b.config;
  c.meta["checksum"] = b.checksum();
  for (const auto& p : b.parameters()) c.arrays.push_back({p.name, p.tensor.shape(), p.tensor.data()});
  return c;
}

FrozenBackbones backbones_from_container(const Container& c) {
  if (c.meta.value("kind", "") != "backbones") throw FormatError("backbones: container has the wrong kind");
  FrozenBackbones b = build_frozen(c.meta.at("config").get<BackboneConfig>());
  for (auto& p : b.parameters()) {
    const ArrayRecord& a = c.at(p.name);
    if (a.shape != p.tensor.shape()) throw FormatError("backbones: '" + p.name + "' has the wrong shape");
    Tensor t = p.tensor;
    t.mutable_data() = a.values;
  }
  if (c.meta.contains("checksum") && c.meta.at("checksum").get<std::string>() != b.checksum()) {
    throw FormatError("backbones: checksum mismatch");
  }
  return b;
}

}  // namespace gill
