// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/evalkit.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace gill {

namespace fs = std::filesystem;
using json = nlohmann::json;

double recall_at_k(const std::vector<Eigen::VectorXd>& img1_rows, const std::vector<int>& gold_ids,
                   const CandidateSet& candidates, const RetrievalHead& head, int k) {
  if (img1_rows.size() != gold_ids.size()) throw std::invalid_argument("recall_at_k: query/gold count mismatch");
  if (img1_rows.empty()) throw std::invalid_argument("recall_at_k: no queries");
  std::set<int> ids;
  for (std::size_t i = 0; i < candidates.size(); ++i) ids.insert(candidates.at(i).id);
  std::size_t hits = 0;
  for (std::size_t q = 0; q < img1_rows.size(); ++q) {
    if (!ids.count(gold_ids[q])) {
      throw std::invalid_argument("recall_at_k: gold id " + std::to_string(gold_ids[q]) + " is not a candidate");
    }
    for (const Ranked& r : retrieve_topk(img1_rows[q], candidates, head, k)) {
      if (r.id == gold_ids[q]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(img1_rows.size());
}

double embed_similarity(const FrozenBackbones& backbones, const Raster& generated, const Raster& reference) {
  if (generated.height != reference.height || generated.width != reference.width ||
      generated.channels != reference.channels) {
    throw ShapeError("embed_similarity: raster shapes differ");
  }
  const Eigen::VectorXd a = backbones.encode_image(generated), b = backbones.encode_image(reference);
  const double na = a.norm(), nb = b.norm();
  if (na < kNormFloor || nb < kNormFloor) throw std::domain_error("embed_similarity: zero-norm image embedding");
  return a.dot(b) / (na * nb);
}

double target_cosine(const FrozenBackbones& backbones, const AdapterSet& adapters, const std::vector<int>& caption) {
  NoGradGuard no_grad;
  const RowMatrix out = mapper_forward(adapters, Tensor::matrix(caption_img_hidden(backbones, adapters, caption))).mat();
  const RowMatrix target = backbones.target_encode(caption);
  const double denom = out.norm() * target.norm();
  if (denom < kNormFloor) throw std::domain_error("target_cosine: zero-norm mapper output or target");
  return out.cwiseProduct(target).sum() / denom;
}

double mean_gen_loss(const FrozenBackbones& backbones, const AdapterSet& adapters,
                     const std::vector<TrainingExample>& examples) {
  NoGradGuard no_grad;
  std::set<std::vector<int>> seen;
  LossContext ctx{backbones, adapters};
  double total = 0.0;
  for (const auto& ex : examples) {
    if (seen.insert(ex.caption).second) total += gen_loss(ctx, ex.caption).item();
  }
  if (seen.empty()) throw std::invalid_argument("mean_gen_loss: no captions");
  return total / static_cast<double>(seen.size());
}

EvalCorpus EvalCorpus::load(const fs::path& dir, const Vocabulary& vocab, const BackboneConfig& cfg) {
  EvalCorpus c;
  c.train = load_examples(dir / "train.jsonl", vocab, cfg);
  c.heldout = load_examples(dir / "heldout.jsonl", vocab, cfg);
  c.candidates = load_examples(dir / "candidates.jsonl", vocab, cfg);
  return c;
}

EvalCorpus EvalCorpus::from_shapeworld(const ShapeworldData& data, const Vocabulary& vocab) {
  auto convert = [&](const ShapeworldItem& it) { return TrainingExample{it.image, vocab.encode_strict(it.caption), it.caption}; };
  EvalCorpus c;
  for (const auto& it : data.train) c.train.push_back(convert(it));
  for (const auto& it : data.heldout) c.heldout.push_back(convert(it));
  for (int idx : data.candidates) c.candidates.push_back(convert(data.train.at(static_cast<std::size_t>(idx))));
  return c;
}

CandidateSet build_candidates(const FrozenBackbones& backbones, const RetrievalHead& head,
                              const std::vector<TrainingExample>& candidates) {
  std::vector<std::pair<int, Raster>> images;
  for (std::size_t i = 0; i < candidates.size(); ++i) images.emplace_back(static_cast<int>(i), candidates[i].image);
  return CandidateSet::build(backbones, head, std::move(images));
}

// ---------------------------------------------------------------------------
// Reports

std::string config_digest(const json& config) {
  const std::string text = config.dump();
  return sha256_hex(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string format_sig6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void EvalReport::set_metric(const std::string& name, double value) {
  if (!std::isfinite(value)) throw std::domain_error("report: metric " + name + " is not finite");
  metrics[name] = value;
}

double EvalReport::metric(const std::string& name) const {
  const auto it = metrics.find(name);
  if (it == metrics.end()) throw std::out_of_range("report: no metric " + name);
  return it->second;
}

json EvalReport::to_json() const {
  return json{{"run_id", run_id}, {"config_digest", config_digest}, {"metrics", metrics}};
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

void EvalReport::write(const fs::path& dir) const {
  fs::create_directories(dir);
  write_text(dir / (run_id + "_metrics.json"), to_json().dump(2) + "\n");
  std::string csv = "metric,value\n";
  for (const auto& [name, value] : metrics) csv += name + "," + format_sig6(value) + "\n";
  write_text(dir / (run_id + "_metrics.csv"), csv);
  std::string lines;
  for (const auto& r : records) lines += r.dump() + "\n";
  write_text(dir / (run_id + "_records.jsonl"), lines);
  write_text(dir / (run_id + "_timing.json"), json(seconds).dump(2) + "\n");
}

namespace {

class PhaseClock {
 public:
  explicit PhaseClock(std::map<std::string, double>& sink) : sink_(sink) {}
  void lap(const std::string& phase) {
    const auto now = std::chrono::steady_clock::now();
    sink_[phase] += std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

 private:
  std::map<std::string, double>& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace

EvalReport evaluate_retrieval(const FrozenBackbones& backbones, const AdapterSet& adapters, const EvalCorpus& corpus,
                              const std::string& run_id, const json& config) {
  EvalReport rep{run_id, config_digest(config), {}, {}, {}};
  PhaseClock clock(rep.seconds);
  const CandidateSet candidates = build_candidates(backbones, adapters.retrieval, corpus.candidates);
  std::vector<Eigen::VectorXd> queries;
  std::vector<int> gold;
  for (std::size_t i = 0; i < corpus.candidates.size(); ++i) {
    queries.push_back(caption_img_hidden(backbones, adapters, corpus.candidates[i].caption).row(0).transpose());
    gold.push_back(static_cast<int>(i));
  }
  clock.lap("embed");
  const int n = static_cast<int>(candidates.size());
  for (int k : {1, 5, 10}) {
    if (k <= n) rep.set_metric("recall_at_" + std::to_string(k), recall_at_k(queries, gold, candidates, adapters.retrieval, k));
  }
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto ranked = retrieve_topk(queries[q], candidates, adapters.retrieval, n);
    int rank = 0;
    while (ranked[static_cast<std::size_t>(rank)].id != gold[q]) ++rank;
    rep.records.push_back({{"caption", corpus.candidates[q].caption_text},
                           {"gold", gold[q]},
                           {"top1", ranked.front().id},
                           {"top1_score", ranked.front().score},
                           {"rank", rank + 1}});
  }
  clock.lap("rank");
  return rep;
}

EvalReport evaluate_generation(const FrozenBackbones& backbones, const AdapterSet& adapters, const EvalCorpus& corpus,
                               const std::string& run_id, const json& config) {
  EvalReport rep{run_id, config_digest(config), {}, {}, {}};
  PhaseClock clock(rep.seconds);
  for (const auto& [split, items] : {std::pair{"train", &corpus.train}, std::pair{"heldout", &corpus.heldout}}) {
    if (items->empty()) continue;
    std::set<std::vector<int>> seen;
    double cos_sum = 0.0, sim_sum = 0.0;
    for (const auto& ex : *items) {
      if (!seen.insert(ex.caption).second) continue;
      const double cos = target_cosine(backbones, adapters, ex.caption);
      const Raster img = synthesize_image(backbones, adapters, caption_img_hidden(backbones, adapters, ex.caption));
      const double sim = embed_similarity(backbones, img, ex.image);
      cos_sum += cos;
      sim_sum += sim;
      rep.records.push_back({{"split", split}, {"caption", ex.caption_text}, {"target_cosine", cos}, {"embed_similarity", sim}});
    }
    const auto n = static_cast<double>(seen.size());
    rep.set_metric(std::string(split) + "_target_cosine", cos_sum / n);
    rep.set_metric(std::string(split) + "_embed_similarity", sim_sum / n);
    rep.set_metric(std::string(split) + "_l_g", mean_gen_loss(backbones, adapters, *items));
    clock.lap(split);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Ablations

std::string_view to_string(AblationAxis axis) { return axis == AblationAxis::Mapper ? "mapper" : "r"; }

AblationAxis parse_ablation_axis(std::string_view name) {
  if (name == "mapper") return AblationAxis::Mapper;
  if (name == "r") return AblationAxis::ImageTokens;
  throw std::invalid_argument("ablation axis must be \"mapper\" or \"r\", got \"" + std::string(name) + "\"");
}

std::vector<AblationSetting> ablation_settings(AblationAxis axis, const RunConfig& base) {
  std::vector<AblationSetting> out;
  if (axis == AblationAxis::Mapper) {
    for (auto v : {MapperVariant::Linear, MapperVariant::Mlp3, MapperVariant::TransformerEncoder,
                   MapperVariant::GillMapper}) {
      RunConfig c = base;
      c.adapter.mapper = v;
      out.push_back({std::string(to_string(v)), c});
    }
  } else {
    for (int r : {1, 2, 4, 8}) {
      RunConfig c = base;
      c.backbone.r = r;
      out.push_back({"r" + std::to_string(r), c});
    }
  }
  return out;
}

namespace {

struct SettingMetrics {
  double final_l_g = 0, embed_similarity = 0, recall_at_1 = 0;
};

SettingMetrics train_and_measure(const RunConfig& cfg, const EvalCorpus& corpus, std::map<std::string, double>& seconds) {
  PhaseClock clock(seconds);
  const FrozenBackbones backbones = build_frozen(cfg.backbone);
  std::vector<std::vector<int>> captions;
  for (const auto& ex : corpus.train) captions.push_back(ex.caption);
  const TargetCache targets = precompute_targets(backbones, captions);
  TrainState state = TrainState::fresh(cfg, corpus.train.size());
  clock.lap("setup");
  for (int s = 0; s < cfg.train.steps; ++s) train_one(backbones, state, corpus.train, &targets);
  clock.lap("train");

  SettingMetrics m;
  m.final_l_g = mean_gen_loss(backbones, state.adapters, corpus.train);
  const auto& sim_items = corpus.heldout.empty() ? corpus.candidates : corpus.heldout;
  double sim = 0.0;
  for (const auto& ex : sim_items) {
    const Raster img = synthesize_image(backbones, state.adapters, caption_img_hidden(backbones, state.adapters, ex.caption));
    sim += embed_similarity(backbones, img, ex.image);
  }
  m.embed_similarity = sim / static_cast<double>(sim_items.size());
  const CandidateSet candidates = build_candidates(backbones, state.adapters.retrieval, corpus.candidates);
  std::vector<Eigen::VectorXd> queries;
  std::vector<int> gold;
  for (std::size_t i = 0; i < corpus.candidates.size(); ++i) {
    queries.push_back(caption_img_hidden(backbones, state.adapters, corpus.candidates[i].caption).row(0).transpose());
    gold.push_back(static_cast<int>(i));
  }
  m.recall_at_1 = recall_at_k(queries, gold, candidates, state.adapters.retrieval, 1);
  clock.lap("measure");
  return m;
}

}  // namespace

AblationResult run_ablation(AblationAxis axis, const RunConfig& base, const EvalCorpus& corpus,
                            const std::string& run_id, int seeds) {
  if (seeds < 1) throw std::invalid_argument("run_ablation: seeds must be >= 1");
  if (corpus.train.empty() || corpus.candidates.empty()) {
    throw std::invalid_argument("run_ablation: corpus needs training examples and candidates");
  }
  AblationResult result;
  result.axis = axis;
  for (const auto& setting : ablation_settings(axis, base)) {
    EvalReport rep;
    rep.run_id = run_id + "_" + setting.name;
    rep.config_digest = config_digest(json(setting.config));
    std::vector<SettingMetrics> per_seed;
    for (int s = 0; s < seeds; ++s) {
      RunConfig cfg = setting.config;
      cfg.adapter.seed += static_cast<std::uint64_t>(s);
      cfg.train.seed += static_cast<std::uint64_t>(s);
      per_seed.push_back(train_and_measure(cfg, corpus, rep.seconds));
      rep.records.push_back({{"setting", setting.name},
                             {"seed_offset", s},
                             {"final_l_g", per_seed.back().final_l_g},
                             {"embed_similarity", per_seed.back().embed_similarity},
                             {"recall_at_1", per_seed.back().recall_at_1}});
    }
    auto summarize = [&](const char* name, double SettingMetrics::*field) {
      double mean = 0.0;
      for (const auto& m : per_seed) mean += m.*field;
      mean /= seeds;
      rep.set_metric(name, mean);
      if (seeds > 1) {
        double var = 0.0;
        for (const auto& m : per_seed) var += (m.*field - mean) * (m.*field - mean);
        rep.set_metric(std::string(name) + "_std", std::sqrt(var / (seeds - 1)));
      }
    };
    summarize("final_l_g", &SettingMetrics::final_l_g);
    summarize("embed_similarity", &SettingMetrics::embed_similarity);
    summarize("recall_at_1", &SettingMetrics::recall_at_1);
    result.settings.push_back(setting.name);
    result.reports.push_back(std::move(rep));
  }
  return result;
}

std::string AblationResult::csv() const {
  std::string out = "setting,final_l_g,embed_similarity,recall_at_1\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& rep = reports[i];
    out += settings.at(i) + "," + format_sig6(rep.metric("final_l_g")) + "," + format_sig6(rep.metric("embed_similarity")) + "," +
           format_sig6(rep.metric("recall_at_1")) + "\n";
  }
  return out;
}

void AblationResult::write(const fs::path& dir, const std::string& run_id) const {
  fs::create_directories(dir);
  write_text(dir / (run_id + "_ablation_" + std::string(to_string(axis)) + ".csv"), csv());
  for (const auto& rep : reports) rep.write(dir);
}

}  // namespace gill
