// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/dataset.hpp"
#include "gill/inference.hpp"
#include "gill/trainer.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gill {

/// Fraction of queries whose gold id lands in the top k of retrieve_topk.
/// Throws when a gold id is not in the candidate set.
double recall_at_k(const std::vector<Eigen::VectorXd>& img1_rows, const std::vector<int>& gold_ids,
                   const CandidateSet& candidates, const RetrievalHead& head, int k);

/// Cosine between the frozen visual embeddings of two rasters of equal shape.
double embed_similarity(const FrozenBackbones& backbones, const Raster& generated, const Raster& reference);

/// Cosine between the flattened mapper output for `caption` and its target encoding.
double target_cosine(const FrozenBackbones& backbones, const AdapterSet& adapters, const std::vector<int>& caption);

/// Mean l_g over the distinct captions of `examples`, without gradients.
double mean_gen_loss(const FrozenBackbones& backbones, const AdapterSet& adapters,
                     const std::vector<TrainingExample>& examples);

/// Train, held-out and candidate splits held in memory.
struct EvalCorpus {
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> heldout;
  std::vector<TrainingExample> candidates;  // candidate id = index

  /// Reads train.jsonl, heldout.jsonl and candidates.jsonl from a dataset directory.
  static EvalCorpus load(const std::filesystem::path& dir, const Vocabulary& vocab, const BackboneConfig& cfg);
  static EvalCorpus from_shapeworld(const ShapeworldData& data, const Vocabulary& vocab);
};

CandidateSet build_candidates(const FrozenBackbones& backbones, const RetrievalHead& head,
                              const std::vector<TrainingExample>& candidates);

/// SHA-256 of the compact JSON dump (object keys sorted).
std::string config_digest(const nlohmann::json& config);

/// Printf "%.6g".
std::string format_sig6(double v);

struct EvalReport {
  std::string run_id;
  std::string config_digest;
  std::map<std::string, double> metrics;
  std::vector<nlohmann::json> records;
  std::map<std::string, double> seconds;  // wall clock per phase; kept out of the deterministic files

  /// Throws on a non-finite value.
  void set_metric(const std::string& name, double value);
  double metric(const std::string& name) const;
  /// Everything except timings.
  nlohmann::json to_json() const;

  /// Writes <run_id>_metrics.json, <run_id>_metrics.csv, <run_id>_records.jsonl and <run_id>_timing.json.
  void write(const std::filesystem::path& dir) const;
};

/// Recall@{1,5,10} (capped at the candidate count) with each candidate caption as a query for its own image.
EvalReport evaluate_retrieval(const FrozenBackbones& backbones, const AdapterSet& adapters, const EvalCorpus& corpus,
                              const std::string& run_id, const nlohmann::json& config);

/// Target cosine, l_g and embed_similarity of synthesized images on the train and held-out splits.
EvalReport evaluate_generation(const FrozenBackbones& backbones, const AdapterSet& adapters, const EvalCorpus& corpus,
                               const std::string& run_id, const nlohmann::json& config);

enum class AblationAxis { Mapper, ImageTokens };
std::string_view to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view name);

struct AblationSetting {
  std::string name;
  RunConfig config;
};

/// The four mapper variants, or r in {1, 2, 4, 8}; everything else copied from `base`.
std::vector<AblationSetting> ablation_settings(AblationAxis axis, const RunConfig& base);

struct AblationResult {
  AblationAxis axis = AblationAxis::Mapper;
  std::vector<std::string> settings;
  std::vector<EvalReport> reports;  // one per setting, same order

  /// Header plus one row per setting: setting, final_l_g, embed_similarity, recall_at_1.
  std::string csv() const;
  void write(const std::filesystem::path& dir, const std::string& run_id) const;
};

/// Trains every setting for base.train.steps steps (the same budget each) on corpus.train and reports
/// final l_g, embed_similarity and R@1. With seeds > 1 each metric is the mean over seeds
/// base seed, base seed + 1, ... and a "<metric>_std" entry is added.
AblationResult run_ablation(AblationAxis axis, const RunConfig& base, const EvalCorpus& corpus,
                            const std::string& run_id, int seeds = 1);

}  // namespace gill
