// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/inference.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gill {

std::string_view verdict_label(Verdict v);  // "ret" / "gen"
Verdict parse_verdict(std::string_view label);

struct DecisionExample {
  std::vector<int> prompt;
  Verdict label = Verdict::Generate;
  RowMatrix img_hidden;  // [r x e]
  double max_cosine = 0.0;
};

/// Flattened [IMG1..r] rows followed by the max cosine: width r*e + 1.
Eigen::VectorXd build_features(const RowMatrix& img_hidden, double max_cosine);
Eigen::VectorXd build_features(const RowMatrix& img_hidden, const CandidateSet& candidates, const RetrievalHead& head);
Eigen::VectorXd build_features(const DecisionExample& ex);

/// Logistic model over standardized features; predicts Retrieve when p > threshold.
struct LinearDecider {
  Eigen::VectorXd weight;
  double bias = 0.0;
  Eigen::VectorXd feature_mean, feature_scale;
  double threshold = 0.5;

  double probability(const Eigen::VectorXd& features) const;
  Verdict predict(const Eigen::VectorXd& features) const;
  DecisionFn as_decision() const;
};

void to_json(nlohmann::json& j, const LinearDecider& d);
void from_json(const nlohmann::json& j, LinearDecider& d);

struct DeciderTrainOptions {
  int epochs = 500;
  double lr = 0.5;
  double threshold = 0.5;
};

/// Full-batch gradient descent on mean binary cross-entropy. Throws when only one label is present.
/// `loss_trace`, when given, receives the loss before each epoch plus the final loss.
LinearDecider train_decider(const std::vector<Eigen::VectorXd>& features, const std::vector<Verdict>& labels,
                            const DeciderTrainOptions& opts = {}, std::vector<double>* loss_trace = nullptr);

/// Unweighted mean of per-class F1 over the classes present in labels or predictions.
double macro_f1(const std::vector<Verdict>& predictions, const std::vector<Verdict>& labels);
double accuracy(const std::vector<Verdict>& predictions, const std::vector<Verdict>& labels);

Verdict heuristic_decide(double max_cosine, double threshold);

struct SweepResult {
  std::vector<std::pair<double, double>> grid;  // (threshold, macro-F1)
  double best_threshold = 0.0;
  double best_f1 = 0.0;
  double min_f1 = 0.0;
  double max_f1 = 0.0;
};

/// Grid search over thresholds 0, step, ..., 1; the lowest threshold wins ties.
SweepResult sweep_threshold(const std::vector<double>& max_cosines, const std::vector<Verdict>& labels,
                            double step = 0.01);

std::vector<Verdict> always(Verdict v, std::size_t n);
/// Samples each verdict with the label prior.
std::vector<Verdict> random_prior_baseline(const std::vector<Verdict>& labels, std::uint64_t seed);

/// Synthetic decision sets: label = (max cosine > 0.5), optionally with a margin band excluded and label noise.
struct DecisionSetSpec {
  int count = 200;
  int r = 2;
  int e = 3;
  double margin = 0.0;       // cosines are drawn outside (0.5 - margin, 0.5 + margin)
  double flip_fraction = 0;  // fraction of labels flipped after construction
  std::uint64_t seed = 0;
};
std::vector<DecisionExample> synthesize_decision_set(const DecisionSetSpec& spec);

struct DecisionRecord {
  std::string prompt;
  Verdict label = Verdict::Generate;
  std::optional<std::string> features_path;
};
/// JSONL lines {"prompt", "label": "ret"|"gen", "features_path"?}; errors name the line number.
std::vector<DecisionRecord> read_decision_records(const std::filesystem::path& path);
void write_decision_records(const std::filesystem::path& path, const std::vector<DecisionRecord>& records);

}  // namespace gill
