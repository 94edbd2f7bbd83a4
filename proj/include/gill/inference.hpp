// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/adapters.hpp"
#include "gill/backbones.hpp"
#include "gill/sequence.hpp"

#include <functional>
#include <vector>

namespace gill {

enum class DecodeMode { Greedy, Sample };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::Greedy;
  double temperature = 1.0;
  int max_new_tokens = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Images available to retrieval, each with its i2t-projected embedding.
class CandidateSet {
 public:
  struct Entry {
    int id = 0;
    Raster raster;
    Eigen::VectorXd embedding;  // R^p
  };

  CandidateSet() = default;
  static CandidateSet build(const FrozenBackbones& backbones, const RetrievalHead& head,
                            std::vector<std::pair<int, Raster>> images);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Entry& at(std::size_t i) const { return entries_.at(i); }
  const Entry& by_id(int id) const;
  /// Unit-normalized embeddings, one row per entry.
  const RowMatrix& unit_embeddings() const { return unit_; }

  /// Largest absolute deviation between stored and freshly recomputed embeddings.
  double recompute_deviation(const FrozenBackbones& backbones, const RetrievalHead& head) const;

 private:
  std::vector<Entry> entries_;
  RowMatrix unit_;
};

struct Ranked {
  int id = 0;
  double score = 0.0;  // cosine
};

/// Cosine ranking of t2i-projected h1 against every candidate; ties go to the lower id.
std::vector<Ranked> retrieve_topk(const Eigen::VectorXd& img_hidden1, const CandidateSet& candidates,
                                  const RetrievalHead& head, int k);
/// Max cosine over the candidate set (the decider's scalar feature).
double max_candidate_cosine(const Eigen::VectorXd& img_hidden1, const CandidateSet& candidates,
                            const RetrievalHead& head);

/// decode_image(mapper_forward(img_hidden)).
Raster synthesize_image(const FrozenBackbones& backbones, const AdapterSet& adapters, const RowMatrix& img_hidden);

/// [IMG1..r] hidden rows after a caption on its own, text-only: [r x e].
RowMatrix caption_img_hidden(const FrozenBackbones& backbones, const AdapterSet& adapters,
                             const std::vector<int>& caption);

enum class Verdict { Retrieve, Generate };

/// Chooses retrieval or generation from the [IMG] hidden rows and the max candidate cosine.
using DecisionFn = std::function<Verdict(const RowMatrix& img_hidden, double max_cosine)>;

/// Retrieve iff max_cosine > threshold.
DecisionFn threshold_decision(double threshold = 0.5);

struct DecodeResult {
  MultimodalSequence sequence;
  /// Every newly emitted id in order, including forced [IMG] ids and a final EOS if produced.
  std::vector<int> emitted;
};

/// Autoregressive decoding over an interleaved prompt. Emitting [IMG1] forces
/// [IMG2..r]; the slot is then filled by retrieval or synthesis.
DecodeResult generate_sequence(const MultimodalSequence& prompt, const DecodeConfig& cfg, const AdapterSet& adapters,
                               const FrozenBackbones& backbones, const CandidateSet* candidates = nullptr,
                               const DecisionFn& decide = threshold_decision());

}  // namespace gill
