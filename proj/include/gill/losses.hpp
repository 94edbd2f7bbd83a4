// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/adapters.hpp"
#include "gill/backbones.hpp"
#include "gill/sequence.hpp"
#include "gill/target_cache.hpp"

#include <string>
#include <vector>

namespace gill {

struct TrainingExample {
  Raster image;
  std::vector<int> caption;  // text ids only, no [IMG] tokens
  std::string caption_text;
};

struct LossOptions {
  bool use_caption = true;
  bool use_img_pred = true;
  bool use_gen = true;
  bool use_retrieval = true;
  /// Sum over the L*c elements instead of the mean.
  bool gen_sum_reduction = false;
};

struct LossContext {
  const FrozenBackbones& backbones;
  const AdapterSet& adapters;
  const TargetCache* targets = nullptr;  // consulted first for target encodings
  bool encoder_fallback = true;          // encode on a cache miss
  LossOptions options{};
};

struct LossBreakdown {
  double l_c = 0, l_p = 0, l_g = 0, l_r = 0, total = 0;
  Tensor total_tensor;  // taped scalar for backward(); undefined when every term is disabled
};

/// [IMG1..IMG{r}] ids.
std::vector<int> img_token_ids(const Vocabulary& vocab);

/// Mean NLL of the caption under the LM with the k-row visual prefix prepended.
Tensor caption_loss(const LossContext& ctx, const Raster& x, const std::vector<int>& y);
/// NLL of [IMG1] immediately after the caption, text-only conditioning.
Tensor img_pred_loss(const LossContext& ctx, const std::vector<int>& y);
/// MSE between the mapper output on the [IMG] hidden rows and the target encoding of y.
Tensor gen_loss(const LossContext& ctx, const std::vector<int>& y);
/// Symmetric InfoNCE over [IMG1] rows `h1` ([N x e]) and visual embeddings `v` ([N x d]).
Tensor retrieval_loss(const Tensor& h1, const RowMatrix& v, const RetrievalHead& head);
/// Convenience: runs the LM for every pair, then retrieval_loss.
Tensor retrieval_loss(const LossContext& ctx, const std::vector<std::pair<Raster, std::vector<int>>>& batch);

/// Unweighted sum of the per-item means of l_c, l_p, l_g and the batch l_r.
LossBreakdown total_loss(const LossContext& ctx, const std::vector<MultimodalSequence>& batch);

/// Target encoding of y from the cache, or freshly encoded when allowed.
RowMatrix lookup_target(const LossContext& ctx, const std::vector<int>& y);

}  // namespace gill
