// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/losses.hpp"

#include <cmath>
#include <numeric>

namespace gill {

namespace {

std::vector<int> iota_ids(int n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

/// NLL of `targets`, each predicted from the logits row at `from_rows`.
Tensor nll_at(const Tensor& logits, const std::vector<int>& from_rows, const std::vector<int>& targets) {
  return nll(log_softmax(embedding_lookup(logits, from_rows), 1), targets);
}

Tensor mean_of(const std::vector<Tensor>& terms) {
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return terms.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(terms.size()));
}

Tensor gen_term(const LossContext& ctx, const Tensor& img_hidden, const std::vector<int>& y) {
  Tensor out = mapper_forward(ctx.adapters, img_hidden);
  Tensor target = Tensor::matrix(lookup_target(ctx, y));
  Tensor loss = mse(out, target);
  return ctx.options.gen_sum_reduction ? scale(loss, static_cast<double>(out.size())) : loss;
}

void require_caption(const std::vector<int>& y) {
  if (y.empty()) throw std::invalid_argument("loss: empty caption");
}

}  // namespace

std::vector<int> img_token_ids(const Vocabulary& vocab) {
  std::vector<int> ids;
  for (int i = 1; i <= vocab.img_tokens(); ++i) ids.push_back(vocab.img_id(i));
  return ids;
}

RowMatrix lookup_target(const LossContext& ctx, const std::vector<int>& y) {
  if (ctx.targets) {
    if (const RowMatrix* t = ctx.targets->find(y)) return *t;
  }
  if (!ctx.encoder_fallback) throw std::runtime_error("gen_loss: caption missing from the target cache");
  return ctx.backbones.target_encode(y);
}

Tensor caption_loss(const LossContext& ctx, const Raster& x, const std::vector<int>& y) {
  require_caption(y);
  const int k = ctx.adapters.config.k;
  PrefixSlot slot{0, map_image_to_prefix(ctx.backbones.encode_image(x), ctx.adapters.cap, k)};
  LmOutput out = ctx.backbones.lm.forward(y, std::span(&slot, 1), ctx.adapters.img_embeds);
  std::vector<int> rows;
  for (int p : out.token_positions) rows.push_back(p - 1);
  return nll_at(out.logits, rows, y);
}

Tensor img_pred_loss(const LossContext& ctx, const std::vector<int>& y) {
  require_caption(y);
  LmOutput out = ctx.backbones.lm.forward(y, {}, ctx.adapters.img_embeds);
  return nll_at(out.logits, {static_cast<int>(y.size()) - 1}, {ctx.backbones.vocab.img_id(1)});
}

Tensor gen_loss(const LossContext& ctx, const std::vector<int>& y) {
  require_caption(y);
  std::vector<int> tokens = y;
  const auto img = img_token_ids(ctx.backbones.vocab);
  tokens.insert(tokens.end(), img.begin(), img.end());
  LmOutput out = ctx.backbones.lm.forward(tokens, {}, ctx.adapters.img_embeds);
  std::vector<int> rows;
  for (std::size_t i = 0; i < img.size(); ++i) rows.push_back(static_cast<int>(y.size() + i));
  return gen_term(ctx, extract_img_hidden(out.hidden, rows), y);
}

Tensor retrieval_loss(const Tensor& h1, const RowMatrix& v, const RetrievalHead& head) {
  if (h1.rank() != 2 || h1.dim(0) != v.rows() || h1.dim(0) < 1) {
    throw ShapeError("retrieval_loss: " + shape_str(h1.shape()) + " text rows vs " + std::to_string(v.rows()) +
                     " images");
  }
  Tensor text = retrieval_text_embed(h1, head);
  Tensor image = retrieval_image_embed(Tensor::matrix(v), head);
  for (const Tensor* t : {&text, &image}) {
    const auto norms = t->mat().rowwise().norm();
    if ((norms.array() < kNormFloor).any()) {
      throw std::domain_error("retrieval_loss: projected embedding with norm below 1e-12");
    }
  }
  // sims(i, j) = cos(image_i, text_j) / tau
  Tensor sims = scale(matmul(l2_normalize(image, 1), transpose(l2_normalize(text, 1))), 1.0 / head.tau);
  const auto diag = iota_ids(h1.dim(0));
  Tensor t2i = nll(transpose(log_softmax(sims, 0)), diag);
  Tensor i2t = nll(log_softmax(sims, 1), diag);
  return add(t2i, i2t);
}

Tensor retrieval_loss(const LossContext& ctx, const std::vector<std::pair<Raster, std::vector<int>>>& batch) {
  if (batch.empty()) throw std::invalid_argument("retrieval_loss: empty batch");
  std::vector<Tensor> rows;
  RowMatrix v(static_cast<Eigen::Index>(batch.size()), ctx.backbones.config.d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& y = batch[i].second;
    require_caption(y);
    std::vector<int> tokens = y;
    tokens.push_back(ctx.backbones.vocab.img_id(1));
    LmOutput out = ctx.backbones.lm.forward(tokens, {}, ctx.adapters.img_embeds);
    rows.push_back(extract_img_hidden(out.hidden, std::vector<int>{static_cast<int>(y.size())}));
    v.row(static_cast<Eigen::Index>(i)) = ctx.backbones.encode_image(batch[i].first).transpose();
  }
  return retrieval_loss(rows.size() == 1 ? rows.front() : concat(rows, 0), v, ctx.adapters.retrieval);
}

LossBreakdown total_loss(const LossContext& ctx, const std::vector<MultimodalSequence>& batch) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  const auto& opt = ctx.options;
  const auto& vocab = ctx.backbones.vocab;
  const auto img = img_token_ids(vocab);
  const int k = ctx.adapters.config.k;

  std::vector<Tensor> lc_items, lp_items, lg_items, h1_rows;
  std::vector<Eigen::VectorXd> pair_images;

  for (const auto& item : batch) {
    const auto pairs = item.pairs();
    if (pairs.empty()) throw std::invalid_argument("total_loss: batch item without an (image, caption) pair");
    std::vector<Eigen::VectorXd> visual;
    for (const auto& [x, y] : pairs) {
      require_caption(*y);
      visual.push_back(ctx.backbones.encode_image(*x));
    }

    if (opt.use_caption) {
      // [prefix_1, caption_1, prefix_2, caption_2, ...]
      std::vector<int> tokens;
      std::vector<PrefixSlot> slots;
      int pos = 0;
      for (std::size_t j = 0; j < pairs.size(); ++j) {
        slots.push_back({pos, map_image_to_prefix(visual[j], ctx.adapters.cap, k)});
        pos += k;
        tokens.insert(tokens.end(), pairs[j].second->begin(), pairs[j].second->end());
        pos += static_cast<int>(pairs[j].second->size());
      }
      LmOutput out = ctx.backbones.lm.forward(tokens, slots, ctx.adapters.img_embeds);
      std::vector<int> rows;
      for (int p : out.token_positions) rows.push_back(p - 1);
      lc_items.push_back(nll_at(out.logits, rows, tokens));
    }

    if (opt.use_img_pred || opt.use_gen || opt.use_retrieval) {
      // Each caption gets its own text-only pass [caption, IMG1..r].
      std::vector<Tensor> lp_pairs, lg_pairs;
      for (std::size_t j = 0; j < pairs.size(); ++j) {
        const auto& y = *pairs[j].second;
        std::vector<int> tokens = y;
        tokens.insert(tokens.end(), img.begin(), img.end());
        LmOutput out = ctx.backbones.lm.forward(tokens, {}, ctx.adapters.img_embeds);
        const int start = static_cast<int>(y.size());
        if (opt.use_img_pred) lp_pairs.push_back(nll_at(out.logits, {start - 1}, {vocab.img_id(1)}));
        if (opt.use_gen) {
          std::vector<int> rows(img.size());
          std::iota(rows.begin(), rows.end(), start);
          lg_pairs.push_back(gen_term(ctx, extract_img_hidden(out.hidden, rows), y));
        }
        if (opt.use_retrieval) {
          h1_rows.push_back(extract_img_hidden(out.hidden, std::vector<int>{start}));
          pair_images.push_back(visual[j]);
        }
      }
      if (opt.use_img_pred) lp_items.push_back(mean_of(lp_pairs));
      if (opt.use_gen) lg_items.push_back(mean_of(lg_pairs));
    }
  }

  LossBreakdown b;
  std::vector<Tensor> parts;
  if (!lc_items.empty()) {
    Tensor t = mean_of(lc_items);
    b.l_c = t.item();
    parts.push_back(t);
  }
  if (!lp_items.empty()) {
    Tensor t = mean_of(lp_items);
    b.l_p = t.item();
    parts.push_back(t);
  }
  if (!lg_items.empty()) {
    Tensor t = mean_of(lg_items);
    b.l_g = t.item();
    parts.push_back(t);
  }
  if (!h1_rows.empty()) {
    RowMatrix v(static_cast<Eigen::Index>(pair_images.size()), ctx.backbones.config.d);
    for (std::size_t i = 0; i < pair_images.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = pair_images[i].transpose();
    Tensor t = retrieval_loss(h1_rows.size() == 1 ? h1_rows.front() : concat(h1_rows, 0), v, ctx.adapters.retrieval);
    b.l_r = t.item();
    parts.push_back(t);
  }
  if (!parts.empty()) {
    Tensor total = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
    b.total_tensor = total;
  }
  b.total = b.l_c + b.l_p + b.l_g + b.l_r;
  return b;
}

}  // namespace gill
