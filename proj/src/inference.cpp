// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace gill {

void DecodeConfig::validate() const {
  if (mode == DecodeMode::Sample && !(temperature > 0)) {
    throw std::invalid_argument("decode: temperature must be positive in sampling mode");
  }
  if (max_new_tokens < 0) throw std::invalid_argument("decode: max_new_tokens must be non-negative");
}

// ---------------------------------------------------------------------------
// Candidates and retrieval

namespace {

Eigen::VectorXd project_image(const FrozenBackbones& backbones, const RetrievalHead& head, const Raster& x) {
  return head.i2t.mat().transpose() * backbones.encode_image(x);
}

Eigen::VectorXd unit_query(const Eigen::VectorXd& img_hidden1, const RetrievalHead& head) {
  if (img_hidden1.size() != head.t2i.dim(0)) {
    throw ShapeError("retrieve: [IMG1] row of width " + std::to_string(img_hidden1.size()) + " vs t2i " +
                     shape_str(head.t2i.shape()));
  }
  Eigen::VectorXd q = head.t2i.mat().transpose() * img_hidden1;
  const double n = q.norm();
  if (n < kNormFloor) throw std::domain_error("retrieve: projected [IMG1] row has norm below 1e-12");
  return q / n;
}

}  // namespace

CandidateSet CandidateSet::build(const FrozenBackbones& backbones, const RetrievalHead& head,
                                 std::vector<std::pair<int, Raster>> images) {
  CandidateSet set;
  set.unit_.resize(static_cast<Eigen::Index>(images.size()), head.i2t.dim(1));
  std::set<int> seen;
  for (auto& [id, raster] : images) {
    if (!seen.insert(id).second) throw std::invalid_argument("candidates: duplicate id " + std::to_string(id));
    Entry e{id, std::move(raster), {}};
    e.embedding = project_image(backbones, head, e.raster);
    const double n = e.embedding.norm();
    if (n < kNormFloor) throw std::domain_error("candidates: image " + std::to_string(id) + " projects to a zero vector");
    set.unit_.row(static_cast<Eigen::Index>(set.entries_.size())) = (e.embedding / n).transpose();
    set.entries_.push_back(std::move(e));
  }
  return set;
}

const CandidateSet::Entry& CandidateSet::by_id(int id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return e;
  }
  throw std::out_of_range("candidates: no image with id " + std::to_string(id));
}

double CandidateSet::recompute_deviation(const FrozenBackbones& backbones, const RetrievalHead& head) const {
  double worst = 0.0;
  for (const auto& e : entries_) {
    worst = std::max(worst, (project_image(backbones, head, e.raster) - e.embedding).cwiseAbs().maxCoeff());
  }
  return worst;
}

std::vector<Ranked> retrieve_topk(const Eigen::VectorXd& img_hidden1, const CandidateSet& candidates,
                                  const RetrievalHead& head, int k) {
  if (candidates.empty()) throw std::invalid_argument("retrieve: empty candidate set");
  if (k < 1 || k > static_cast<int>(candidates.size())) {
    throw std::invalid_argument("retrieve: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(candidates.size()) + "]");
  }
  const Eigen::VectorXd scores = candidates.unit_embeddings() * unit_query(img_hidden1, head);
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = scores[static_cast<Eigen::Index>(a)], sb = scores[static_cast<Eigen::Index>(b)];
    if (sa != sb) return sa > sb;
    return candidates.at(a).id < candidates.at(b).id;
  });
  std::vector<Ranked> out;
  for (int i = 0; i < k; ++i) {
    const auto j = order[static_cast<std::size_t>(i)];
    out.push_back({candidates.at(j).id, scores[static_cast<Eigen::Index>(j)]});
  }
  return out;
}

double max_candidate_cosine(const Eigen::VectorXd& img_hidden1, const CandidateSet& candidates,
                            const RetrievalHead& head) {
  if (candidates.empty()) throw std::invalid_argument("max_candidate_cosine: empty candidate set");
  return (candidates.unit_embeddings() * unit_query(img_hidden1, head)).maxCoeff();
}

// ---------------------------------------------------------------------------
// Generation

Raster synthesize_image(const FrozenBackbones& backbones, const AdapterSet& adapters, const RowMatrix& img_hidden) {
  NoGradGuard no_grad;
  const Tensor cond = mapper_forward(adapters, Tensor::matrix(img_hidden));
  return backbones.decode_image(RowMatrix(cond.mat()));
}

RowMatrix caption_img_hidden(const FrozenBackbones& backbones, const AdapterSet& adapters,
                             const std::vector<int>& caption) {
  NoGradGuard no_grad;
  const int r = backbones.config.r;
  std::vector<int> tokens = caption;
  for (int i = 1; i <= r; ++i) tokens.push_back(backbones.vocab.img_id(i));
  const LmOutput out = backbones.lm.forward(tokens, {}, adapters.img_embeds);
  return out.hidden.mat().middleRows(static_cast<Eigen::Index>(caption.size()), r);
}

DecisionFn threshold_decision(double threshold) {
  return [threshold](const RowMatrix&, double max_cosine) {
    return max_cosine > threshold ? Verdict::Retrieve : Verdict::Generate;
  };
}

namespace {

/// Token and prefix-slot state of one decode.
struct Context {
  std::vector<int> tokens;
  std::vector<PrefixSlot> slots;
  int length = 0;
};

int pick_token(Eigen::RowVectorXd logits, const DecodeConfig& cfg, Rng& rng) {
  if (cfg.mode == DecodeMode::Greedy) {
    Eigen::Index best;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  }
  logits /= cfg.temperature;
  const double top = logits.maxCoeff();
  Eigen::RowVectorXd p = (logits.array() - top).exp();
  const double u = std::uniform_real_distribution<double>(0.0, p.sum())(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc && p[i] > 0) return static_cast<int>(i);
  }
  Eigen::Index best;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

DecodeResult generate_sequence(const MultimodalSequence& prompt, const DecodeConfig& cfg, const AdapterSet& adapters,
                               const FrozenBackbones& backbones, const CandidateSet* candidates,
                               const DecisionFn& decide) {
  cfg.validate();
  NoGradGuard no_grad;
  const auto& vocab = backbones.vocab;
  const int r = vocab.img_tokens();
  const int k = adapters.config.k;
  const int limit = backbones.config.max_positions;

  DecodeResult result;
  Context ctx;
  for (const auto& seg : prompt.segments()) {
    if (const auto* text = std::get_if<TextSpan>(&seg)) {
      for (int id : text->tokens) {
        if (vocab.is_img(id)) throw std::invalid_argument("generate: prompt text contains an [IMG] id");
      }
      ctx.tokens.insert(ctx.tokens.end(), text->tokens.begin(), text->tokens.end());
      ctx.length += static_cast<int>(text->tokens.size());
    } else {
      const auto& slot = std::get<ImageSlot>(seg);
      if (slot.source == ImageSource::Input) {
        ctx.slots.push_back({ctx.length, map_image_to_prefix(backbones.encode_image(slot.raster), adapters.cap, k)});
        ctx.length += k;
      } else {
        for (int i = 1; i <= r; ++i) ctx.tokens.push_back(vocab.img_id(i));
        ctx.length += r;
      }
    }
  }
  result.sequence = prompt;
  if (ctx.length == 0) throw std::invalid_argument("generate: empty prompt");

  Rng rng = make_rng(cfg.seed, 400);
  int produced = 0;
  while (produced < cfg.max_new_tokens && ctx.length < limit) {
    const LmOutput out = backbones.lm.forward(ctx.tokens, ctx.slots, adapters.img_embeds);
    Eigen::RowVectorXd logits = out.logits.mat().row(ctx.length - 1);
    const double blocked = -std::numeric_limits<double>::infinity();
    for (int i = 2; i <= r; ++i) logits[vocab.img_id(i)] = blocked;
    if (ctx.length + r > limit) logits[vocab.img_id(1)] = blocked;  // no room for a full forcing window

    const int next = pick_token(logits, cfg, rng);
    result.emitted.push_back(next);
    ++produced;
    if (next == Vocabulary::kEos) break;
    if (next != vocab.img_id(1)) {
      ctx.tokens.push_back(next);
      ctx.length += 1;
      result.sequence.append_text({next});
      continue;
    }

    // Forcing window: the remaining [IMG] ids follow regardless of the sampler or budget.
    const int first = ctx.length;
    for (int i = 1; i <= r; ++i) ctx.tokens.push_back(vocab.img_id(i));
    for (int i = 2; i <= r; ++i) result.emitted.push_back(vocab.img_id(i));
    ctx.length += r;
    produced += r - 1;
    const LmOutput after = backbones.lm.forward(ctx.tokens, ctx.slots, adapters.img_embeds);
    ImageSlot slot;
    slot.img_hidden = after.hidden.mat().middleRows(first, r);
    const Eigen::VectorXd h1 = slot.img_hidden.row(0).transpose();
    const bool can_retrieve = candidates && !candidates->empty();
    const double max_cos = can_retrieve ? max_candidate_cosine(h1, *candidates, adapters.retrieval) : -1.0;
    if (can_retrieve && decide(slot.img_hidden, max_cos) == Verdict::Retrieve) {
      const Ranked top = retrieve_topk(h1, *candidates, adapters.retrieval, 1).front();
      slot.source = ImageSource::Retrieved;
      slot.retrieved_id = top.id;
      slot.score = top.score;
      slot.raster = candidates->by_id(top.id).raster;
    } else {
      slot.source = ImageSource::Generated;
      slot.score = max_cos;
      slot.raster = synthesize_image(backbones, adapters, slot.img_hidden);
    }
    result.sequence.append_image(std::move(slot));
  }
  return result;
}

}  // namespace gill
