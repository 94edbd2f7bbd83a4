// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/sequence.hpp"

namespace gill {

MultimodalSequence::MultimodalSequence(std::vector<Segment> segments) {
  for (auto& s : segments) {
    if (auto* t = std::get_if<TextSpan>(&s)) {
      append_text(t->tokens);
    } else {
      append_image(std::get<ImageSlot>(std::move(s)));
    }
  }
}

void MultimodalSequence::append_text(const std::vector<int>& tokens) {
  if (tokens.empty()) return;
  if (!segments_.empty()) {
    if (auto* last = std::get_if<TextSpan>(&segments_.back())) {
      last->tokens.insert(last->tokens.end(), tokens.begin(), tokens.end());
      return;
    }
  }
  segments_.emplace_back(TextSpan{tokens});
}

void MultimodalSequence::append_image(ImageSlot slot) { segments_.emplace_back(std::move(slot)); }

std::size_t MultimodalSequence::image_count() const {
  std::size_t n = 0;
  for (const auto& s : segments_) n += std::holds_alternative<ImageSlot>(s) ? 1 : 0;
  return n;
}

std::vector<std::pair<const Raster*, const std::vector<int>*>> MultimodalSequence::pairs() const {
  std::vector<std::pair<const Raster*, const std::vector<int>*>> out;
  for (std::size_t i = 0; i + 1 < segments_.size(); ++i) {
    const auto* img = std::get_if<ImageSlot>(&segments_[i]);
    const auto* txt = std::get_if<TextSpan>(&segments_[i + 1]);
    if (img && txt) out.emplace_back(&img->raster, &txt->tokens);
  }
  return out;
}

}  // namespace gill
