// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/backbones.hpp"

#include <variant>
#include <vector>

namespace gill {

struct TextSpan {
  std::vector<int> tokens;
};

enum class ImageSource { Input, Retrieved, Generated };

struct ImageSlot {
  ImageSource source = ImageSource::Input;
  Raster raster;
  int retrieved_id = -1;   // candidate id when retrieved
  double score = 0.0;      // retrieval cosine when retrieved
  RowMatrix img_hidden;    // [r x e] for retrieved/generated slots
};

using Segment = std::variant<TextSpan, ImageSlot>;

/// Interleaved text spans and image slots. Adjacent text spans are merged.
class MultimodalSequence {
 public:
  MultimodalSequence() = default;
  explicit MultimodalSequence(std::vector<Segment> segments);

  void append_text(const std::vector<int>& tokens);
  void append_image(ImageSlot slot);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t image_count() const;

  /// (image, caption) pairs for training: each image slot followed by a text span.
  std::vector<std::pair<const Raster*, const std::vector<int>*>> pairs() const;

 private:
  std::vector<Segment> segments_;
};

}  // namespace gill
