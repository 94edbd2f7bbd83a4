// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/backbones.hpp"
#include "gill/losses.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gill {

// Raster files: u32 height, u32 width (little-endian), then H*W*3 fp32 values.
void write_raster(const std::filesystem::path& path, const Raster& x);
Raster read_raster(const std::filesystem::path& path);

/// One JSONL training line.
struct DatasetRecord {
  std::string caption;
  std::string image_path;               // relative to the dataset directory, or empty
  std::vector<double> image_values;     // inline flat H*W*3 values when image_path is empty
  std::optional<int> pack_group;
};

/// Parses one JSONL file; errors name the file and 1-based line number.
std::vector<DatasetRecord> read_jsonl_records(const std::filesystem::path& path);
void write_jsonl_records(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);

/// Resolves rasters (relative to `root`) and tokenizes captions strictly.
std::vector<TrainingExample> load_examples(const std::filesystem::path& jsonl, const Vocabulary& vocab,
                                           const BackboneConfig& cfg);

enum class CaptionTemplate {
  Simple,  // "a {color} {shape}"
  Full,    // "a {size} {color} {shape} at the {vpos} {hpos}"
  Pair,    // "a {color} {shape} above a {color} {shape}", two stacked objects
};

struct ShapeworldSpec {
  std::vector<std::string> shapes{"square", "circle", "triangle"};
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> sizes{"small", "large"};
  int height = 8, width = 8;
  CaptionTemplate caption_template = CaptionTemplate::Full;
  int count = 512;
  /// When positive, the training split cycles through exactly this many distinct combinations.
  int distinct = 128;
  int heldout_count = 64;
  /// (shape, color) pairs that never appear in the training split.
  std::vector<std::pair<std::string, std::string>> heldout_pairs{{"triangle", "yellow"}, {"circle", "green"}};
  int candidate_count = 128;
  bool dedup = false;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const ShapeworldSpec& s);
void from_json(const nlohmann::json& j, ShapeworldSpec& s);

struct ShapeworldItem {
  std::string caption;
  Raster image;
};

struct ShapeworldData {
  std::vector<ShapeworldItem> train;
  std::vector<ShapeworldItem> heldout;
  /// Indices into `train`, one per distinct caption.
  std::vector<int> candidates;
};

/// Renders a single object. Sizes "small"/"large" are 3 and 5 pixels.
void draw_shape(Raster& canvas, const std::string& shape, const std::string& color, int size, int top, int left);

/// Deterministic under spec.seed. Throws when dedup asks for more items than distinct captions exist.
ShapeworldData synthesize_shapeworld(const ShapeworldSpec& spec);

/// Writes train.jsonl, heldout.jsonl, candidates.jsonl, decisions.jsonl, spec.json and images/.
void write_shapeworld(const std::filesystem::path& dir, const ShapeworldSpec& spec, const ShapeworldData& data);

}  // namespace gill
