// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace gill;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gill_test_dataset_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Dataset, ShapeworldIsDeterministicPerSeed) {
  ShapeworldSpec spec;
  const auto a = synthesize_shapeworld(spec), b = synthesize_shapeworld(spec);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].caption, b.train[i].caption);
    EXPECT_EQ(a.train[i].image.pixels, b.train[i].image.pixels);
  }
  EXPECT_EQ(a.candidates, b.candidates);
  spec.seed = 9;
  const auto c = synthesize_shapeworld(spec);
  bool differs = false;
  for (std::size_t i = 0; i < a.train.size() && !differs; ++i) differs = a.train[i].caption != c.train[i].caption;
  EXPECT_TRUE(differs);
}

TEST(Dataset, DefaultSplitShape) {
  const auto data = synthesize_shapeworld(ShapeworldSpec{});
  EXPECT_EQ(data.train.size(), 512u);
  EXPECT_EQ(data.heldout.size(), 64u);
  EXPECT_EQ(data.candidates.size(), 128u);
  std::set<std::string> distinct;
  for (const auto& it : data.train) distinct.insert(it.caption);
  EXPECT_EQ(distinct.size(), 128u);
}

TEST(Dataset, HeldoutPairsNeverAppearInTraining) {
  const auto data = synthesize_shapeworld(ShapeworldSpec{});
  for (const auto& it : data.train) {
    EXPECT_EQ(it.caption.find("yellow triangle"), std::string::npos) << it.caption;
    EXPECT_EQ(it.caption.find("green circle"), std::string::npos) << it.caption;
  }
  for (const auto& it : data.heldout) {
    const bool held = it.caption.find("yellow triangle") != std::string::npos ||
                      it.caption.find("green circle") != std::string::npos;
    EXPECT_TRUE(held) << it.caption;
  }
}

TEST(Dataset, CaptionsTokenizeWithoutUnknowns) {
  const Vocabulary vocab(64, 8);
  for (auto tmpl : {CaptionTemplate::Simple, CaptionTemplate::Full, CaptionTemplate::Pair}) {
    ShapeworldSpec spec;
    spec.caption_template = tmpl;
    spec.distinct = 0;
    spec.candidate_count = 16;
    spec.heldout_count = 8;
    const auto data = synthesize_shapeworld(spec);
    for (const auto& it : data.train) EXPECT_NO_THROW(vocab.encode_strict(it.caption)) << it.caption;
    for (const auto& it : data.heldout) EXPECT_NO_THROW(vocab.encode_strict(it.caption)) << it.caption;
  }
}

TEST(Dataset, EveryShapeColorPairRendersDistinctly) {
  const ShapeworldSpec spec;
  std::set<std::vector<double>> seen;
  for (const auto& shape : spec.shapes) {
    for (const auto& color : spec.colors) {
      Raster canvas = Raster::zeros(8, 8, 3);
      draw_shape(canvas, shape, color, 5, 1, 1);
      EXPECT_TRUE(seen.insert(std::vector<double>(canvas.pixels.begin(), canvas.pixels.end())).second)
          << shape << " " << color;
    }
  }
}

TEST(Dataset, RedSquareHasRedMassOnly) {
  Raster canvas = Raster::zeros(8, 8, 3);
  draw_shape(canvas, "square", "red", 3, 2, 2);
  double red = 0, other = 0;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      red += canvas.at(y, x, 0);
      other += canvas.at(y, x, 1) + canvas.at(y, x, 2);
    }
  }
  EXPECT_EQ(red, 9.0);
  EXPECT_EQ(other, 0.0);
  EXPECT_THROW(draw_shape(canvas, "hexagon", "red", 3, 0, 0), std::invalid_argument);
  EXPECT_THROW(draw_shape(canvas, "square", "mauve", 3, 0, 0), std::invalid_argument);
}

TEST(Dataset, DedupRejectsOversizedRequests) {
  ShapeworldSpec spec;
  spec.caption_template = CaptionTemplate::Simple;
  spec.distinct = 0;
  spec.dedup = true;
  spec.count = 1000;
  EXPECT_THROW(synthesize_shapeworld(spec), std::invalid_argument);
  spec.count = 5;
  spec.heldout_count = 2;
  spec.candidate_count = 5;
  const auto data = synthesize_shapeworld(spec);
  std::set<std::string> captions;
  for (const auto& it : data.train) captions.insert(it.caption);
  EXPECT_EQ(captions.size(), 5u);
}

TEST(Dataset, SpecJsonRejectsUnknownKeys) {
  ShapeworldSpec spec;
  spec.count = 33;
  const ShapeworldSpec back = nlohmann::json(spec).get<ShapeworldSpec>();
  EXPECT_EQ(back.count, 33);
  nlohmann::json bad = spec;
  bad["colour"] = "red";
  EXPECT_THROW(bad.get<ShapeworldSpec>(), std::invalid_argument);
}

TEST(Dataset, RasterFileRoundTrip) {
  const fs::path dir = fresh_dir("raster");
  Raster x = Raster::zeros(8, 8, 3);
  draw_shape(x, "circle", "blue", 5, 1, 2);
  x.pixels[0] = 0.125;
  write_raster(dir / "x.raw", x);
  EXPECT_EQ(fs::file_size(dir / "x.raw"), 8u + 4u * 192u);
  const Raster y = read_raster(dir / "x.raw");
  EXPECT_EQ(y.height, 8);
  EXPECT_EQ(y.pixels, x.pixels);
  std::ofstream(dir / "short.raw", std::ios::binary) << "abc";
  EXPECT_THROW(read_raster(dir / "short.raw"), FormatError);
}

TEST(Dataset, WrittenDatasetLoadsBack) {
  const fs::path dir = fresh_dir("write");
  ShapeworldSpec spec;
  spec.count = 24;
  spec.distinct = 12;
  spec.heldout_count = 4;
  spec.candidate_count = 12;
  const auto data = synthesize_shapeworld(spec);
  write_shapeworld(dir, spec, data);
  for (const char* f : {"train.jsonl", "heldout.jsonl", "candidates.jsonl", "decisions.jsonl", "spec.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto examples = load_examples(dir / "train.jsonl", Vocabulary(64, 8), BackboneConfig{});
  ASSERT_EQ(examples.size(), 24u);
  EXPECT_EQ(examples[3].caption_text, data.train[3].caption);
  EXPECT_LE((examples[3].image.pixels - data.train[3].image.pixels).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Dataset, JsonlErrorsNameFileAndLine) {
  const fs::path dir = fresh_dir("errors");
  const fs::path p = dir / "train.jsonl";
  write_lines(p, {R"({"caption": "a red square", "image": [0]})", "not json"});
  EXPECT_NE(error_of([&] { read_jsonl_records(p); }).find("train.jsonl:2"), std::string::npos);
  write_lines(p, {R"({"caption": ""})"});
  EXPECT_NE(error_of([&] { read_jsonl_records(p); }).find(":1"), std::string::npos);
  write_lines(p, {R"({"caption": "a red square", "image": [0.5]})"});
  const std::string msg = error_of([&] { load_examples(p, Vocabulary(64, 8), BackboneConfig{}); });
  EXPECT_NE(msg.find("train.jsonl:1"), std::string::npos) << msg;
  write_lines(p, {R"({"caption": "a zebra", "image": []})"});
  EXPECT_FALSE(error_of([&] { load_examples(p, Vocabulary(64, 8), BackboneConfig{}); }).empty());
}
