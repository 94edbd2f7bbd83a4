// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/dataset.hpp"

#include "gill/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace gill {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "raster files assume a little-endian host");

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace

void write_raster(const fs::path& path, const Raster& x) {
  if (x.channels != 3) throw std::invalid_argument("write_raster: expected 3 channels, got " + std::to_string(x.channels));
  std::vector<unsigned char> out;
  out.reserve(8 + 4 * static_cast<std::size_t>(x.pixels.size()));
  put_u32(out, static_cast<std::uint32_t>(x.height));
  put_u32(out, static_cast<std::uint32_t>(x.width));
  for (Eigen::Index i = 0; i < x.pixels.size(); ++i) {
    const float f = static_cast<float>(x.pixels[i]);
    unsigned char b[4];
    std::memcpy(b, &f, 4);
    out.insert(out.end(), b, b + 4);
  }
  write_file_bytes(path, out);
}

Raster read_raster(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 8) throw FormatError("raster " + path.string() + ": truncated header");
  const auto h = get_u32(bytes.data()), w = get_u32(bytes.data() + 4);
  const std::size_t n = std::size_t(h) * w * 3;
  if (bytes.size() != 8 + 4 * n) {
    throw FormatError("raster " + path.string() + ": expected " + std::to_string(8 + 4 * n) + " bytes, found " +
                      std::to_string(bytes.size()));
  }
  Raster x = Raster::zeros(static_cast<int>(h), static_cast<int>(w), 3);
  for (std::size_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 8 + 4 * i, 4);
    x.pixels[static_cast<Eigen::Index>(i)] = f;
  }
  return x;
}

std::vector<DatasetRecord> read_jsonl_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DatasetRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw FormatError(where + ": expected a JSON object");
    DatasetRecord r;
    try {
      r.caption = j.at("caption").get<std::string>();
      const auto& img = j.at("image");
      if (img.is_string()) {
        r.image_path = img.get<std::string>();
      } else {
        r.image_values = img.get<std::vector<double>>();
      }
      if (j.contains("pack_group") && !j.at("pack_group").is_null()) r.pack_group = j.at("pack_group").get<int>();
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (r.caption.empty()) throw FormatError(where + ": empty caption");
    out.push_back(std::move(r));
  }
  return out;
}

void write_jsonl_records(const fs::path& path, const std::vector<DatasetRecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) {
    json j{{"caption", r.caption}};
    if (!r.image_path.empty()) {
      j["image"] = r.image_path;
    } else {
      j["image"] = r.image_values;
    }
    if (r.pack_group) j["pack_group"] = *r.pack_group;
    os << j.dump() << '\n';
  }
  const std::string s = os.str();
  write_file_bytes(path, std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

std::vector<TrainingExample> load_examples(const fs::path& jsonl, const Vocabulary& vocab, const BackboneConfig& cfg) {
  const auto records = read_jsonl_records(jsonl);
  std::vector<TrainingExample> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    TrainingExample ex;
    ex.caption_text = r.caption;
    try {
      ex.caption = vocab.encode_strict(r.caption);
    } catch (const std::exception& e) {
      throw FormatError(jsonl.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    if (!r.image_path.empty()) {
      ex.image = read_raster(jsonl.parent_path() / r.image_path);
    } else {
      ex.image = Raster::zeros(cfg.H, cfg.W, cfg.C);
      if (static_cast<Eigen::Index>(r.image_values.size()) != ex.image.pixels.size()) {
        throw FormatError(jsonl.string() + ":" + std::to_string(i + 1) + ": inline image has " +
                          std::to_string(r.image_values.size()) + " values");
      }
      ex.image.pixels = Eigen::Map<const Eigen::VectorXd>(r.image_values.data(), ex.image.pixels.size());
    }
    if (ex.image.height != cfg.H || ex.image.width != cfg.W || ex.image.channels != cfg.C) {
      throw FormatError(jsonl.string() + ":" + std::to_string(i + 1) + ": raster size does not match the backbone");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shapeworld

namespace {

const std::map<std::string, std::array<double, 3>> kColors = {
    {"red", {1, 0, 0}}, {"green", {0, 1, 0}}, {"blue", {0, 0, 1}}, {"yellow", {1, 1, 0}}};

std::string_view template_name(CaptionTemplate t) {
  switch (t) {
    case CaptionTemplate::Simple: return "simple";
    case CaptionTemplate::Full: return "full";
    case CaptionTemplate::Pair: return "pair";
  }
  return "full";
}

CaptionTemplate parse_template(const std::string& s) {
  for (auto t : {CaptionTemplate::Simple, CaptionTemplate::Full, CaptionTemplate::Pair}) {
    if (template_name(t) == s) return t;
  }
  throw std::invalid_argument("shapeworld: unknown caption template '" + s + "'");
}

int size_pixels(const std::string& size) {
  if (size == "small") return 3;
  if (size == "large") return 5;
  throw std::invalid_argument("shapeworld: unknown size '" + size + "'");
}

int place(const std::string& where, int extent, int size) {
  if (where == "top" || where == "left") return 0;
  if (where == "middle" || where == "center") return (extent - size) / 2;
  if (where == "bottom" || where == "right") return extent - size;
  throw std::invalid_argument("shapeworld: unknown position '" + where + "'");
}

struct Combo {
  std::string caption;
  std::vector<std::pair<std::string, std::string>> objects;  // (shape, color)
  Raster image;
};

std::vector<Combo> enumerate(const ShapeworldSpec& s) {
  std::vector<Combo> out;
  const auto blank = [&] { return Raster::zeros(s.height, s.width, 3); };
  switch (s.caption_template) {
    case CaptionTemplate::Simple:
      for (const auto& shape : s.shapes) {
        for (const auto& color : s.colors) {
          Combo c{"a " + color + " " + shape, {{shape, color}}, blank()};
          draw_shape(c.image, shape, color, 5, place("middle", s.height, 5), place("center", s.width, 5));
          out.push_back(std::move(c));
        }
      }
      break;
    case CaptionTemplate::Full:
      for (const auto& size : s.sizes) {
        for (const auto& color : s.colors) {
          for (const auto& shape : s.shapes) {
            for (const char* v : {"top", "middle", "bottom"}) {
              for (const char* h : {"left", "center", "right"}) {
                Combo c{"a " + size + " " + color + " " + shape + " at the " + v + " " + h, {{shape, color}}, blank()};
                const int px = size_pixels(size);
                draw_shape(c.image, shape, color, px, place(v, s.height, px), place(h, s.width, px));
                out.push_back(std::move(c));
              }
            }
          }
        }
      }
      break;
    case CaptionTemplate::Pair:
      for (const auto& c1 : s.colors) {
        for (const auto& s1 : s.shapes) {
          for (const auto& c2 : s.colors) {
            for (const auto& s2 : s.shapes) {
              Combo c{"a " + c1 + " " + s1 + " above a " + c2 + " " + s2, {{s1, c1}, {s2, c2}}, blank()};
              draw_shape(c.image, s1, c1, 3, 0, place("center", s.width, 3));
              draw_shape(c.image, s2, c2, 3, s.height - 3, place("center", s.width, 3));
              out.push_back(std::move(c));
            }
          }
        }
      }
      break;
  }
  return out;
}

std::vector<ShapeworldItem> draw_items(const std::vector<const Combo*>& pool, int count, bool dedup, Rng& rng,
                                       const char* split) {
  if (count > 0 && pool.empty()) throw std::invalid_argument(std::string("shapeworld: no combinations for ") + split);
  std::vector<ShapeworldItem> out;
  if (dedup) {
    if (count > static_cast<int>(pool.size())) {
      throw std::invalid_argument(std::string("shapeworld: ") + split + " count " + std::to_string(count) +
                                  " exceeds " + std::to_string(pool.size()) + " distinct combinations");
    }
    std::vector<const Combo*> order = pool;
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < count; ++i) out.push_back({order[i]->caption, order[i]->image});
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int i = 0; i < count; ++i) {
      const Combo* c = pool[pick(rng)];
      out.push_back({c->caption, c->image});
    }
  }
  return out;
}

}  // namespace

void to_json(json& j, const ShapeworldSpec& s) {
  json pairs = json::array();
  for (const auto& [shape, color] : s.heldout_pairs) pairs.push_back({shape, color});
  j = json{{"shapes", s.shapes},
           {"colors", s.colors},
           {"sizes", s.sizes},
           {"height", s.height},
           {"width", s.width},
           {"caption_template", std::string(template_name(s.caption_template))},
           {"count", s.count},
           {"distinct", s.distinct},
           {"heldout_count", s.heldout_count},
           {"heldout_pairs", pairs},
           {"candidate_count", s.candidate_count},
           {"dedup", s.dedup},
           {"seed", s.seed}};
}

void from_json(const json& j, ShapeworldSpec& s) {
  static const std::set<std::string> known = {"shapes", "colors", "sizes", "height", "width", "caption_template",
                                              "count", "distinct", "heldout_count", "heldout_pairs", "candidate_count",
                                              "dedup", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("shapeworld spec: unknown key '" + key + "'");
  }
  if (j.contains("shapes")) s.shapes = j.at("shapes").get<std::vector<std::string>>();
  if (j.contains("colors")) s.colors = j.at("colors").get<std::vector<std::string>>();
  if (j.contains("sizes")) s.sizes = j.at("sizes").get<std::vector<std::string>>();
  if (j.contains("height")) s.height = j.at("height").get<int>();
  if (j.contains("width")) s.width = j.at("width").get<int>();
  if (j.contains("caption_template")) s.caption_template = parse_template(j.at("caption_template").get<std::string>());
  if (j.contains("count")) s.count = j.at("count").get<int>();
  if (j.contains("distinct")) s.distinct = j.at("distinct").get<int>();
  if (j.contains("heldout_count")) s.heldout_count = j.at("heldout_count").get<int>();
  if (j.contains("heldout_pairs")) {
    s.heldout_pairs.clear();
    for (const auto& p : j.at("heldout_pairs")) s.heldout_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  }
  if (j.contains("candidate_count")) s.candidate_count = j.at("candidate_count").get<int>();
  if (j.contains("dedup")) s.dedup = j.at("dedup").get<bool>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
}

void draw_shape(Raster& canvas, const std::string& shape, const std::string& color, int size, int top, int left) {
  const auto it = kColors.find(color);
  if (it == kColors.end()) throw std::invalid_argument("shapeworld: unknown color '" + color + "'");
  const double center = (size - 1) / 2.0;
  const double radius = size / 2.0 - 0.3;
  for (int i = 0; i < size; ++i) {
    for (int k = 0; k < size; ++k) {
      bool on = false;
      if (shape == "square") {
        on = true;
      } else if (shape == "circle") {
        on = std::hypot(i - center, k - center) <= radius;
      } else if (shape == "triangle") {
        on = std::abs(k - center) <= (i + 1) / 2;
      } else {
        throw std::invalid_argument("shapeworld: unknown shape '" + shape + "'");
      }
      const int y = top + i, x = left + k;
      if (!on || y < 0 || x < 0 || y >= canvas.height || x >= canvas.width) continue;
      for (int ch = 0; ch < 3; ++ch) canvas.at(y, x, ch) = it->second[static_cast<std::size_t>(ch)];
    }
  }
}

ShapeworldData synthesize_shapeworld(const ShapeworldSpec& spec) {
  if (spec.count < 1) throw std::invalid_argument("shapeworld: count must be at least 1");
  const auto combos = enumerate(spec);
  std::set<std::pair<std::string, std::string>> held(spec.heldout_pairs.begin(), spec.heldout_pairs.end());
  std::vector<const Combo*> seen, unseen;
  for (const auto& c : combos) {
    const bool is_held = std::any_of(c.objects.begin(), c.objects.end(), [&](const auto& o) { return held.count(o) > 0; });
    (is_held ? unseen : seen).push_back(&c);
  }
  Rng rng = make_rng(spec.seed, 300);
  ShapeworldData data;
  if (spec.distinct > 0) {
    if (spec.distinct > static_cast<int>(seen.size())) {
      throw std::invalid_argument("shapeworld: distinct " + std::to_string(spec.distinct) + " exceeds " +
                                  std::to_string(seen.size()) + " training combinations");
    }
    if (spec.dedup && spec.count > spec.distinct) {
      throw std::invalid_argument("shapeworld: count exceeds distinct combinations with dedup on");
    }
    std::shuffle(seen.begin(), seen.end(), rng);
    seen.resize(static_cast<std::size_t>(spec.distinct));
    for (int i = 0; i < spec.count; ++i) {
      const Combo* c = seen[static_cast<std::size_t>(i % spec.distinct)];
      data.train.push_back({c->caption, c->image});
    }
    std::shuffle(data.train.begin(), data.train.end(), rng);
  } else {
    data.train = draw_items(seen, spec.count, spec.dedup, rng, "train");
  }
  data.heldout = draw_items(unseen, spec.heldout_count, spec.dedup, rng, "heldout");
  std::set<std::string> taken;
  for (int i = 0; i < static_cast<int>(data.train.size()); ++i) {
    if (static_cast<int>(data.candidates.size()) >= spec.candidate_count) break;
    if (taken.insert(data.train[i].caption).second) data.candidates.push_back(i);
  }
  return data;
}

void write_shapeworld(const fs::path& dir, const ShapeworldSpec& spec, const ShapeworldData& data) {
  fs::create_directories(dir / "images");
  const auto dump_split = [&](const std::vector<ShapeworldItem>& items, const std::string& split) {
    std::vector<DatasetRecord> records;
    for (std::size_t i = 0; i < items.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "images/%s_%05zu.raw", split.c_str(), i);
      write_raster(dir / name, items[i].image);
      records.push_back({items[i].caption, name, {}, std::nullopt});
    }
    write_jsonl_records(dir / (split + ".jsonl"), records);
    return records;
  };
  const auto train = dump_split(data.train, "train");
  dump_split(data.heldout, "heldout");

  std::vector<DatasetRecord> candidates;
  for (int idx : data.candidates) candidates.push_back(train[static_cast<std::size_t>(idx)]);
  write_jsonl_records(dir / "candidates.jsonl", candidates);

  // Captions whose combination is in the candidate pool are retrieval cases; unseen ones need generation.
  std::ostringstream decisions;
  for (const auto& c : candidates) decisions << json{{"prompt", c.caption}, {"label", "ret"}}.dump() << '\n';
  std::set<std::string> gen_seen;
  for (const auto& h : data.heldout) {
    if (gen_seen.insert(h.caption).second) decisions << json{{"prompt", h.caption}, {"label", "gen"}}.dump() << '\n';
  }
  const std::string ds = decisions.str();
  write_file_bytes(dir / "decisions.jsonl", std::span(reinterpret_cast<const unsigned char*>(ds.data()), ds.size()));
  const std::string sj = json(spec).dump(2) + "\n";
  write_file_bytes(dir / "spec.json", std::span(reinterpret_cast<const unsigned char*>(sj.data()), sj.size()));
}

}  // namespace gill
