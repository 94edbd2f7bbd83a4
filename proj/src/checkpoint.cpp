// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace gill {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'G', 'I', 'L', 'L'};
constexpr std::size_t kPreamble = 16;

template <typename T>
void put(std::vector<unsigned char>& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(std::span<const unsigned char> bytes, std::size_t at) {
  T v;
  std::memcpy(&v, bytes.data() + at, sizeof(T));
  return v;
}

}  // namespace

const ArrayRecord* Container::find(std::string_view name) const {
  auto it = std::find_if(arrays.begin(), arrays.end(), [&](const ArrayRecord& a) { return a.name == name; });
  return it == arrays.end() ? nullptr : &*it;
}

const ArrayRecord& Container::at(std::string_view name) const {
  if (const auto* a = find(name)) return *a;
  throw FormatError("container: missing array '" + std::string(name) + "'");
}

std::vector<unsigned char> encode_container(const Container& c) {
  nlohmann::json header;
  header["meta"] = c.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    if (shape_numel(a.shape) != a.values.size()) {
      throw std::invalid_argument("container: array '" + a.name + "' shape " + shape_str(a.shape) +
                                  " does not match its values");
    }
    header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", "f32"}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(a.values.size()) * sizeof(float);
  }
  const std::string text = header.dump();
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& a : c.arrays) {
    for (Eigen::Index i = 0; i < a.values.size(); ++i) put<float>(out, static_cast<float>(a.values[i]));
  }
  return out;
}

Container decode_container(std::span<const unsigned char> bytes) {
  if (bytes.size() < kPreamble) throw FormatError("container: truncated preamble (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("container: bad magic bytes");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kContainerVersion) {
    throw FormatError("container: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kContainerVersion) + ")");
  }
  const auto header_len = get<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPreamble) throw FormatError("container: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: malformed header: ") + e.what());
  }
  const std::size_t payload_start = kPreamble + header_len;
  const std::size_t payload_size = bytes.size() - payload_start;

  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  try {
    for (const auto& entry : header.at("arrays")) {
      ArrayRecord a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<Shape>();
      if (entry.at("dtype").get<std::string>() != "f32") throw FormatError("container: array '" + a.name + "' has unsupported dtype");
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto n = shape_numel(a.shape);
      if (n <= 0) throw FormatError("container: array '" + a.name + "' has an empty shape");
      const std::uint64_t len = static_cast<std::uint64_t>(n) * sizeof(float);
      if (offset > payload_size || len > payload_size - offset) {
        throw FormatError("container: array '" + a.name + "' runs past the end of the file (truncated?)");
      }
      spans.emplace_back(offset, offset + len);
      a.values.resize(n);
      for (std::int64_t i = 0; i < n; ++i) {
        a.values[i] = get<float>(bytes, payload_start + offset + static_cast<std::size_t>(i) * sizeof(float));
      }
      c.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: malformed array table: ") + e.what());
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) throw FormatError("container: overlapping array payloads");
  }
  const std::uint64_t used = spans.empty() ? 0 : spans.back().second;
  if (used != payload_size) throw FormatError("container: payload size mismatch (trailing or missing bytes)");
  return c;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_bytes(path, encode_container(c));
}

Container read_container(const std::filesystem::path& path) { return decode_container(read_file_bytes(path)); }

}  // namespace gill
