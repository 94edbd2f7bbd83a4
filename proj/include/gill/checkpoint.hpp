// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/tensor.hpp"

#include "json.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gill {

/// Binary container shared by checkpoints, frozen backbones and target caches:
///
///   bytes 0..3    magic "GILL"
///   bytes 4..7    u32 format version (little-endian)
///   bytes 8..15   u64 header length in bytes
///   header        UTF-8 JSON: {"arrays": [{name, shape, dtype, offset}], "meta": {...}}
///   payload       little-endian fp32 arrays; offsets are relative to the payload start
struct ArrayRecord {
  std::string name;
  Shape shape;
  Eigen::VectorXd values;
};

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ArrayRecord> arrays;

  const ArrayRecord& at(std::string_view name) const;
  const ArrayRecord* find(std::string_view name) const;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kContainerVersion = 1;

std::vector<unsigned char> encode_container(const Container& c);
/// Throws FormatError on bad magic, version, truncation or inconsistent offsets.
Container decode_container(std::span<const unsigned char> bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes);

}  // namespace gill
