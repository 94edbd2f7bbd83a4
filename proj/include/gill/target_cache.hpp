// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/checkpoint.hpp"
#include "gill/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <unordered_map>
#include <vector>

namespace gill {

struct FrozenBackbones;

/// Precomputed distillation targets keyed by caption hash. The full caption is
/// stored alongside each entry so collisions are detected, not silently merged.
class TargetCache {
 public:
  using Hasher = std::function<std::uint64_t(const std::vector<int>&)>;

  TargetCache();
  explicit TargetCache(Hasher hasher);

  /// Adds an entry; re-inserting the same caption is a no-op. Throws on a hash collision.
  void insert(const std::vector<int>& caption, RowMatrix target);
  const RowMatrix* find(const std::vector<int>& caption) const;
  std::size_t size() const { return entries_.size(); }

  Container to_container() const;
  static TargetCache from_container(const Container& c);
  void save(const std::filesystem::path& path) const { write_container(path, to_container()); }
  static TargetCache load(const std::filesystem::path& path) { return from_container(read_container(path)); }

  static std::uint64_t fnv1a(const std::vector<int>& caption);

 private:
  struct Entry {
    std::vector<int> caption;
    RowMatrix target;
  };
  Hasher hasher_;
  std::unordered_map<std::uint64_t, Entry> entries_;
};

/// One entry per distinct caption, encoded with the frozen target text encoder.
TargetCache precompute_targets(const FrozenBackbones& backbones, const std::vector<std::vector<int>>& captions);

}  // namespace gill
