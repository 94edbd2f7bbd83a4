// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/target_cache.hpp"

#include "gill/backbones.hpp"

#include <algorithm>
#include <cstdio>

namespace gill {

TargetCache::TargetCache() : hasher_(&TargetCache::fnv1a) {}
TargetCache::TargetCache(Hasher hasher) : hasher_(std::move(hasher)) {}

std::uint64_t TargetCache::fnv1a(const std::vector<int>& caption) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int id : caption) {
    auto u = static_cast<std::uint32_t>(id);
    for (int b = 0; b < 4; ++b) {
      h ^= (u >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void TargetCache::insert(const std::vector<int>& caption, RowMatrix target) {
  const auto key = hasher_(caption);
  auto it = entries_.find(key);
  if (it != entries_.end()) {
    if (it->second.caption != caption) {
      throw std::runtime_error("target cache: hash collision between distinct captions");
    }
    return;
  }
  entries_.emplace(key, Entry{caption, std::move(target)});
}

const RowMatrix* TargetCache::find(const std::vector<int>& caption) const {
  auto it = entries_.find(hasher_(caption));
  if (it == entries_.end() || it->second.caption != caption) return nullptr;
  return &it->second.target;
}

Container TargetCache::to_container() const {
  std::vector<std::uint64_t> keys;
  keys.reserve(entries_.size());
  for (const auto& [k, _] : entries_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());

  Container c;
  c.meta["kind"] = "target_cache";
  c.meta["captions"] = nlohmann::json::object();
  for (auto k : keys) {
    const auto& e = entries_.at(k);
    char name[32];
    std::snprintf(name, sizeof(name), "target/%016llx", static_cast<unsigned long long>(k));
    c.meta["captions"][name] = e.caption;
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(e.target.data(), e.target.size());
    c.arrays.push_back({name, {static_cast<int>(e.target.rows()), static_cast<int>(e.target.cols())}, std::move(flat)});
  }
  return c;
}

TargetCache TargetCache::from_container(const Container& c) {
  if (c.meta.value("kind", "") != "target_cache") throw FormatError("target cache: container is not a target cache");
  TargetCache cache;
  for (const auto& a : c.arrays) {
    const auto caption = c.meta.at("captions").at(a.name).get<std::vector<int>>();
    RowMatrix m = Eigen::Map<const RowMatrix>(a.values.data(), a.shape.at(0), a.shape.at(1));
    cache.insert(caption, std::move(m));
  }
  return cache;
}

TargetCache precompute_targets(const FrozenBackbones& backbones, const std::vector<std::vector<int>>& captions) {
  TargetCache cache;
  for (const auto& y : captions) {
    if (cache.find(y)) continue;
    cache.insert(y, backbones.target_encode(y));
  }
  return cache;
}

}  // namespace gill
