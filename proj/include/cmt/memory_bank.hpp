#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "cmt/compressor.hpp"

namespace cmt {

// Ordered store of condensed memories. Iteration order is insertion order.
class MemoryBank {
 public:
  static constexpr std::uint16_t kVersion = 1;

  MemoryBank() = default;
  MemoryBank(std::size_t k, std::size_t d) : k_(k), d_(d) {}

  // Throws InvalidArgument on duplicate doc id, ShapeError on (k, d) mismatch.
  void insert(CondensedMemory memory);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t k() const { return k_; }
  std::size_t d() const { return d_; }
  const CondensedMemory& operator[](std::size_t i) const { return entries_.at(i); }
  const std::vector<CondensedMemory>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Indices of the `window` entries most cosine-similar to `query_pooled`,
  // descending; ties go to the lower insertion index.
  std::vector<std::size_t> topk_select(std::span<const float> query_pooled, std::size_t window) const;

  std::string serialize() const;
  static MemoryBank deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static MemoryBank load(const std::string& path);

  bool operator==(const MemoryBank&) const = default;

 private:
  std::size_t k_ = 0;
  std::size_t d_ = 0;
  std::vector<CondensedMemory> entries_;
  std::unordered_set<std::uint64_t> ids_;
};

// Cosine similarity with a 1e-8 norm floor on each side.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

}  // namespace cmt
