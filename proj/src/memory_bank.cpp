#include "cmt/memory_bank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cmt/binary_io.hpp"

namespace cmt {

namespace io {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("io", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("io", "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("io", "short write to " + path);
}

}  // namespace io

namespace {
constexpr char kMagic[4] = {'C', 'M', 'T', 'B'};
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_similarity: sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

void MemoryBank::insert(CondensedMemory memory) {
  if (entries_.empty() && k_ == 0 && d_ == 0) {
    k_ = memory.k();
    d_ = memory.d();
  }
  if (memory.k() != k_ || memory.d() != d_)
    throw ShapeError("memory bank holds " + std::to_string(k_) + "x" + std::to_string(d_) + " memories, got " +
                     std::to_string(memory.k()) + "x" + std::to_string(memory.d()));
  if (memory.pooled.size() != d_)
    throw ShapeError("memory pooled vector has " + std::to_string(memory.pooled.size()) + " entries, expected " +
                     std::to_string(d_));
  if (!ids_.insert(memory.doc_id).second)
    throw InvalidArgument("duplicate doc_id " + std::to_string(memory.doc_id) + " in memory bank");
  entries_.push_back(std::move(memory));
}

std::vector<std::size_t> MemoryBank::topk_select(std::span<const float> query_pooled, std::size_t window) const {
  if (window < 1) throw InvalidArgument("topk_select: window must be >= 1");
  if (entries_.empty()) throw InvalidArgument("topk_select: memory bank is empty");
  std::vector<double> sim(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) sim[i] = cosine_similarity(query_pooled, entries_[i].pooled.span());
  std::vector<std::size_t> idx(entries_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t keep = std::min(window, idx.size());
  auto by_sim = [&](std::size_t a, std::size_t b) { return sim[a] > sim[b] || (sim[a] == sim[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), by_sim);
  idx.resize(keep);
  return idx;
}

std::string MemoryBank::serialize() const {
  io::Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(k_));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d_));
  w.put<std::uint64_t>(entries_.size());
  for (const auto& e : entries_) {
    w.put<std::uint64_t>(e.doc_id);
    w.put_bytes(e.matrix.data(), e.matrix.size() * sizeof(float));
    w.put_bytes(e.pooled.data(), e.pooled.size() * sizeof(float));
  }
  return w.bytes();
}

MemoryBank MemoryBank::deserialize(const std::string& bytes) {
  io::Reader r(bytes, "memory bank");
  char magic[4];
  r.get_bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("magic", "memory bank: bad magic (expected CMTB)");
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion)
    throw FormatError("version", "memory bank: unsupported version " + std::to_string(version));
  const std::size_t k = r.get<std::uint32_t>();
  const std::size_t d = r.get<std::uint32_t>();
  const std::uint64_t count = r.get<std::uint64_t>();
  const std::size_t entry_bytes = 8 + (k * d + d) * sizeof(float);
  if (entry_bytes > 0 && count > r.remaining() / entry_bytes)
    throw FormatError("truncated", "memory bank: truncated (header declares " + std::to_string(count) +
                                       " entries, " + std::to_string(r.remaining()) + " bytes follow)");
  MemoryBank bank(k, d);
  for (std::uint64_t i = 0; i < count; ++i) {
    CondensedMemory m;
    m.doc_id = r.get<std::uint64_t>();
    m.matrix = Tensor<float>({k, d});
    r.get_bytes(m.matrix.data(), k * d * sizeof(float));
    m.pooled = Tensor<float>({1, d});
    r.get_bytes(m.pooled.data(), d * sizeof(float));
    bank.insert(std::move(m));
  }
  if (r.remaining() != 0)
    throw FormatError("trailing", "memory bank: " + std::to_string(r.remaining()) + " trailing bytes");
  return bank;
}

void MemoryBank::save(const std::string& path) const { io::write_file(path, serialize()); }

MemoryBank MemoryBank::load(const std::string& path) { return deserialize(io::read_file(path)); }

}  // namespace cmt
