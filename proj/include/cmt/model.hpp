#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "cmt/aggregator.hpp"
#include "cmt/alignment.hpp"
#include "cmt/compressor.hpp"
#include "cmt/config.hpp"
#include "cmt/transformer.hpp"

namespace cmt {

// Everything a checkpoint carries: the frozen base LM and, once the learning
// phase has run (or been initialized), the compressor with its condensed
// tokens, the aggregator and the alignment network.
struct CmtModel {
  static constexpr std::uint16_t kVersion = 1;

  ModelConfig cfg;
  LMParams lm;
  bool has_memory = false;
  CompressorParams compressor;
  AggregatorParams aggregator;
  AlignParams alignment;

  CmtModel() = default;
  explicit CmtModel(const ModelConfig& cfg);
  CmtModel(const CmtModel&) = delete;
  CmtModel& operator=(const CmtModel&) = delete;
  CmtModel(CmtModel&&) = default;
  CmtModel& operator=(CmtModel&&) = default;

  void init_base(std::mt19937_64& rng);
  // Builds and initializes the memory modules; the compressor starts as a copy
  // of the base LM's weights when `from_base` is set.
  void init_memory(std::mt19937_64& rng, bool from_base);

  ParamList base_params() { return lm.params(); }
  // Compressor (incl. condensed tokens), aggregator, alignment.
  ParamList memory_params();
  ParamList all_params();

  // "CMTW" checkpoint: magic, u16 version, u32 config length + model config
  // text, u8 has_memory, u32 block count, then per parameter in declared
  // order: u16 name length, name, u64 element count, raw little-endian f32.
  std::string serialize();
  static CmtModel deserialize(const std::string& bytes);
  void save(const std::string& path);
  static CmtModel load(const std::string& path);
};

// Hex SHA-256 over the raw bytes of the given parameters, in order.
std::string params_sha256(const ParamList& params);

}  // namespace cmt
