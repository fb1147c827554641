#include "cmt/model.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <memory>

#include "cmt/binary_io.hpp"

namespace cmt {
namespace {
constexpr char kMagic[4] = {'C', 'M', 'T', 'W'};
}

CmtModel::CmtModel(const ModelConfig& c) : cfg(c), lm(c) {}

void CmtModel::init_base(std::mt19937_64& rng) { lm.init(rng); }

void CmtModel::init_memory(std::mt19937_64& rng, bool from_base) {
  compressor = CompressorParams(cfg);
  aggregator = AggregatorParams(cfg);
  alignment = AlignParams(cfg);
  if (from_base) {
    compressor.init_from(lm, rng);
  } else {
    compressor.init(rng);
  }
  aggregator.init(rng);
  alignment.init(rng);
  has_memory = true;
}

ParamList CmtModel::memory_params() {
  ParamList out;
  if (!has_memory) return out;
  auto c = compressor.params();
  out.insert(out.end(), c.begin(), c.end());
  auto a = aggregator.params();
  out.insert(out.end(), a.begin(), a.end());
  auto b = alignment.params();
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

ParamList CmtModel::all_params() {
  ParamList out = base_params();
  auto m = memory_params();
  out.insert(out.end(), m.begin(), m.end());
  return out;
}

std::string CmtModel::serialize() {
  io::Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kVersion);
  const std::string text = model_config_text(cfg);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text.data(), text.size());
  w.put<std::uint8_t>(has_memory ? 1 : 0);
  const ParamList params = all_params();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p->name.size()));
    w.put_bytes(p->name.data(), p->name.size());
    w.put<std::uint64_t>(p->value.size());
    w.put_bytes(p->value.data(), p->value.size() * sizeof(float));
  }
  return w.bytes();
}

CmtModel CmtModel::deserialize(const std::string& bytes) {
  io::Reader r(bytes, "checkpoint");
  char magic[4];
  r.get_bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("magic", "checkpoint: bad magic (expected CMTW)");
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion) throw FormatError("version", "checkpoint: unsupported version " + std::to_string(version));
  const auto len = r.get<std::uint32_t>();
  if (len > r.remaining()) throw FormatError("truncated", "checkpoint: truncated config block");
  std::string text(len, '\0');
  r.get_bytes(text.data(), len);
  CmtModel model(model_config_from_text(text));
  const bool has_memory = r.get<std::uint8_t>() != 0;
  if (has_memory) {
    std::mt19937_64 unused(0);
    model.init_memory(unused, false);
  }
  const ParamList params = model.all_params();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size())
    throw FormatError("layout", "checkpoint: " + std::to_string(count) + " parameter blocks, config implies " +
                                    std::to_string(params.size()));
  for (Parameter* p : params) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len);
    if (name != p->name) throw FormatError("layout", "checkpoint: expected block " + p->name + ", found " + name);
    const auto n = r.get<std::uint64_t>();
    if (n != p->value.size())
      throw FormatError("layout", "checkpoint: block " + name + " has " + std::to_string(n) + " values, expected " +
                                      std::to_string(p->value.size()));
    r.get_bytes(p->value.data(), n * sizeof(float));
    p->zero_grad();
  }
  if (r.remaining() != 0) throw FormatError("trailing", "checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  return model;
}

void CmtModel::save(const std::string& path) { io::write_file(path, serialize()); }

CmtModel CmtModel::load(const std::string& path) { return deserialize(io::read_file(path)); }

std::string params_sha256(const ParamList& params) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("crypto", "sha256 init failed");
  for (const Parameter* p : params)
    EVP_DigestUpdate(ctx.get(), p->value.data(), p->value.size() * sizeof(float));
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static const char* kHex = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xF];
  }
  return hex;
}

}  // namespace cmt
