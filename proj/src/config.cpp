#include "cmt/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <variant>
#include <vector>

#include "cmt/error.hpp"

namespace cmt {
namespace {

using FieldPtr = std::variant<int ModelConfig::*, bool ModelConfig::*, double ModelConfig::*, int TrainConfig::*,
                              bool TrainConfig::*, double TrainConfig::*, std::uint64_t TrainConfig::*>;

struct Field {
  const char* key;
  FieldPtr ptr;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      {"vocab_size", &ModelConfig::vocab_size},
      {"d_model", &ModelConfig::d_model},
      {"n_layers", &ModelConfig::n_layers},
      {"n_heads", &ModelConfig::n_heads},
      {"mlp_mult", &ModelConfig::mlp_mult},
      {"context", &ModelConfig::context},
      {"compressor_layers", &ModelConfig::compressor_layers},
      {"soft_tokens", &ModelConfig::soft_tokens},
      {"agg_blocks", &ModelConfig::agg_blocks},
      {"agg_heads", &ModelConfig::agg_heads},
      {"agg_ffn_mult", &ModelConfig::agg_ffn_mult},
      {"agg_offset", &ModelConfig::agg_offset},
      {"agg_rope", &ModelConfig::agg_rope},
      {"agg_global_positions", &ModelConfig::agg_global_positions},
      {"prefix_len", &ModelConfig::prefix_len},
      {"align_hidden_mult", &ModelConfig::align_hidden_mult},
      {"rope_base", &ModelConfig::rope_base},
      {"norm_eps", &ModelConfig::norm_eps},
      {"init_std", &ModelConfig::init_std},
      {"seed", &TrainConfig::seed},
      {"batch_size", &TrainConfig::batch_size},
      {"valid_batch_size", &TrainConfig::valid_batch_size},
      {"grad_accum", &TrainConfig::grad_accum},
      {"lr", &TrainConfig::lr},
      {"warmup_ratio", &TrainConfig::warmup_ratio},
      {"epochs", &TrainConfig::epochs},
      {"valid_interval", &TrainConfig::valid_interval},
      {"adam_beta1", &TrainConfig::adam_beta1},
      {"adam_beta2", &TrainConfig::adam_beta2},
      {"adam_eps", &TrainConfig::adam_eps},
      {"weight_decay", &TrainConfig::weight_decay},
      {"grad_clip", &TrainConfig::grad_clip},
      {"alpha", &TrainConfig::alpha},
      {"lambda_sm", &TrainConfig::lambda_sm},
      {"lambda_u", &TrainConfig::lambda_u},
      {"memory_aware", &TrainConfig::memory_aware},
      {"self_matching", &TrainConfig::self_matching},
      {"demote_distractors", &TrainConfig::demote_distractors},
      {"init_compressor_from_base", &TrainConfig::init_compressor_from_base},
      {"own_doc_epochs", &TrainConfig::own_doc_epochs},
      {"max_answer_tokens", &TrainConfig::max_answer_tokens},
      {"window", &TrainConfig::window},
      {"topk_filter", &TrainConfig::topk_filter},
      {"memory_aware_inference", &TrainConfig::memory_aware_inference},
      {"pretrain_steps", &TrainConfig::pretrain_steps},
      {"pretrain_batch", &TrainConfig::pretrain_batch},
      {"pretrain_lr", &TrainConfig::pretrain_lr},
      {"facts_per_doc", &TrainConfig::facts_per_doc},
      {"train_docs", &TrainConfig::train_docs},
      {"valid_docs", &TrainConfig::valid_docs},
      {"test_docs", &TrainConfig::test_docs},
  };
  return kFields;
}

bool is_model_field(const FieldPtr& p) {
  return std::holds_alternative<int ModelConfig::*>(p) || std::holds_alternative<bool ModelConfig::*>(p) ||
         std::holds_alternative<double ModelConfig::*>(p);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string format_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

template <class Visitor>
void visit_fields(bool model_only, Visitor&& f) {
  for (const auto& field : fields()) {
    if (model_only && !is_model_field(field.ptr)) continue;
    f(field);
  }
}

void set_field(ModelConfig& m, TrainConfig& t, const Field& field, const std::string& value) {
  const std::string key = field.key;
  std::visit(
      [&](auto ptr) {
        using P = decltype(ptr);
        if constexpr (std::is_same_v<P, int ModelConfig::*>) m.*ptr = parse_int<int>(key, value);
        else if constexpr (std::is_same_v<P, bool ModelConfig::*>) m.*ptr = parse_bool(key, value);
        else if constexpr (std::is_same_v<P, double ModelConfig::*>) m.*ptr = parse_double(key, value);
        else if constexpr (std::is_same_v<P, int TrainConfig::*>) t.*ptr = parse_int<int>(key, value);
        else if constexpr (std::is_same_v<P, bool TrainConfig::*>) t.*ptr = parse_bool(key, value);
        else if constexpr (std::is_same_v<P, double TrainConfig::*>) t.*ptr = parse_double(key, value);
        else t.*ptr = parse_int<std::uint64_t>(key, value);
      },
      field.ptr);
}

std::string get_field(const ModelConfig& m, const TrainConfig& t, const Field& field) {
  return std::visit(
      [&](auto ptr) -> std::string {
        using P = decltype(ptr);
        if constexpr (std::is_same_v<P, bool ModelConfig::*>) return m.*ptr ? "true" : "false";
        else if constexpr (std::is_same_v<P, bool TrainConfig::*>) return t.*ptr ? "true" : "false";
        else if constexpr (std::is_same_v<P, double ModelConfig::*>) return format_double(m.*ptr);
        else if constexpr (std::is_same_v<P, double TrainConfig::*>) return format_double(t.*ptr);
        else if constexpr (std::is_same_v<P, int ModelConfig::*>) return std::to_string(m.*ptr);
        else return std::to_string(t.*ptr);
      },
      field.ptr);
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

template <class Apply>
void parse_lines(const std::string& text, Apply&& apply) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(head_dim() % 2 == 0, "head dimension must be even for rotary embeddings");
  require(agg_heads > 0 && d_model % agg_heads == 0 && (d_model / agg_heads) % 2 == 0,
          "d_model / agg_heads must be a positive even integer");
  require(n_layers >= 1 && compressor_layers >= 1, "layer counts must be positive");
  require(soft_tokens >= 1, "soft_tokens must be positive");
  require(agg_blocks >= 1, "agg_blocks must be positive");
  require(prefix_len >= 0, "prefix_len must be non-negative");
  require(context > soft_tokens, "context must exceed soft_tokens");
  require(agg_offset >= 0, "agg_offset must be non-negative");
}

void Config::set(const std::string& key, const std::string& value) {
  set_field(model, train, find_field(key), value);
}

std::string Config::get(const std::string& key) const { return get_field(model, train, find_field(key)); }

std::string Config::to_text() const {
  std::string out;
  visit_fields(false, [&](const Field& f) { out += std::string(f.key) + "=" + get_field(model, train, f) + "\n"; });
  return out;
}

Config Config::from_text(const std::string& text) {
  Config c;
  parse_lines(text, [&](const std::string& k, const std::string& v) { c.set(k, v); });
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void Config::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path);
  out << to_text();
}

std::string model_config_text(const ModelConfig& m) {
  std::string out;
  TrainConfig unused;
  visit_fields(true, [&](const Field& f) { out += std::string(f.key) + "=" + get_field(m, unused, f) + "\n"; });
  return out;
}

ModelConfig model_config_from_text(const std::string& text) {
  ModelConfig m;
  TrainConfig unused;
  parse_lines(text, [&](const std::string& k, const std::string& v) {
    const Field& f = find_field(k);
    if (!is_model_field(f.ptr)) throw ConfigError("checkpoint config carries non-model key '" + k + "'");
    set_field(m, unused, f, v);
  });
  return m;
}

Config full_scale_preset() {
  Config c;
  c.model.soft_tokens = 24;
  c.model.agg_blocks = 4;
  c.train.batch_size = 8;
  c.train.valid_batch_size = 16;
  c.train.grad_accum = 4;
  c.train.lr = 1e-6;
  c.train.warmup_ratio = 0.01;
  c.train.epochs = 50;
  c.train.valid_interval = 250;
  c.train.alpha = 0.5;
  c.train.window = 8;
  c.train.own_doc_epochs = 0;
  return c;
}

}  // namespace cmt
