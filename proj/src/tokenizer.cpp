#include "cmt/tokenizer.hpp"

#include "cmt/corpus.hpp"
#include "cmt/error.hpp"

namespace cmt {
namespace {

bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

}  // namespace

Tokenizer::Tokenizer() : Tokenizer(synthetic_vocabulary()) {}

Tokenizer::Tokenizer(const std::vector<std::string>& words) {
  symbols_ = {"<pad>", "<bos>", "<eos>", "<sep>"};
  digit0_ = static_cast<int>(symbols_.size());
  for (char c = '0'; c <= '9'; ++c) symbols_.emplace_back(1, c);
  nibble0_ = static_cast<int>(symbols_.size());
  static const char* kHex = "0123456789abcdef";
  for (int i = 0; i < 16; ++i) symbols_.push_back(std::string("<0x") + kHex[i] + ">");
  for (const auto& w : words) {
    if (w.empty() || w.find(' ') != std::string::npos || all_digits(w))
      throw InvalidArgument("tokenizer word must be non-empty, space-free and non-numeric: '" + w + "'");
    if (word_ids_.count(w)) continue;
    word_ids_.emplace(w, static_cast<int>(symbols_.size()));
    symbols_.push_back(w);
    words_.push_back(w);
  }
}

int Tokenizer::word_id(const std::string& w) const {
  auto it = word_ids_.find(w);
  return it == word_ids_.end() ? -1 : it->second;
}

Tokenizer::Kind Tokenizer::kind(int id) const {
  if (id < digit0_) return Kind::Special;
  if (id < nibble0_) return Kind::Digit;
  if (id < nibble0_ + 16) return Kind::Nibble;
  return Kind::Word;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  // Kind of the last emitted token, or Special when nothing was emitted yet.
  Kind prev = Kind::Special;
  auto emit_bytes = [&](std::string_view bytes) {
    for (unsigned char b : bytes) {
      out.push_back(nibble0_ + (b >> 4));
      out.push_back(nibble0_ + (b & 0xF));
      prev = Kind::Nibble;
    }
  };

  std::size_t start = 0;
  for (std::size_t part_index = 0;; ++part_index) {
    const std::size_t end = text.find(' ', start);
    const std::string_view part = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    const bool digits = all_digits(part);
    const int wid = digits ? -1 : word_id(std::string(part));
    const bool word_form = digits || wid >= 0;
    if (word_form) {
      // Implicit space before this token, per the rendering rules.
      const bool implicit_space =
          (prev == Kind::Word || prev == Kind::Digit) && !(digits && prev == Kind::Digit);
      if (part_index > 0 && !implicit_space) emit_bytes(" ");
      if (digits) {
        for (char c : part) out.push_back(digit0_ + (c - '0'));
        prev = Kind::Digit;
      } else {
        out.push_back(wid);
        prev = Kind::Word;
      }
    } else {
      if (part_index > 0) emit_bytes(" ");
      emit_bytes(part);
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  Kind prev = Kind::Special;
  int pending_nibble = -1;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw InvalidArgument("token id out of range: " + std::to_string(id));
    const Kind k = kind(id);
    if (k != Kind::Nibble && pending_nibble >= 0) pending_nibble = -1;  // dangling half byte is dropped
    switch (k) {
      case Kind::Special:
        continue;  // prev unchanged
      case Kind::Word:
        if (prev == Kind::Word || prev == Kind::Digit) out += ' ';
        out += symbols_[id];
        break;
      case Kind::Digit:
        if (prev == Kind::Word) out += ' ';
        out += static_cast<char>('0' + (id - digit0_));
        break;
      case Kind::Nibble:
        if (pending_nibble < 0) {
          pending_nibble = id - nibble0_;
          continue;
        }
        out += static_cast<char>((pending_nibble << 4) | (id - nibble0_));
        pending_nibble = -1;
        break;
    }
    prev = k;
  }
  return out;
}

}  // namespace cmt
