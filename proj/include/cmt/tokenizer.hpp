#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cmt {

// Word-level tokenizer over the closed synthetic vocabulary, with digit
// tokens for numbers and a hex-nibble byte fallback for everything else.
//
// Rendering rules used by detokenize (tokenize is their exact inverse):
//   * a word or digit token is preceded by a space when the previous token is
//     a word or digit token, except digit-after-digit which is glued;
//   * byte tokens come in nibble pairs and render their raw byte.
// Any text not expressible this way (extra spaces, unknown words,
// punctuation glued to words) goes through the byte fallback, so
// detokenize(tokenize(s)) == s for every string.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;

  // The synthetic-corpus vocabulary.
  Tokenizer();
  explicit Tokenizer(const std::vector<std::string>& words);

  std::vector<int> encode(std::string_view text) const;
  // Special tokens render as nothing.
  std::string decode(const std::vector<int>& ids) const;

  int vocab_size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(int id) const { return symbols_.at(id); }
  int word_id(const std::string& w) const;  // -1 when absent
  bool is_digit(int id) const { return id >= digit0_ && id < digit0_ + 10; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  enum class Kind { Special, Word, Digit, Nibble };
  Kind kind(int id) const;

  std::vector<std::string> symbols_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> word_ids_;
  int digit0_ = 0;
  int nibble0_ = 0;
};

}  // namespace cmt
