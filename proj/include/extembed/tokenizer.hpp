#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace extembed {

struct TokenSequence {
  std::vector<std::uint32_t> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  TokenSequence slice(std::size_t begin, std::size_t end) const;
};

// Whitespace tokenizer over a hashed vocabulary. One word is one token, so
// token counts stay proportional to word counts.
class Tokenizer {
 public:
  static constexpr std::size_t kDefaultVocab = 30522;

  explicit Tokenizer(std::size_t vocab_size = kDefaultVocab);

  std::size_t vocab_size() const { return vocab_size_; }

  TokenSequence encode(std::string_view text) const;

  // Lowercased word with leading/trailing punctuation removed.
  static std::string normalize(std::string_view word);
  static std::vector<std::string_view> split_words(std::string_view text);
  static std::size_t count_words(std::string_view text);

 private:
  std::size_t vocab_size_;
};

}  // namespace extembed
