#include "extembed/tokenizer.hpp"

#include <cctype>

#include "extembed/errors.hpp"

namespace extembed {

TokenSequence TokenSequence::slice(std::size_t begin, std::size_t end) const {
  TokenSequence out;
  out.ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

Tokenizer::Tokenizer(std::size_t vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size == 0) throw ConfigError("vocabulary size must be positive");
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || u >= 0x80;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string Tokenizer::normalize(std::string_view word) {
  std::size_t b = 0;
  std::size_t e = word.size();
  while (b < e && !is_word_char(word[b])) ++b;
  while (e > b && !is_word_char(word[e - 1])) --e;
  // Pure punctuation keeps its raw form so it still hashes to something stable.
  if (b == e) return std::string(word);
  std::string out(word.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

std::size_t Tokenizer::count_words(std::string_view text) { return split_words(text).size(); }

TokenSequence Tokenizer::encode(std::string_view text) const {
  TokenSequence seq;
  for (const auto w : split_words(text)) {
    seq.ids.push_back(static_cast<std::uint32_t>(fnv1a(normalize(w)) % vocab_size_));
  }
  return seq;
}

}  // namespace extembed
