#pragma once

#include <vector>

#include "extembed/encoder.hpp"
#include "extembed/rng.hpp"

namespace extembed::testing {

inline Model tiny_model(PositionMode mode, std::size_t d = 16, std::size_t lo = 16, std::size_t vocab = 64,
                        std::uint64_t seed = 3, std::size_t layers = 2, std::size_t heads = 2) {
  ModelConfig c;
  c.hidden_size = d;
  c.n_layers = layers;
  c.n_heads = heads;
  c.vocab_size = vocab;
  c.original_context = lo;
  c.position_mode = mode;
  c.init_seed = seed;
  return init_model(c);
}

inline TokenSequence random_tokens(std::size_t n, std::size_t vocab, Rng& rng) {
  TokenSequence t;
  for (std::size_t i = 0; i < n; ++i) t.ids.push_back(static_cast<std::uint32_t>(rng.below(vocab)));
  return t;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

inline bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace extembed::testing
