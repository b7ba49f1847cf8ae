#pragma once

#include <cstddef>
#include <vector>

#include "extembed/encoder.hpp"

namespace extembed {

struct Chunk {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const { return end - start; }
  bool operator==(const Chunk&) const = default;
};

using ChunkPlan = std::vector<Chunk>;

// Zero-overlap chunks of L_o tokens; the final chunk is pulled back so that it
// still holds L_o tokens, overlapping its predecessor when needed.
ChunkPlan plan_chunks(std::size_t input_len, std::size_t original_context);

// Encodes every chunk with the unextended model, averages the unit-norm chunk
// embeddings and re-normalises. `table` overrides the model's position table.
EmbeddingVector pcw_encode(const Model& model, const TokenSequence& tokens, std::size_t original_context,
                           const PositionEmbeddingMatrix* table = nullptr);

}  // namespace extembed
