#include "extembed/chunking.hpp"

#include <cmath>

#include "extembed/errors.hpp"

namespace extembed {

ChunkPlan plan_chunks(std::size_t input_len, std::size_t original_context) {
  if (original_context == 0) throw ConfigError("L_o must be at least 1");
  if (input_len == 0) return {};
  if (input_len <= original_context) return {Chunk{0, input_len}};
  const std::size_t count = (input_len + original_context - 1) / original_context;
  ChunkPlan plan;
  plan.reserve(count);
  for (std::size_t c = 0; c + 1 < count; ++c) {
    plan.push_back(Chunk{c * original_context, (c + 1) * original_context});
  }
  plan.push_back(Chunk{input_len - original_context, input_len});
  return plan;
}

EmbeddingVector pcw_encode(const Model& model, const TokenSequence& tokens, std::size_t original_context,
                           const PositionEmbeddingMatrix* table) {
  if (tokens.empty()) throw EmptyInputError("cannot encode an empty token sequence");
  const auto plan = plan_chunks(tokens.size(), original_context);
  const PositionSource source{table, nullptr};
  if (plan.size() == 1) {
    return pool_and_normalize(
        forward(model, tokens, PositionAssignment::identity(model.config.position_mode, tokens.size()), 1.0, source));
  }
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(model.config.hidden_size));
  for (const auto& chunk : plan) {
    const auto piece = tokens.slice(chunk.start, chunk.end);
    const auto hidden =
        forward(model, piece, PositionAssignment::identity(model.config.position_mode, piece.size()), 1.0, source);
    sum += pool_and_normalize(hidden).values;
  }
  sum /= static_cast<double>(plan.size());
  const double norm = sum.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("PCW average has zero or non-finite norm");
  return EmbeddingVector{sum / norm};
}

}  // namespace extembed
