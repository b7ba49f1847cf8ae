#pragma once

#include <optional>

#include "extembed/encoder.hpp"
#include "extembed/position_ext.hpp"

namespace extembed {

// Binds a model to a resolved extension spec. Derived state (interpolated
// table, NTK frequencies, original rows of a tuned table) is built once, so one
// instance can encode a whole corpus. The model must outlive the encoder.
class ExtendedEncoder {
 public:
  ExtendedEncoder(const Model& model, ExtensionSpec spec);

  // Throws LengthError when the input exceeds spec().max_input_length().
  EmbeddingVector encode(const TokenSequence& tokens) const;

  const ExtensionSpec& spec() const { return spec_; }
  const Model& model() const { return *model_; }

 private:
  const PositionEmbeddingMatrix* base_table() const;

  const Model* model_;
  ExtensionSpec spec_;
  std::optional<PositionEmbeddingMatrix> original_;  // E_o recovered from a tuned table
  std::optional<PositionEmbeddingMatrix> extended_;  // E_t for untuned PI
  std::optional<RoPEFrequencies> ntk_;
};

EmbeddingVector encode(const Model& model, const TokenSequence& tokens, const ExtensionSpec& spec);

}  // namespace extembed
