#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "extembed/rope.hpp"
#include "extembed/tensor.hpp"
#include "extembed/tokenizer.hpp"

namespace extembed {

enum class PositionMode { Absolute, Rotary };

std::string_view to_string(PositionMode mode);
PositionMode parse_position_mode(std::string_view name);

// Architecture constants: pre-norm blocks, LayerNorm eps 1e-5, tanh-approximated
// GELU in the feed-forward layer, final LayerNorm before mean pooling.
struct ModelConfig {
  std::size_t hidden_size = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_multiplier = 4;
  std::size_t vocab_size = Tokenizer::kDefaultVocab;
  std::size_t original_context = 512;
  PositionMode position_mode = PositionMode::Absolute;
  std::uint64_t init_seed = 42;
  double rope_base = 10000.0;

  static constexpr double kLayerNormEps = 1e-5;
  static constexpr const char* kActivation = "gelu_tanh";

  // Throws ConfigError when the dimensions are inconsistent.
  void validate() const;
  std::size_t head_dim() const { return hidden_size / n_heads; }
  std::size_t ffn_size() const { return hidden_size * ffn_multiplier; }
};

// How an installed table relates to the original L_o rows.
enum class TableLayout {
  Original,      // E_o itself
  Interpolated,  // E_t[i*s] = E_o[i]
  Recurrent,     // E_t[i] = E_o[i] for i < L_o
};

// Position table with a per-row frozen flag. Holds E_o (L_o rows) for a base
// model or E_t after an extended table has been installed.
struct PositionEmbeddingMatrix {
  Matrix values;
  std::vector<bool> frozen;
  TableLayout layout = TableLayout::Original;
  long scale = 1;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t frozen_count() const;
  // Recovers E_o from an extended table.
  PositionEmbeddingMatrix original_rows(std::size_t original_context) const;
};

struct LayerWeights {
  Matrix attn_norm_gain, attn_norm_bias;  // 1 x d
  Matrix wq, wk, wv, wo;                  // d x d
  Matrix bq, bk, bv, bo;                  // 1 x d
  Matrix ffn_norm_gain, ffn_norm_bias;    // 1 x d
  Matrix w_in, b_in;                      // d x f, 1 x f
  Matrix w_out, b_out;                    // f x d, 1 x d
};

struct Weights {
  Matrix token_embedding;            // vocab x d
  PositionEmbeddingMatrix positions; // absolute mode only; empty for rotary
  std::vector<LayerWeights> layers;
  Matrix final_norm_gain, final_norm_bias;

  // Zero-filled weights with the same shapes (used as a gradient buffer).
  Weights zeros_like() const;

  void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

struct Model {
  ModelConfig config;
  Weights weights;
};

// Seeded uniform [-1/sqrt(d), 1/sqrt(d)] for every weight matrix and the
// position table. Norm gains start at 1, all biases at 0.
Model init_model(const ModelConfig& config);

// Checksum over every tensor (and the frozen flags).
std::uint64_t model_checksum(const Model& model);
// Checksum over everything except the position table.
std::uint64_t non_position_checksum(const Model& model);

struct SelfExtendWindow {
  long group = 1;
  long window = 0;
};

// Per-token effective positions. Absolute mode reads `rows` (indices into the
// active table); rotary mode reads `phases`. When `self_extend` is set, the
// rotary relative phase of a (query, key) pair is remapped from the integer
// difference of their phases.
struct PositionAssignment {
  std::vector<std::size_t> rows;
  std::vector<double> phases;
  std::optional<SelfExtendWindow> self_extend;

  static PositionAssignment identity(PositionMode mode, std::size_t length);
  static PositionAssignment shifted(PositionMode mode, std::size_t length, std::size_t offset);
  std::size_t size(PositionMode mode) const { return mode == PositionMode::Absolute ? rows.size() : phases.size(); }
};

// Overrides for the model's own position state; null means "use the model's".
struct PositionSource {
  const PositionEmbeddingMatrix* table = nullptr;
  const RoPEFrequencies* freqs = nullptr;
};

// Full bidirectional encoder. Returns per-token hidden states (after the final
// LayerNorm). Pre-softmax logits are multiplied by attn_scale.
Matrix forward(const Model& model, const TokenSequence& tokens, const PositionAssignment& positions,
               double attn_scale = 1.0, const PositionSource& source = {});

struct EmbeddingVector {
  Vector values;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  double dot(const EmbeddingVector& other) const { return values.dot(other.values); }
};

// Mean over rows whose mask entry is true, then L2 normalisation.
EmbeddingVector pool_and_normalize(const Matrix& hidden, const std::vector<bool>& mask);
EmbeddingVector pool_and_normalize(const Matrix& hidden);

// ---------------------------------------------------------------------------
// Training support: a recorded forward pass and its reverse-mode gradient.

struct NormCache {
  Matrix normalized;  // x_hat
  Vector inv_std;     // per row
};

struct LayerTape {
  Matrix input;
  NormCache norm1;
  Matrix normed1;
  Matrix q_rot, k_rot, v;     // L x d, rotated in rotary mode
  std::vector<Matrix> probs;  // per head, L x L
  Matrix context;             // L x d, heads concatenated
  Matrix resid1;
  NormCache norm2;
  Matrix normed2;
  Matrix ffn_pre;
  Matrix ffn_act;
};

struct EncoderTape {
  TokenSequence tokens;
  PositionAssignment positions;
  double attn_scale = 1.0;
  std::vector<LayerTape> layers;
  NormCache final_norm;
  Vector pooled;
  double pooled_norm = 0.0;
  EmbeddingVector embedding;
};

// Forward + mean pool + normalize, recording what backpropagate needs. Uses
// the model's own table and frequencies; self-extend remapping is not
// differentiable here and raises ConfigError.
EncoderTape record_forward(const Model& model, const TokenSequence& tokens, const PositionAssignment& positions,
                           double attn_scale = 1.0);

// Accumulates d(loss)/d(weights) into `grads` given d(loss)/d(embedding).
void backpropagate(const Model& model, const EncoderTape& tape, const Vector& d_embedding, Weights& grads);

}  // namespace extembed
