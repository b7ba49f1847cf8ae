#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "extembed/encoder.hpp"
#include "extembed/rope.hpp"

namespace extembed {

enum class Strategy { None, PCW, GP, RP, PI, NTK, SE, TunedPI, TunedRP };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

// One extension strategy and its parameters. The scaling factor is always
// derived as ceil(L_t / L_o) and never stored.
struct ExtensionSpec {
  Strategy strategy = Strategy::None;
  long original_context = 512;  // L_o
  long target_context = 512;    // L_t
  std::optional<double> ntk_lambda;
  std::optional<long> group;   // SE g
  std::optional<long> window;  // SE w
  bool attention_scaling = true;
  std::vector<std::string> notes;  // warnings and resolved defaults

  long scale_factor() const;
  // Longest input accepted by encode(): L_o for NONE, L_t otherwise.
  long max_input_length() const;
};

// Fills missing NTK/SE parameters from the standard tables and validates.
// Throws ConfigError on infeasible settings; soft violations become notes.
ExtensionSpec resolve_spec(ExtensionSpec spec);

long grouped_positions(long pid, long s);
long recurrent_positions(long pid, long original_context);

// E_t with L_o*s rows: anchors E_t[i*s] = E_o[i] (frozen), linear interpolation
// between anchors, and the tail past the last anchor repeating it.
PositionEmbeddingMatrix build_interpolated_matrix(const PositionEmbeddingMatrix& original, long s);

// E_t with L_o*s rows where row r copies E_o[r mod L_o]; the first L_o rows are frozen.
PositionEmbeddingMatrix build_recurrent_matrix(const PositionEmbeddingMatrix& original, long s);

// Row of E_t used for a token under PI. Inputs no longer than L_o reuse the
// original anchors (token_index * s); longer inputs use E_t densely.
long pi_position_map(long token_index, long input_len, const ExtensionSpec& spec);

RoPEFrequencies ntk_frequencies(std::size_t dim, double base, double lambda);
double resolve_ntk_lambda(long s);

long self_extend_relpos(long i, long j, long group, long window);
// Largest |relative position| self-extend produces for inputs up to L_t tokens.
long self_extend_max_relpos(long target_context, long group, long window);
std::pair<long, long> resolve_se_params(long original_context, long target_context);

double attention_scale(long n, long original_context);

// Everything needed to run the encoder for one input under a strategy
// (other than PCW, which is handled by chunking).
struct PositionPlan {
  PositionAssignment assignment;
  double attn_scale = 1.0;
  bool use_extended_table = false;  // absolute PI: rows index E_t
  bool use_ntk = false;             // rotary NTK frequencies
};

PositionPlan plan_positions(const ExtensionSpec& spec, PositionMode mode, std::size_t input_len);

}  // namespace extembed
