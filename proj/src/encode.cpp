#include "extembed/encode.hpp"

#include <string>

#include "extembed/chunking.hpp"
#include "extembed/errors.hpp"

namespace extembed {

ExtendedEncoder::ExtendedEncoder(const Model& model, ExtensionSpec spec) : model_(&model), spec_(resolve_spec(std::move(spec))) {
  const auto& cfg = model.config;
  if (spec_.original_context != static_cast<long>(cfg.original_context)) {
    throw ConfigError("spec L_o=" + std::to_string(spec_.original_context) + " does not match the model's " +
                      std::to_string(cfg.original_context));
  }
  const bool absolute = cfg.position_mode == PositionMode::Absolute;
  const auto& table = model.weights.positions;

  switch (spec_.strategy) {
    case Strategy::NTK:
    case Strategy::SE:
      if (absolute) throw ConfigError(std::string(to_string(spec_.strategy)) + " requires a rotary-position model");
      break;
    case Strategy::TunedPI:
    case Strategy::TunedRP: {
      if (!absolute) throw ConfigError("further tuning requires absolute-position mode");
      const auto want = spec_.strategy == Strategy::TunedPI ? TableLayout::Interpolated : TableLayout::Recurrent;
      if (table.layout != want) {
        throw ConfigError(std::string(to_string(spec_.strategy)) + " needs a model tuned with the matching table layout");
      }
      if (static_cast<long>(table.rows()) < spec_.target_context) {
        throw ConfigError("installed position table has " + std::to_string(table.rows()) + " rows, fewer than L_t=" +
                          std::to_string(spec_.target_context));
      }
      if (spec_.strategy == Strategy::TunedPI && table.scale != spec_.scale_factor()) {
        throw ConfigError("tuned table was built for s=" + std::to_string(table.scale) + ", spec has s=" +
                          std::to_string(spec_.scale_factor()));
      }
      break;
    }
    default:
      break;
  }

  const bool tuned = spec_.strategy == Strategy::TunedPI || spec_.strategy == Strategy::TunedRP;
  if (absolute && !tuned && table.layout != TableLayout::Original) {
    original_ = table.original_rows(cfg.original_context);
  }
  if (absolute && spec_.strategy == Strategy::PI) {
    extended_ = build_interpolated_matrix(*base_table(), spec_.scale_factor());
  }
  if (!absolute && spec_.strategy == Strategy::NTK) {
    ntk_ = ntk_frequencies(cfg.head_dim(), cfg.rope_base, *spec_.ntk_lambda);
  }
}

const PositionEmbeddingMatrix* ExtendedEncoder::base_table() const {
  return original_ ? &*original_ : &model_->weights.positions;
}

EmbeddingVector ExtendedEncoder::encode(const TokenSequence& tokens) const {
  if (tokens.empty()) throw EmptyInputError("cannot encode an empty token sequence");
  if (static_cast<long>(tokens.size()) > spec_.max_input_length()) {
    throw LengthError("input of " + std::to_string(tokens.size()) + " tokens exceeds the " +
                      std::string(to_string(spec_.strategy)) + " limit of " + std::to_string(spec_.max_input_length()));
  }
  const bool absolute = model_->config.position_mode == PositionMode::Absolute;
  if (spec_.strategy == Strategy::PCW) {
    return pcw_encode(*model_, tokens, model_->config.original_context, absolute ? base_table() : nullptr);
  }
  const auto plan = plan_positions(spec_, model_->config.position_mode, tokens.size());
  PositionSource source;
  if (absolute) {
    const bool tuned = spec_.strategy == Strategy::TunedPI || spec_.strategy == Strategy::TunedRP;
    source.table = plan.use_extended_table ? &*extended_ : (tuned ? &model_->weights.positions : base_table());
  } else if (plan.use_ntk) {
    source.freqs = &*ntk_;
  }
  return pool_and_normalize(forward(*model_, tokens, plan.assignment, plan.attn_scale, source));
}

EmbeddingVector encode(const Model& model, const TokenSequence& tokens, const ExtensionSpec& spec) {
  return ExtendedEncoder(model, spec).encode(tokens);
}

}  // namespace extembed
