#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "extembed/encoder.hpp"
#include "extembed/trainer.hpp"

namespace extembed {

enum class TuneMode { PIAnchored, RPSuffix };

std::string_view to_string(TuneMode mode);
TuneMode parse_tune_mode(std::string_view name);

struct TuneConfig {
  TuneMode mode = TuneMode::PIAnchored;
  long original_context = 512;  // L_o
  long target_context = 4096;   // L_t
  double learning_rate = 5e-4;
  std::size_t batch_size = 512;
  std::size_t epochs = 3;
  std::size_t warmup_steps = 100;
  double temperature = 0.01;
  std::size_t negatives = 7;
  std::uint64_t seed = 42;
  std::size_t max_steps = 0;  // 0: run all epochs
  bool in_batch_negatives = false;

  void validate() const;
  long scale_factor() const;
};

// PI_ANCHORED freezes rows {i*s}; RP_SUFFIX freezes rows {0..L_o-1}.
// The mask covers L_o*s rows.
std::vector<bool> freeze_mask(TuneMode mode, long original_context, long target_context, long s);

// Copy of `base` with the extended table for `mode` installed and its
// frozen flags set. A model already carrying a matching table is copied as is.
Model install_tuning_table(const Model& base, const TuneConfig& config);

// Training-time position ids: queries use their inference mapping (anchor
// rows i*s under PI), documents start at the skipping bias u.
PositionMapper tuning_mapper(const TuneConfig& config);

struct TuneResult {
  Model model;
  TrainingLog log;
};

// Trains only the learnable rows of the extended table. Throws ConfigError for
// non-absolute models.
TuneResult tune(const Model& base, const std::vector<TrainingPair>& pairs, const TuneConfig& config);

// Rows with gradient norm below this fraction of the largest row are treated as zero.
inline constexpr double kGradNoiseFloor = 1e-8;

struct GradCheckResult {
  double max_relative_error = 0.0;  // over rows with a non-zero gradient
  double max_abs_error = 0.0;
  std::size_t rows_checked = 0;
};

// Zeroes the gradient rows of frozen position rows.
void mask_frozen_rows(Matrix& position_grad, const PositionEmbeddingMatrix& table);

// Central finite differences of the contrastive loss w.r.t. learnable position
// rows of a model with an installed tuning table. Relative error per row is
// |analytic - numeric| / max(|analytic|, |numeric|) in the L2 norm.
GradCheckResult grad_check(const Model& model, const TrainingPair& sample, const TuneConfig& config, long skip,
                           double eps = 1e-5);

}  // namespace extembed
