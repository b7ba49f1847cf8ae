#include "extembed/pose_tuner.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <utility>
#include <vector>

#include "extembed/errors.hpp"
#include "extembed/position_ext.hpp"

namespace extembed {

std::string_view to_string(TuneMode mode) { return mode == TuneMode::PIAnchored ? "PI_ANCHORED" : "RP_SUFFIX"; }

TuneMode parse_tune_mode(std::string_view name) {
  std::string upper(name);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (upper == "PI_ANCHORED" || upper == "PI") return TuneMode::PIAnchored;
  if (upper == "RP_SUFFIX" || upper == "RP") return TuneMode::RPSuffix;
  throw ConfigError("unknown tuning mode '" + std::string(name) + "' (expected PI_ANCHORED or RP_SUFFIX)");
}

void TuneConfig::validate() const {
  if (original_context < 1) throw ConfigError("L_o must be at least 1");
  if (target_context <= original_context) throw ConfigError("tuning requires L_t > L_o");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (negatives < 1 && !in_batch_negatives) throw ConfigError("at least one negative per example is required");
}

long TuneConfig::scale_factor() const {
  return std::max(1L, (target_context + original_context - 1) / original_context);
}

std::vector<bool> freeze_mask(TuneMode mode, long original_context, long /*target_context*/, long s) {
  const long rows = original_context * s;
  std::vector<bool> mask(static_cast<std::size_t>(rows), false);
  for (long r = 0; r < rows; ++r) {
    mask[static_cast<std::size_t>(r)] = mode == TuneMode::PIAnchored ? r % s == 0 : r < original_context;
  }
  return mask;
}

Model install_tuning_table(const Model& base, const TuneConfig& config) {
  config.validate();
  if (base.config.position_mode != PositionMode::Absolute) {
    throw ConfigError("further tuning requires absolute-position mode");
  }
  if (static_cast<long>(base.config.original_context) != config.original_context) {
    throw ConfigError("tune L_o=" + std::to_string(config.original_context) + " does not match the model's " +
                      std::to_string(base.config.original_context));
  }
  const long s = config.scale_factor();
  const auto want = config.mode == TuneMode::PIAnchored ? TableLayout::Interpolated : TableLayout::Recurrent;
  const auto& table = base.weights.positions;
  Model out = base;
  if (table.layout == want && table.scale == s) return out;
  if (table.layout != TableLayout::Original) {
    throw ConfigError("model already carries a tuned table of a different layout or scale");
  }
  out.weights.positions = config.mode == TuneMode::PIAnchored ? build_interpolated_matrix(table, s)
                                                              : build_recurrent_matrix(table, s);
  out.weights.positions.frozen = freeze_mask(config.mode, config.original_context, config.target_context, s);
  return out;
}

PositionMapper tuning_mapper(const TuneConfig& config) {
  const long s = config.scale_factor();
  const bool pi = config.mode == TuneMode::PIAnchored;
  return [s, pi](std::size_t length, SequenceRole role, long skip) {
    if (role == SequenceRole::Document) {
      return PositionAssignment::shifted(PositionMode::Absolute, length, static_cast<std::size_t>(skip));
    }
    PositionAssignment a = PositionAssignment::identity(PositionMode::Absolute, length);
    if (pi) {
      for (auto& r : a.rows) r *= static_cast<std::size_t>(s);
    }
    return a;
  };
}

namespace {

TrainConfig train_config(const TuneConfig& c) {
  TrainConfig t;
  t.learning_rate = c.learning_rate;
  t.batch_size = c.batch_size;
  t.epochs = c.epochs;
  t.warmup_steps = c.warmup_steps;
  t.max_steps = c.max_steps;
  t.temperature = c.temperature;
  t.negatives = c.negatives;
  t.in_batch_negatives = c.in_batch_negatives;
  t.seed = c.seed;
  t.skip_range = c.target_context - c.original_context;
  return t;
}

TrainableSet learnable_rows(const PositionEmbeddingMatrix& table) {
  TrainableSet t;
  t.all = false;
  t.position_rows.resize(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) t.position_rows[r] = !table.frozen[r];
  return t;
}

void check_pairs(const std::vector<TrainingPair>& pairs, long original_context) {
  const auto limit = static_cast<std::size_t>(original_context);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    bool ok = p.query.size() <= limit && p.positive.size() <= limit;
    for (const auto& n : p.negatives) ok = ok && n.size() <= limit;
    if (!ok) throw ConfigError("training pair " + std::to_string(i) + " has a sequence longer than L_o");
  }
}

}  // namespace

TuneResult tune(const Model& base, const std::vector<TrainingPair>& pairs, const TuneConfig& config) {
  TuneResult r{install_tuning_table(base, config), {}};
  check_pairs(pairs, config.original_context);
  r.log = train_contrastive(r.model, pairs, train_config(config), learnable_rows(r.model.weights.positions),
                            tuning_mapper(config));
  return r;
}

void mask_frozen_rows(Matrix& position_grad, const PositionEmbeddingMatrix& table) {
  if (position_grad.rows() != static_cast<Eigen::Index>(table.rows())) {
    throw DimensionError("gradient rows do not match the position table");
  }
  for (std::size_t r = 0; r < table.rows(); ++r) {
    if (table.frozen[r]) position_grad.row(static_cast<Eigen::Index>(r)).setZero();
  }
}

GradCheckResult grad_check(const Model& model, const TrainingPair& sample, const TuneConfig& config, long skip,
                           double eps) {
  const auto& table = model.weights.positions;
  if (table.layout == TableLayout::Original) throw ConfigError("grad_check needs an installed tuning table");
  const TrainConfig tc = train_config(config);
  const auto mapper = tuning_mapper(config);
  const std::vector<const TrainingPair*> batch{&sample};
  const std::vector<long> skips{skip};

  BatchResult analytic = batch_loss_and_grad(model, batch, skips, mapper, tc);
  Matrix& g = analytic.grads.positions.values;
  mask_frozen_rows(g, table);
  GradCheckResult out;

  Model probe = model;
  Matrix& values = probe.weights.positions.values;
  std::vector<std::pair<Vector, Vector>> checked;
  double largest = 0.0;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    if (table.frozen[r]) continue;
    const Eigen::Index row = static_cast<Eigen::Index>(r);
    if (g.row(row).isZero(0.0)) continue;
    Vector numeric(values.cols());
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double keep = values(row, c);
      values(row, c) = keep + eps;
      const double up = batch_loss(probe, batch, skips, mapper, tc);
      values(row, c) = keep - eps;
      const double down = batch_loss(probe, batch, skips, mapper, tc);
      values(row, c) = keep;
      numeric[c] = (up - down) / (2.0 * eps);
    }
    const Vector a = g.row(row).transpose();
    largest = std::max({largest, a.norm(), numeric.norm()});
    out.max_abs_error = std::max(out.max_abs_error, (a - numeric).cwiseAbs().maxCoeff());
    checked.emplace_back(a, numeric);
  }
  // Rows whose gradient is rounding noise against the largest row (a saturated
  // softmax) have no meaningful relative error.
  const double floor = kGradNoiseFloor * largest;
  for (const auto& [a, numeric] : checked) {
    const double scale = std::max(a.norm(), numeric.norm());
    if (scale <= floor) continue;
    out.max_relative_error = std::max(out.max_relative_error, (a - numeric).norm() / scale);
    ++out.rows_checked;
  }
  return out;
}

}  // namespace extembed
