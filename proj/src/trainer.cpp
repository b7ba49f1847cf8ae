#include "extembed/trainer.hpp"

#include <cmath>
#include <limits>

#include "extembed/errors.hpp"

namespace extembed {

std::vector<TrainingPair> tokenize_triples(const std::vector<TextTriple>& triples, const Tokenizer& tokenizer,
                                           std::size_t max_len) {
  auto enc = [&](const std::string& text) {
    TokenSequence t = tokenizer.encode(text);
    if (t.size() > max_len) t = t.slice(0, max_len);
    return t;
  };
  std::vector<TrainingPair> out;
  out.reserve(triples.size());
  for (const auto& tr : triples) {
    TrainingPair p{enc(tr.query), enc(tr.positive), {}};
    for (const auto& n : tr.negatives) p.negatives.push_back(enc(n));
    out.push_back(std::move(p));
  }
  return out;
}

ContrastiveGrad contrastive_loss_grad(const EmbeddingVector& query, const EmbeddingVector& positive,
                                      const std::vector<EmbeddingVector>& negatives, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  const std::size_t n = negatives.size() + 1;
  std::vector<double> logits(n);
  logits[0] = query.dot(positive) / tau;
  for (std::size_t i = 0; i < negatives.size(); ++i) logits[i + 1] = query.dot(negatives[i]) / tau;
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l);
  // Sum over negatives relative to the max, so a confident positive keeps
  // full precision in both the loss and its coefficient.
  double rest = 0.0;
  for (std::size_t i = 1; i < n; ++i) rest += std::exp(logits[i] - mx);
  const double head = std::exp(logits[0] - mx);
  const double z = head + rest;

  ContrastiveGrad g;
  g.loss = logits[0] == mx ? std::log1p(rest) : mx + std::log(z) - logits[0];
  std::vector<double> coef(n);
  coef[0] = -rest / z;
  for (std::size_t i = 1; i < n; ++i) coef[i] = std::exp(logits[i] - mx) / z;

  g.d_query = coef[0] / tau * positive.values;
  g.d_positive = coef[0] / tau * query.values;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    g.d_query += coef[i + 1] / tau * negatives[i].values;
    g.d_negatives.push_back(coef[i + 1] / tau * query.values);
  }
  return g;
}

double contrastive_loss(const EmbeddingVector& query, const EmbeddingVector& positive,
                        const std::vector<EmbeddingVector>& negatives, double tau) {
  return contrastive_loss_grad(query, positive, negatives, tau).loss;
}

PositionMapper identity_mapper(PositionMode mode) {
  return [mode](std::size_t length, SequenceRole role, long skip) {
    if (role == SequenceRole::Document && skip > 0) {
      return PositionAssignment::shifted(mode, length, static_cast<std::size_t>(skip));
    }
    return PositionAssignment::identity(mode, length);
  };
}

long sample_skip_bias(long target_context, long original_context, Rng& rng) {
  if (target_context < original_context) throw ConfigError("L_t must be at least L_o");
  return static_cast<long>(rng.below(static_cast<std::uint64_t>(target_context - original_context) + 1));
}

void TrainConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (skip_range < 0) throw ConfigError("skip range must be non-negative");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in (0, 1)");
}

AdaptiveOptimizer::AdaptiveOptimizer(const Weights& shape, double lr, std::size_t warmup, double beta2, double eps)
    : second_moment_(shape.zeros_like()), lr_(lr), beta2_(beta2), eps_(eps), warmup_(warmup) {}

double AdaptiveOptimizer::step(Weights& weights, const Weights& grads, const TrainableSet& trainable) {
  ++t_;
  const double lr = warmup_ > 0 ? lr_ * std::min(1.0, static_cast<double>(t_) / static_cast<double>(warmup_)) : lr_;
  const double correction = 1.0 - std::pow(beta2_, static_cast<double>(t_));

  std::vector<Matrix*> w, v;
  std::vector<const Matrix*> g;
  weights.for_each_tensor([&](const std::string&, Matrix& m) { w.push_back(&m); });
  grads.for_each_tensor([&](const std::string&, const Matrix& m) { g.push_back(&m); });
  std::vector<std::string> names;
  second_moment_.for_each_tensor([&](const std::string& name, Matrix& m) {
    v.push_back(&m);
    names.push_back(name);
  });

  auto update_row = [&](Matrix& W, const Matrix& G, Matrix& V, Eigen::Index r) {
    V.row(r) = beta2_ * V.row(r).array() + (1.0 - beta2_) * G.row(r).array().square();
    W.row(r).array() -= lr * G.row(r).array() / ((V.row(r).array() / correction).sqrt() + eps_);
  };

  for (std::size_t i = 0; i < w.size(); ++i) {
    const bool is_position = names[i] == "position_embedding";
    if (!trainable.all && !is_position) continue;
    if (!trainable.token_embedding && names[i] == "token_embedding") continue;
    for (Eigen::Index r = 0; r < w[i]->rows(); ++r) {
      if (!trainable.all && !trainable.position_rows[static_cast<std::size_t>(r)]) continue;
      update_row(*w[i], *g[i], *v[i], r);
    }
  }
  return lr;
}

namespace {

struct EncodedItem {
  const TokenSequence* tokens;
  PositionAssignment positions;
  EncoderTape tape;
  Vector grad;
};

bool same_positions(const PositionAssignment& a, const PositionAssignment& b) {
  return a.rows == b.rows && a.phases == b.phases;
}

struct BatchGraph {
  std::vector<EncodedItem> items;
  struct Example {
    std::size_t query;
    std::vector<std::size_t> candidates;  // [positive, negatives...]
  };
  std::vector<Example> examples;
};

BatchGraph build_graph(const Model& model, const std::vector<const TrainingPair*>& batch,
                       const std::vector<long>& skips, const PositionMapper& mapper, const TrainConfig& config) {
  BatchGraph g;
  auto intern = [&](const TokenSequence& tokens, SequenceRole role, long skip) {
    PositionAssignment pos = mapper(tokens.size(), role, skip);
    for (std::size_t i = 0; i < g.items.size(); ++i) {
      if (g.items[i].tokens->ids == tokens.ids && same_positions(g.items[i].positions, pos)) return i;
    }
    EncoderTape tape = record_forward(model, tokens, pos, 1.0);
    g.items.push_back({&tokens, std::move(pos), std::move(tape), Vector::Zero(0)});
    return g.items.size() - 1;
  };

  std::vector<std::size_t> positives;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& pair = *batch[b];
    if (pair.negatives.empty() && !config.in_batch_negatives) throw ConfigError("training pair has no negatives");
    BatchGraph::Example ex;
    ex.query = intern(pair.query, SequenceRole::Query, 0);
    ex.candidates.push_back(intern(pair.positive, SequenceRole::Document, skips[b]));
    positives.push_back(ex.candidates.back());
    const std::size_t nneg = std::min(config.negatives, pair.negatives.size());
    for (std::size_t k = 0; k < nneg; ++k) ex.candidates.push_back(intern(pair.negatives[k], SequenceRole::Document, skips[b]));
    g.examples.push_back(std::move(ex));
  }
  if (config.in_batch_negatives) {
    for (std::size_t b = 0; b < g.examples.size(); ++b) {
      for (std::size_t o = 0; o < positives.size(); ++o) {
        if (o != b && positives[o] != positives[b]) g.examples[b].candidates.push_back(positives[o]);
      }
    }
  }
  return g;
}

double accumulate_losses(BatchGraph& g, double tau, bool want_grad) {
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(g.examples.size());
  for (auto& item : g.items) item.grad = Vector::Zero(item.tape.embedding.values.size());
  for (const auto& ex : g.examples) {
    const auto& q = g.items[ex.query].tape.embedding;
    const auto& p = g.items[ex.candidates[0]].tape.embedding;
    std::vector<EmbeddingVector> negs;
    for (std::size_t k = 1; k < ex.candidates.size(); ++k) negs.push_back(g.items[ex.candidates[k]].tape.embedding);
    const ContrastiveGrad cg = contrastive_loss_grad(q, p, negs, tau);
    total += cg.loss * inv;
    if (!want_grad) continue;
    g.items[ex.query].grad += inv * cg.d_query;
    g.items[ex.candidates[0]].grad += inv * cg.d_positive;
    for (std::size_t k = 1; k < ex.candidates.size(); ++k) g.items[ex.candidates[k]].grad += inv * cg.d_negatives[k - 1];
  }
  return total;
}

}  // namespace

BatchResult batch_loss_and_grad(const Model& model, const std::vector<const TrainingPair*>& batch,
                                const std::vector<long>& skips, const PositionMapper& mapper,
                                const TrainConfig& config) {
  BatchGraph g = build_graph(model, batch, skips, mapper, config);
  BatchResult r;
  r.loss = accumulate_losses(g, config.temperature, true);
  r.grads = model.weights.zeros_like();
  for (const auto& item : g.items) backpropagate(model, item.tape, item.grad, r.grads);
  return r;
}

double batch_loss(const Model& model, const std::vector<const TrainingPair*>& batch, const std::vector<long>& skips,
                  const PositionMapper& mapper, const TrainConfig& config) {
  BatchGraph g = build_graph(model, batch, skips, mapper, config);
  return accumulate_losses(g, config.temperature, false);
}

namespace {

bool all_finite(const Weights& w) {
  bool ok = true;
  w.for_each_tensor([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

}  // namespace

TrainingLog train_contrastive(Model& model, const std::vector<TrainingPair>& pairs, const TrainConfig& config,
                              const TrainableSet& trainable, const PositionMapper& mapper) {
  config.validate();
  if (!trainable.all && trainable.position_rows.size() != model.weights.positions.rows()) {
    throw ConfigError("trainable row mask does not match the position table");
  }
  TrainingLog log;
  if (pairs.empty() || config.epochs == 0) return log;

  Rng rng(config.seed);
  AdaptiveOptimizer opt(model.weights, config.learning_rate, config.warmup_steps, config.beta2, config.epsilon);
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps && step >= config.max_steps) return log;
      std::vector<const TrainingPair*> batch;
      std::vector<long> skips;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(&pairs[order[i]]);
        skips.push_back(config.skip_range > 0 ? sample_skip_bias(config.skip_range, 0, rng) : 0L);
      }
      BatchResult r;
      try {
        r = batch_loss_and_grad(model, batch, skips, mapper, config);
      } catch (const NumericError&) {
        r.loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(r.loss) || !all_finite(r.grads)) {
        log.diverged = true;
        log.message = "non-finite loss at step " + std::to_string(step + 1) + "; kept the weights of step " +
                      std::to_string(step);
        return log;
      }
      const Weights before = model.weights;
      const double lr = opt.step(model.weights, r.grads, trainable);
      if (!all_finite(model.weights)) {
        model.weights = before;
        log.diverged = true;
        log.message = "non-finite weights after step " + std::to_string(step + 1) + "; restored step " +
                      std::to_string(step);
        return log;
      }
      ++step;
      log.steps.push_back({step, epoch, r.loss, lr});
    }
  }
  return log;
}

}  // namespace extembed
