#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "extembed/encoder.hpp"
#include "extembed/synth_bench.hpp"
#include "extembed/tokenizer.hpp"

namespace extembed {

struct TrainingPair {
  TokenSequence query;
  TokenSequence positive;
  std::vector<TokenSequence> negatives;
};

// Tokenizes triples, truncating every sequence to max_len tokens.
std::vector<TrainingPair> tokenize_triples(const std::vector<TextTriple>& triples, const Tokenizer& tokenizer,
                                           std::size_t max_len);

// InfoNCE over cosine similarities of unit-norm embeddings. Throws ConfigError when tau <= 0.
double contrastive_loss(const EmbeddingVector& query, const EmbeddingVector& positive,
                        const std::vector<EmbeddingVector>& negatives, double tau);

struct ContrastiveGrad {
  double loss = 0.0;
  Vector d_query;
  Vector d_positive;
  std::vector<Vector> d_negatives;
};

ContrastiveGrad contrastive_loss_grad(const EmbeddingVector& query, const EmbeddingVector& positive,
                                      const std::vector<EmbeddingVector>& negatives, double tau);

enum class SequenceRole { Query, Document };

// Position ids for one training sequence. `skip` is the sampled skipping bias
// (0 when unused) and only applies to documents.
using PositionMapper = std::function<PositionAssignment(std::size_t length, SequenceRole role, long skip)>;

PositionMapper identity_mapper(PositionMode mode);

// Skipping bias u, uniform over {0, ..., target - original}.
long sample_skip_bias(long target_context, long original_context, Rng& rng);

struct TrainConfig {
  double learning_rate = 5e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  std::size_t warmup_steps = 100;
  std::size_t max_steps = 0;  // 0: no cap
  double temperature = 0.01;
  std::size_t negatives = 7;  // hard negatives used per example
  bool in_batch_negatives = false;
  std::uint64_t seed = 42;
  long skip_range = 0;  // documents draw u from {0..skip_range}
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// Which parameters the optimizer may change.
struct TrainableSet {
  bool all = true;                    // every tensor
  bool token_embedding = true;        // with all: also update the token table
  std::vector<bool> position_rows;    // when !all: learnable rows of the position table
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainingLog {
  std::vector<StepLog> steps;
  bool diverged = false;
  std::string message;
};

// Momentum-free adaptive optimizer (second-moment scaling, bias corrected)
// with linear warmup to the base learning rate.
class AdaptiveOptimizer {
 public:
  AdaptiveOptimizer(const Weights& shape, double lr, std::size_t warmup, double beta2, double eps);
  // Returns the learning rate used for this step.
  double step(Weights& weights, const Weights& grads, const TrainableSet& trainable);

 private:
  Weights second_moment_;
  double lr_, beta2_, eps_;
  std::size_t warmup_;
  std::size_t t_ = 0;
};

struct BatchResult {
  double loss = 0.0;
  Weights grads;
};

// Mean contrastive loss and its gradient over a batch; each distinct
// (sequence, positions) pair is encoded and backpropagated once.
BatchResult batch_loss_and_grad(const Model& model, const std::vector<const TrainingPair*>& batch,
                                const std::vector<long>& skips, const PositionMapper& mapper, const TrainConfig& config);

// Loss only (no gradient) for the same batch definition.
double batch_loss(const Model& model, const std::vector<const TrainingPair*>& batch, const std::vector<long>& skips,
                  const PositionMapper& mapper, const TrainConfig& config);

// Runs the training loop in place. On a non-finite loss or gradient the
// weights of the last good step are restored and the log marked diverged.
TrainingLog train_contrastive(Model& model, const std::vector<TrainingPair>& pairs, const TrainConfig& config,
                              const TrainableSet& trainable, const PositionMapper& mapper);

}  // namespace extembed
