#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "extembed/encode.hpp"
#include "extembed/task.hpp"
#include "extembed/tokenizer.hpp"

namespace extembed {

struct ScoredId {
  std::string id;
  double score = 0.0;
};

// Immutable exact-search index over unit-norm document embeddings.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  // Rows must be unit norm within 1e-6; throws DimensionError otherwise.
  EmbeddingIndex(std::vector<std::string> ids, Matrix embeddings);

  // Top-k by descending dot product, ties by ascending id. k is clamped to size().
  std::vector<ScoredId> search_scored(const EmbeddingVector& query, std::size_t k) const;
  std::vector<std::string> search(const EmbeddingVector& query, std::size_t k) const;

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(embeddings_.cols()); }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
  Matrix embeddings_;
};

// query id -> ranked document ids
using Rankings = std::map<std::string, std::vector<std::string>>;

// Throws EvaluationError naming the first query without judgements.
double acc_at_1(const Rankings& rankings, const Qrels& qrels);

struct NdcgResult {
  double score = 0.0;               // mean over scored queries
  std::size_t scored = 0;
  std::size_t excluded = 0;         // queries with zero total relevance
};

// Gain 2^rel - 1, discount 1/log2(rank + 1), ranks from 1.
NdcgResult ndcg_at_10(const Rankings& rankings, const Qrels& qrels);
double dcg_at_k(const std::vector<int>& gains_in_rank_order, std::size_t k);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed_query(const Query& query) const = 0;
  virtual EmbeddingVector embed_document(const Document& doc) const = 0;
  virtual nlohmann::json describe() const { return nlohmann::json::object(); }
};

// Title and text are joined with a space when a title is present.
std::string document_text(const Document& doc);

class ModelEmbedder : public Embedder {
 public:
  // With truncate set, inputs are cut to the strategy's input limit instead of
  // raising LengthError.
  ModelEmbedder(const Model& model, ExtensionSpec spec, bool truncate = false);

  EmbeddingVector embed_query(const Query& query) const override;
  EmbeddingVector embed_document(const Document& doc) const override;
  EmbeddingVector embed_text(const std::string& text) const;
  nlohmann::json describe() const override;

  const ExtendedEncoder& encoder() const { return encoder_; }

 private:
  ExtendedEncoder encoder_;
  Tokenizer tokenizer_;
  bool truncate_;
};

struct TaskResult {
  std::string name;
  std::optional<TaskKind> kind;
  long length = 0;
  std::string metric;  // "acc@1" for synthetic buckets, "ndcg@10" otherwise
  double score = 0.0;
  std::size_t queries = 0;
  std::size_t documents = 0;
  std::size_t unretrievable = 0;  // documents that failed to encode
  std::size_t excluded_queries = 0;
  std::vector<std::string> errors;  // first few per-document errors
};

// Columns follow the usual layout: one per synthetic kind (mean over its
// buckets), one per real dataset, and their arithmetic mean.
struct EvalReport {
  std::vector<TaskResult> tasks;
  std::vector<std::pair<std::string, double>> columns;
  double average = 0.0;
  nlohmann::json spec = nlohmann::json::object();
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 42;
  std::string timestamp;
  std::string version;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  // Fixed-width summary, scores x100.
  std::string summary_table() const;
};

void compute_columns(EvalReport& report);

struct BenchmarkOptions {
  std::size_t max_recorded_errors = 5;
  std::uint64_t seed = 42;
  nlohmann::json config = nlohmann::json::object();
};

// Embeds each task's documents once, ranks every query, and aggregates.
// Documents that fail to encode (e.g. longer than the strategy allows) are
// recorded and left out of the index.
EvalReport run_benchmark(const Embedder& embedder, const std::vector<RetrievalTask>& tasks,
                         const BenchmarkOptions& options = {});

TaskResult evaluate_task(const Embedder& embedder, const RetrievalTask& task, std::size_t max_recorded_errors = 5);

std::string utc_timestamp();
nlohmann::json spec_to_json(const ExtensionSpec& spec);

}  // namespace extembed
