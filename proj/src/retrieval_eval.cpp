#include "extembed/retrieval_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <numeric>

#include "extembed/errors.hpp"

namespace extembed {

using nlohmann::json;

EmbeddingIndex::EmbeddingIndex(std::vector<std::string> ids, Matrix embeddings)
    : ids_(std::move(ids)), embeddings_(std::move(embeddings)) {
  if (static_cast<Eigen::Index>(ids_.size()) != embeddings_.rows()) {
    throw DimensionError("index has " + std::to_string(ids_.size()) + " ids but " +
                         std::to_string(embeddings_.rows()) + " rows");
  }
  for (Eigen::Index r = 0; r < embeddings_.rows(); ++r) {
    const double n = embeddings_.row(r).norm();
    if (std::abs(n - 1.0) > 1e-6) {
      throw DimensionError("index row for '" + ids_[static_cast<std::size_t>(r)] + "' has norm " + std::to_string(n));
    }
  }
}

std::vector<ScoredId> EmbeddingIndex::search_scored(const EmbeddingVector& query, std::size_t k) const {
  if (ids_.empty()) throw EvaluationError("search on an empty index");
  if (k < 1) throw ConfigError("k must be at least 1");
  if (static_cast<Eigen::Index>(query.size()) != embeddings_.cols()) {
    throw DimensionError("query dimension " + std::to_string(query.size()) + " != index dimension " +
                         std::to_string(embeddings_.cols()));
  }
  const Vector scores = embeddings_ * query.values;
  std::vector<std::size_t> order(ids_.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double sa = scores[static_cast<Eigen::Index>(a)];
                      const double sb = scores[static_cast<Eigen::Index>(b)];
                      if (sa != sb) return sa > sb;
                      return ids_[a] < ids_[b];
                    });
  std::vector<ScoredId> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({ids_[order[i]], scores[static_cast<Eigen::Index>(order[i])]});
  return out;
}

std::vector<std::string> EmbeddingIndex::search(const EmbeddingVector& query, std::size_t k) const {
  std::vector<std::string> out;
  for (auto& s : search_scored(query, k)) out.push_back(std::move(s.id));
  return out;
}

double acc_at_1(const Rankings& rankings, const Qrels& qrels) {
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& [qid, ranked] : rankings) {
    const auto it = qrels.find(qid);
    if (it == qrels.end()) throw EvaluationError("no relevance judgements for query '" + qid + "'");
    if (ranked.empty()) continue;
    const auto rel = it->second.find(ranked.front());
    if (rel != it->second.end() && rel->second > 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

double dcg_at_k(const std::vector<int>& gains_in_rank_order, std::size_t k) {
  double dcg = 0.0;
  const std::size_t n = std::min(k, gains_in_rank_order.size());
  for (std::size_t i = 0; i < n; ++i) {
    const int rel = gains_in_rank_order[i];
    if (rel <= 0) continue;
    dcg += (std::exp2(static_cast<double>(rel)) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg;
}

NdcgResult ndcg_at_10(const Rankings& rankings, const Qrels& qrels) {
  constexpr std::size_t k = 10;
  NdcgResult result;
  double total = 0.0;
  for (const auto& [qid, ranked] : rankings) {
    const auto it = qrels.find(qid);
    std::vector<int> ideal;
    if (it != qrels.end()) {
      for (const auto& [did, rel] : it->second) {
        if (rel > 0) ideal.push_back(rel);
      }
    }
    if (ideal.empty()) {
      ++result.excluded;
      continue;
    }
    std::sort(ideal.rbegin(), ideal.rend());
    std::vector<int> got;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
      const auto rel = it->second.find(ranked[i]);
      got.push_back(rel == it->second.end() ? 0 : rel->second);
    }
    total += dcg_at_k(got, k) / dcg_at_k(ideal, k);
    ++result.scored;
  }
  if (result.scored) result.score = total / static_cast<double>(result.scored);
  return result;
}

std::string document_text(const Document& doc) {
  if (doc.title.empty()) return doc.text;
  return doc.title + " " + doc.text;
}

ModelEmbedder::ModelEmbedder(const Model& model, ExtensionSpec spec, bool truncate)
    : encoder_(model, std::move(spec)), tokenizer_(model.config.vocab_size), truncate_(truncate) {}

EmbeddingVector ModelEmbedder::embed_text(const std::string& text) const {
  TokenSequence tokens = tokenizer_.encode(text);
  const auto limit = static_cast<std::size_t>(encoder_.spec().max_input_length());
  if (truncate_ && tokens.size() > limit) tokens = tokens.slice(0, limit);
  return encoder_.encode(tokens);
}

EmbeddingVector ModelEmbedder::embed_query(const Query& query) const { return embed_text(query.text); }

EmbeddingVector ModelEmbedder::embed_document(const Document& doc) const { return embed_text(document_text(doc)); }

json ModelEmbedder::describe() const {
  json j = spec_to_json(encoder_.spec());
  j["truncate"] = truncate_;
  j["position_mode"] = std::string(to_string(encoder_.model().config.position_mode));
  return j;
}

json spec_to_json(const ExtensionSpec& spec) {
  json j{{"strategy", std::string(to_string(spec.strategy))},
         {"original_context", spec.original_context},
         {"target_context", spec.target_context},
         {"scale_factor", spec.scale_factor()},
         {"attention_scaling", spec.attention_scaling},
         {"notes", spec.notes}};
  j["ntk_lambda"] = spec.ntk_lambda ? json(*spec.ntk_lambda) : json(nullptr);
  j["group"] = spec.group ? json(*spec.group) : json(nullptr);
  j["window"] = spec.window ? json(*spec.window) : json(nullptr);
  return j;
}

TaskResult evaluate_task(const Embedder& embedder, const RetrievalTask& task, std::size_t max_recorded_errors) {
  TaskResult r;
  r.name = task.name;
  r.kind = task.kind;
  r.length = task.bucket_length;
  r.metric = task.kind ? "acc@1" : "ndcg@10";
  r.queries = task.queries.size();
  r.documents = task.documents.size();

  std::vector<std::string> ids;
  std::vector<Vector> rows;
  for (const auto& doc : task.documents) {
    try {
      rows.push_back(embedder.embed_document(doc).values);
      ids.push_back(doc.id);
    } catch (const LengthError& e) {
      ++r.unretrievable;
      if (r.errors.size() < max_recorded_errors) r.errors.push_back(doc.id + ": " + e.what());
    }
  }

  Rankings rankings;
  if (!rows.empty()) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    const EmbeddingIndex index(std::move(ids), std::move(m));
    for (const auto& q : task.queries) rankings[q.id] = index.search(embedder.embed_query(q), 10);
  } else {
    for (const auto& q : task.queries) rankings[q.id] = {};
  }

  if (task.kind) {
    r.score = acc_at_1(rankings, task.qrels);
  } else {
    const auto n = ndcg_at_10(rankings, task.qrels);
    r.score = n.score;
    r.excluded_queries = n.excluded;
  }
  return r;
}

void compute_columns(EvalReport& report) {
  report.columns.clear();
  std::map<TaskKind, std::pair<double, std::size_t>> synthetic;
  for (const auto& t : report.tasks) {
    if (t.kind) {
      auto& acc = synthetic[*t.kind];
      acc.first += t.score;
      ++acc.second;
    }
  }
  for (TaskKind kind : {TaskKind::Passkey, TaskKind::Needle}) {
    const auto it = synthetic.find(kind);
    if (it == synthetic.end()) continue;
    std::string label = to_string(kind);
    label[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(label[0])));
    report.columns.emplace_back(label, it->second.first / static_cast<double>(it->second.second));
  }
  for (const auto& t : report.tasks) {
    if (!t.kind) report.columns.emplace_back(t.name, t.score);
  }
  double sum = 0.0;
  for (const auto& [name, score] : report.columns) sum += score;
  report.average = report.columns.empty() ? 0.0 : sum / static_cast<double>(report.columns.size());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

EvalReport run_benchmark(const Embedder& embedder, const std::vector<RetrievalTask>& tasks,
                         const BenchmarkOptions& options) {
  EvalReport report;
  for (const auto& t : tasks) report.tasks.push_back(evaluate_task(embedder, t, options.max_recorded_errors));
  compute_columns(report);
  report.spec = embedder.describe();
  report.config = options.config;
  report.seed = options.seed;
  report.timestamp = utc_timestamp();
  report.version = EXTEMBED_VERSION;
  return report;
}

json EvalReport::to_json() const {
  json synthetic = json::array();
  json real = json::array();
  for (const auto& t : tasks) {
    json e{{"name", t.name},
           {"metric", t.metric},
           {"score", t.score},
           {"queries", t.queries},
           {"documents", t.documents},
           {"unretrievable_documents", t.unretrievable},
           {"errors", t.errors}};
    if (t.kind) {
      e["kind"] = to_string(*t.kind);
      e["length"] = t.length;
      synthetic.push_back(std::move(e));
    } else {
      e["excluded_queries"] = t.excluded_queries;
      real.push_back(std::move(e));
    }
  }
  json cols = json::array();
  for (const auto& [name, score] : columns) cols.push_back({{"name", name}, {"score", score}});
  return json{{"version", version}, {"timestamp", timestamp}, {"seed", seed},  {"spec", spec},
              {"config", config},   {"synthetic", synthetic}, {"real", real}, {"columns", cols},
              {"average", average}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  try {
    r.version = j.value("version", "");
    r.timestamp = j.value("timestamp", "");
    r.seed = j.value("seed", std::uint64_t{42});
    r.spec = j.value("spec", json::object());
    r.config = j.value("config", json::object());
    for (const char* group : {"synthetic", "real"}) {
      for (const auto& e : j.value(group, json::array())) {
        TaskResult t;
        t.name = e.at("name").get<std::string>();
        t.metric = e.at("metric").get<std::string>();
        t.score = e.at("score").get<double>();
        t.queries = e.value("queries", std::size_t{0});
        t.documents = e.value("documents", std::size_t{0});
        t.unretrievable = e.value("unretrievable_documents", std::size_t{0});
        t.excluded_queries = e.value("excluded_queries", std::size_t{0});
        t.errors = e.value("errors", std::vector<std::string>{});
        if (e.contains("kind")) t.kind = parse_task_kind(e["kind"].get<std::string>());
        t.length = e.value("length", 0L);
        r.tasks.push_back(std::move(t));
      }
    }
    for (const auto& c : j.value("columns", json::array())) {
      r.columns.emplace_back(c.at("name").get<std::string>(), c.at("score").get<double>());
    }
    r.average = j.at("average").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string EvalReport::summary_table() const {
  std::string out;
  char buf[64];
  std::string header, rule, row;
  for (const auto& [name, score] : columns) {
    std::snprintf(buf, sizeof buf, "%10.10s ", name.c_str());
    header += buf;
    std::snprintf(buf, sizeof buf, "%10.1f ", 100.0 * score);
    row += buf;
  }
  std::snprintf(buf, sizeof buf, "%10s", "Avg.");
  header += buf;
  std::snprintf(buf, sizeof buf, "%10.1f", 100.0 * average);
  row += buf;
  rule.assign(header.size(), '-');
  out += header + "\n" + rule + "\n" + row + "\n";

  if (!tasks.empty()) {
    out += "\n";
    for (const auto& t : tasks) {
      std::snprintf(buf, sizeof buf, "%-28.28s %-8s %6.1f", t.name.c_str(), t.metric.c_str(), 100.0 * t.score);
      out += buf;
      if (t.unretrievable) out += "  (" + std::to_string(t.unretrievable) + " docs unretrievable)";
      out += "\n";
    }
  }
  return out;
}

}  // namespace extembed
