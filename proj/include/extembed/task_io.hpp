#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "extembed/synth_bench.hpp"
#include "extembed/task.hpp"

namespace extembed {

// On-disk task layout, one directory per task:
//   queries.jsonl  {"_id", "text"}
//   corpus.jsonl   {"_id", "title", "text"}
//   qrels.tsv      query-id <TAB> corpus-id <TAB> score, with a header row
//   task.json      optional metadata (name, kind, length) for synthetic buckets
void write_task(const RetrievalTask& task, const std::filesystem::path& dir);
RetrievalTask read_task(const std::filesystem::path& dir);

// Writes each task to out_dir/<task.name>/ and returns the directories.
std::vector<std::filesystem::path> write_tasks(const std::vector<RetrievalTask>& tasks,
                                               const std::filesystem::path& out_dir);

std::vector<Query> parse_queries(std::istream& in, const std::string& source = "queries");
std::vector<Document> parse_corpus(std::istream& in, const std::string& source = "corpus");
Qrels parse_qrels(std::istream& in, const std::string& source = "qrels");

struct TaskStats {
  std::size_t queries = 0;
  std::size_t documents = 0;
  double mean_query_words = 0.0;
  double mean_document_words = 0.0;
  std::size_t max_document_words = 0;
};

TaskStats task_stats(const RetrievalTask& task);
std::string format_stats(const std::string& name, const TaskStats& stats);

// Loads and validates a user-supplied task from its three files.
RetrievalTask ingest_real_task(const std::filesystem::path& queries_path, const std::filesystem::path& corpus_path,
                               const std::filesystem::path& qrels_path, const std::string& name = "");

// Training triples as JSONL: {"query", "positive", "negatives": [...]}.
void write_triples(const std::vector<TextTriple>& triples, const std::filesystem::path& path);
std::vector<TextTriple> read_triples(const std::filesystem::path& path);

}  // namespace extembed
