#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace extembed {

enum class TaskKind { Passkey, Needle };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

struct Query {
  std::string id;
  std::string text;
  bool operator==(const Query&) const = default;
};

struct Document {
  std::string id;
  std::string title;
  std::string text;
  bool operator==(const Document&) const = default;
};

// query id -> (doc id -> graded relevance)
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct RetrievalTask {
  std::string name;
  std::optional<TaskKind> kind;  // set for synthetic buckets
  long bucket_length = 0;        // tokens, synthetic only
  std::vector<Query> queries;
  std::vector<Document> documents;
  Qrels qrels;

  // Throws DataError listing dangling or missing judgements.
  void validate() const;
  bool operator==(const RetrievalTask&) const = default;
};

}  // namespace extembed
