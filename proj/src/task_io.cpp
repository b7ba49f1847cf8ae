#include "extembed/task_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "extembed/errors.hpp"
#include "extembed/tokenizer.hpp"

namespace extembed {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::string where(const std::string& source, std::size_t line) { return source + ":" + std::to_string(line); }

json parse_line(const std::string& line, const std::string& source, std::size_t lineno) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw DataError(where(source, lineno) + ": expected a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw DataError(where(source, lineno) + ": malformed JSON: " + e.what());
  }
}

std::string string_field(const json& j, const char* key, const std::string& source, std::size_t lineno,
                         bool required = true) {
  const auto it = j.find(key);
  if (it == j.end()) {
    if (required) throw DataError(where(source, lineno) + ": missing field \"" + key + "\"");
    return "";
  }
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw DataError(where(source, lineno) + ": field \"" + key + "\" must be a string");
}

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    fn(line, lineno);
  }
}

}  // namespace

void RetrievalTask::validate() const {
  std::set<std::string> qids, dids;
  for (const auto& q : queries) {
    if (!qids.insert(q.id).second) throw DataError("task " + name + ": duplicate query id '" + q.id + "'");
  }
  for (const auto& d : documents) {
    if (!dids.insert(d.id).second) throw DataError("task " + name + ": duplicate document id '" + d.id + "'");
  }
  std::vector<std::string> problems;
  for (const auto& [qid, docs] : qrels) {
    if (!qids.count(qid)) problems.push_back("qrel query '" + qid + "' has no query");
    for (const auto& [did, rel] : docs) {
      if (!dids.count(did)) problems.push_back("qrel (" + qid + ", " + did + ") references a missing document");
    }
  }
  for (const auto& q : queries) {
    const auto it = qrels.find(q.id);
    bool any = false;
    if (it != qrels.end()) {
      for (const auto& [did, rel] : it->second) any = any || rel > 0;
    }
    if (!any) problems.push_back("query '" + q.id + "' has no relevant document");
  }
  if (!problems.empty()) {
    std::string msg = "task " + name + " failed validation (" + std::to_string(problems.size()) + " problems):";
    const std::size_t shown = std::min<std::size_t>(problems.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) msg += "\n  " + problems[i];
    if (shown < problems.size()) msg += "\n  ...";
    throw DataError(msg);
  }
}

std::vector<Query> parse_queries(std::istream& in, const std::string& source) {
  std::vector<Query> out;
  for_each_line(in, [&](const std::string& line, std::size_t n) {
    const json j = parse_line(line, source, n);
    out.push_back({string_field(j, "_id", source, n), string_field(j, "text", source, n)});
  });
  return out;
}

std::vector<Document> parse_corpus(std::istream& in, const std::string& source) {
  std::vector<Document> out;
  for_each_line(in, [&](const std::string& line, std::size_t n) {
    const json j = parse_line(line, source, n);
    out.push_back({string_field(j, "_id", source, n), string_field(j, "title", source, n, false),
                   string_field(j, "text", source, n)});
  });
  return out;
}

Qrels parse_qrels(std::istream& in, const std::string& source) {
  Qrels out;
  bool first = true;
  for_each_line(in, [&](const std::string& line, std::size_t n) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (first) {
      first = false;
      if (!cols.empty() && cols[0] == "query-id") return;
    }
    if (cols.size() != 3) {
      throw DataError(where(source, n) + ": expected 3 tab-separated columns, found " + std::to_string(cols.size()));
    }
    int score = 0;
    try {
      std::size_t used = 0;
      score = std::stoi(cols[2], &used);
      if (used != cols[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(where(source, n) + ": score '" + cols[2] + "' is not an integer");
    }
    out[cols[0]][cols[1]] = score;
  });
  return out;
}

void write_task(const RetrievalTask& task, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());

  {
    auto out = open_out(dir / "queries.jsonl");
    for (const auto& q : task.queries) out << json{{"_id", q.id}, {"text", q.text}}.dump() << '\n';
  }
  {
    auto out = open_out(dir / "corpus.jsonl");
    for (const auto& d : task.documents) {
      out << json{{"_id", d.id}, {"title", d.title}, {"text", d.text}}.dump() << '\n';
    }
  }
  {
    auto out = open_out(dir / "qrels.tsv");
    out << "query-id\tcorpus-id\tscore\n";
    for (const auto& [qid, docs] : task.qrels) {
      for (const auto& [did, rel] : docs) out << qid << '\t' << did << '\t' << rel << '\n';
    }
  }
  {
    json meta{{"name", task.name}};
    if (task.kind) meta["kind"] = to_string(*task.kind);
    if (task.bucket_length > 0) meta["length"] = task.bucket_length;
    auto out = open_out(dir / "task.json");
    out << meta.dump(2) << '\n';
  }
}

RetrievalTask read_task(const fs::path& dir) {
  RetrievalTask task;
  task.name = dir.filename().string();
  if (task.name.empty()) task.name = dir.parent_path().filename().string();
  if (fs::exists(dir / "task.json")) {
    auto in = open_in(dir / "task.json");
    json meta;
    try {
      meta = json::parse(in);
    } catch (const json::parse_error& e) {
      throw DataError((dir / "task.json").string() + ": malformed JSON: " + e.what());
    }
    if (meta.contains("name")) task.name = meta["name"].get<std::string>();
    if (meta.contains("kind")) task.kind = parse_task_kind(meta["kind"].get<std::string>());
    if (meta.contains("length")) task.bucket_length = meta["length"].get<long>();
  }
  {
    auto in = open_in(dir / "queries.jsonl");
    task.queries = parse_queries(in, (dir / "queries.jsonl").string());
  }
  {
    auto in = open_in(dir / "corpus.jsonl");
    task.documents = parse_corpus(in, (dir / "corpus.jsonl").string());
  }
  {
    auto in = open_in(dir / "qrels.tsv");
    task.qrels = parse_qrels(in, (dir / "qrels.tsv").string());
  }
  task.validate();
  return task;
}

std::vector<fs::path> write_tasks(const std::vector<RetrievalTask>& tasks, const fs::path& out_dir) {
  std::vector<fs::path> dirs;
  for (const auto& t : tasks) {
    dirs.push_back(out_dir / t.name);
    write_task(t, dirs.back());
  }
  return dirs;
}

TaskStats task_stats(const RetrievalTask& task) {
  TaskStats s;
  s.queries = task.queries.size();
  s.documents = task.documents.size();
  double qw = 0, dw = 0;
  for (const auto& q : task.queries) qw += static_cast<double>(Tokenizer::count_words(q.text));
  for (const auto& d : task.documents) {
    const std::size_t w = Tokenizer::count_words(d.text);
    dw += static_cast<double>(w);
    s.max_document_words = std::max(s.max_document_words, w);
  }
  if (s.queries) s.mean_query_words = qw / static_cast<double>(s.queries);
  if (s.documents) s.mean_document_words = dw / static_cast<double>(s.documents);
  return s;
}

std::string format_stats(const std::string& name, const TaskStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s queries=%zu docs=%zu mean_query_words=%.1f mean_doc_words=%.1f max_doc_words=%zu",
                name.c_str(), s.queries, s.documents, s.mean_query_words, s.mean_document_words,
                s.max_document_words);
  return buf;
}

RetrievalTask ingest_real_task(const fs::path& queries_path, const fs::path& corpus_path, const fs::path& qrels_path,
                               const std::string& name) {
  RetrievalTask task;
  task.name = name.empty() ? queries_path.parent_path().filename().string() : name;
  if (task.name.empty()) task.name = "real";
  {
    auto in = open_in(queries_path);
    task.queries = parse_queries(in, queries_path.string());
  }
  {
    auto in = open_in(corpus_path);
    task.documents = parse_corpus(in, corpus_path.string());
  }
  {
    auto in = open_in(qrels_path);
    task.qrels = parse_qrels(in, qrels_path.string());
  }
  task.validate();
  return task;
}

void write_triples(const std::vector<TextTriple>& triples, const fs::path& path) {
  auto out = open_out(path);
  for (const auto& t : triples) {
    out << json{{"query", t.query}, {"positive", t.positive}, {"negatives", t.negatives}}.dump() << '\n';
  }
}

std::vector<TextTriple> read_triples(const fs::path& path) {
  auto in = open_in(path);
  const std::string source = path.string();
  std::vector<TextTriple> out;
  for_each_line(in, [&](const std::string& line, std::size_t n) {
    const json j = parse_line(line, source, n);
    TextTriple t{string_field(j, "query", source, n), string_field(j, "positive", source, n), {}};
    const auto it = j.find("negatives");
    if (it == j.end() || !it->is_array()) throw DataError(where(source, n) + ": \"negatives\" must be an array");
    for (const auto& neg : *it) {
      if (!neg.is_string()) throw DataError(where(source, n) + ": negatives must be strings");
      t.negatives.push_back(neg.get<std::string>());
    }
    out.push_back(std::move(t));
  });
  return out;
}

}  // namespace extembed
