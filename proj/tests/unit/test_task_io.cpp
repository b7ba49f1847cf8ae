#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "extembed/errors.hpp"
#include "extembed/synth_bench.hpp"
#include "extembed/task_io.hpp"

using namespace extembed;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("extembed_taskio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

fs::path toy_fixture() {
  const auto dir = scratch("toy");
  write_file(dir / "queries.jsonl",
             "{\"_id\": \"q1\", \"text\": \"who wrote it\"}\n"
             "{\"_id\": \"q2\", \"text\": \"when\"}\n"
             "{\"_id\": \"q3\", \"text\": \"where is the old mill\"}\n");
  write_file(dir / "corpus.jsonl",
             "{\"_id\": \"d1\", \"title\": \"A\", \"text\": \"one two three four\"}\n"
             "{\"_id\": \"d2\", \"title\": \"\", \"text\": \"five six\"}\n");
  write_file(dir / "qrels.tsv", "query-id\tcorpus-id\tscore\nq1\td1\t1\nq2\td2\t2\nq3\td1\t1\n");
  return dir;
}

}  // namespace

TEST(TaskIo, ToyFixtureStats) {
  const auto dir = toy_fixture();
  const auto t = ingest_real_task(dir / "queries.jsonl", dir / "corpus.jsonl", dir / "qrels.tsv", "toy");
  const auto s = task_stats(t);
  EXPECT_EQ(s.queries, 3u);
  EXPECT_EQ(s.documents, 2u);
  EXPECT_DOUBLE_EQ(s.mean_query_words, (3.0 + 1.0 + 5.0) / 3.0);
  EXPECT_DOUBLE_EQ(s.mean_document_words, 3.0);
  EXPECT_EQ(s.max_document_words, 4u);
  EXPECT_EQ(t.qrels.at("q2").at("d2"), 2);
  EXPECT_NE(format_stats("toy", s).find("queries=3"), std::string::npos);
}

TEST(TaskIo, DanglingQrelListsOffender) {
  const auto dir = toy_fixture();
  write_file(dir / "qrels.tsv", "query-id\tcorpus-id\tscore\nq1\td1\t1\nq2\td9\t1\nq3\td1\t1\n");
  try {
    ingest_real_task(dir / "queries.jsonl", dir / "corpus.jsonl", dir / "qrels.tsv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("d9"), std::string::npos);
  }
}

TEST(TaskIo, QueryWithoutRelevantDocRejected) {
  const auto dir = toy_fixture();
  write_file(dir / "qrels.tsv", "query-id\tcorpus-id\tscore\nq1\td1\t1\nq2\td2\t1\n");
  EXPECT_THROW(read_task(dir), DataError);
}

TEST(TaskIo, MalformedLineReportsLineNumber) {
  std::istringstream in("{\"_id\": \"a\", \"text\": \"x\"}\n\n{\"_id\": \"b\", \"text\": \n");
  try {
    parse_queries(in, "queries.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("queries.jsonl:3"), std::string::npos);
  }
  std::istringstream missing("{\"_id\": \"a\"}\n");
  EXPECT_THROW(parse_queries(missing), DataError);
  std::istringstream qrels("query-id\tcorpus-id\tscore\nq\td\tx\n");
  try {
    parse_qrels(qrels, "qrels.tsv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("qrels.tsv:2"), std::string::npos);
  }
}

TEST(TaskIo, GeneratedTasksRoundTrip) {
  for (auto kind : {TaskKind::Passkey, TaskKind::Needle}) {
    SyntheticTaskConfig c;
    c.kind = kind;
    c.length_grid = {256, 512};
    c.queries_per_length = 5;
    c.candidates_per_length = 9;
    const auto tasks = generate_tasks(c);
    const auto dir = scratch("roundtrip");
    const auto dirs = write_tasks(tasks, dir);
    for (std::size_t i = 0; i < tasks.size(); ++i) EXPECT_EQ(read_task(dirs[i]), tasks[i]);
  }
}

TEST(TaskIo, QrelsHeaderWritten) {
  SyntheticTaskConfig c;
  c.length_grid = {256};
  c.queries_per_length = 1;
  c.candidates_per_length = 2;
  const auto dir = scratch("header");
  write_tasks(generate_tasks(c), dir);
  std::ifstream in(dir / "passkey-256" / "qrels.tsv");
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, "query-id\tcorpus-id\tscore");
}

TEST(TaskIo, UnwritablePathIsIoError) {
  RetrievalTask t;
  t.name = "x";
  EXPECT_THROW(write_task(t, "/proc/extembed_cannot_write/x"), IoError);
}

TEST(TaskIo, TriplesRoundTrip) {
  TrainingDataConfig c;
  c.count = 4;
  c.negatives = 2;
  const auto triples = gen_training_triples(c);
  const auto path = scratch("triples") / "t.jsonl";
  write_triples(triples, path);
  const auto back = read_triples(path);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[2].query, triples[2].query);
  EXPECT_EQ(back[2].negatives, triples[2].negatives);
}
