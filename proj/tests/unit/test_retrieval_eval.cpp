#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "../support/oracle_embedder.hpp"
#include "extembed/errors.hpp"
#include "extembed/retrieval_eval.hpp"
#include "helpers.hpp"

using namespace extembed;

namespace {

Matrix unit_rows(std::initializer_list<std::vector<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) m(r, static_cast<Eigen::Index>(c)) = row[c];
    m.row(r).normalize();
    ++r;
  }
  return m;
}

EmbeddingVector vec(std::vector<double> v) {
  Vector x = Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  return EmbeddingVector{x.normalized()};
}

// DCG written out from the definition, independent of the library helper.
double oracle_dcg(const std::vector<int>& rels) {
  double s = 0;
  for (std::size_t i = 0; i < rels.size() && i < 10; ++i) {
    s += (std::pow(2.0, rels[i]) - 1.0) / (std::log(static_cast<double>(i + 2)) / std::log(2.0));
  }
  return s;
}

// Ideal DCG as the maximum over every ordering of the judged documents.
double oracle_ideal(std::vector<int> rels) {
  std::sort(rels.begin(), rels.end());
  double best = 0;
  do best = std::max(best, oracle_dcg(rels));
  while (std::next_permutation(rels.begin(), rels.end()));
  return best;
}

}  // namespace

TEST(Index, SelfQueryRanksFirst) {
  EmbeddingIndex idx({"a", "b", "c"}, unit_rows({{1, 0, 0}, {0, 1, 0}, {0.5, 0.5, 0}}));
  EXPECT_EQ(idx.search(vec({0, 1, 0}), 1), (std::vector<std::string>{"b"}));
  EXPECT_EQ(idx.search(vec({1, 0, 0}), 3).front(), "a");
}

TEST(Index, KClampedToSize) {
  EmbeddingIndex idx({"a", "b"}, unit_rows({{1, 0}, {0, 1}}));
  EXPECT_EQ(idx.search(vec({1, 1}), 10).size(), 2u);
  EXPECT_THROW(idx.search(vec({1, 1}), 0), ConfigError);
}

TEST(Index, TiesBrokenByAscendingId) {
  EmbeddingIndex idx({"z", "m", "a"}, unit_rows({{1, 0}, {1, 0}, {0, 1}}));
  EXPECT_EQ(idx.search(vec({1, 0}), 3), (std::vector<std::string>{"m", "z", "a"}));
}

TEST(Index, EmptyAndInvalid) {
  EmbeddingIndex empty;
  EXPECT_THROW(empty.search(vec({1, 0}), 1), EvaluationError);
  Matrix bad(1, 2);
  bad << 1.0, 1.0;
  EXPECT_THROW(EmbeddingIndex({"a"}, bad), DimensionError);
  EXPECT_THROW(EmbeddingIndex({"a", "b"}, unit_rows({{1, 0}})), DimensionError);
}

TEST(Acc, Counting) {
  Qrels q;
  Rankings r;
  for (int i = 0; i < 50; ++i) {
    const std::string id = "q" + std::to_string(i);
    q[id]["d" + std::to_string(i)] = 1;
    r[id] = {i < 25 ? "d" + std::to_string(i) : "x", "d" + std::to_string(i)};
  }
  EXPECT_DOUBLE_EQ(acc_at_1(r, q), 0.5);
  for (auto& [id, list] : r) list.front() = "d" + id.substr(1);
  EXPECT_DOUBLE_EQ(acc_at_1(r, q), 1.0);
  for (auto& [id, list] : r) list = {"x"};
  EXPECT_DOUBLE_EQ(acc_at_1(r, q), 0.0);
}

TEST(Acc, MissingJudgementNamesQuery) {
  Rankings r{{"lonely", {"d"}}};
  try {
    acc_at_1(r, {});
    FAIL();
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos);
  }
}

TEST(Ndcg, Examples) {
  Qrels q{{"q", {{"d", 1}}}};
  EXPECT_DOUBLE_EQ(ndcg_at_10({{"q", {"d", "x", "y"}}}, q).score, 1.0);
  EXPECT_NEAR(ndcg_at_10({{"q", {"x", "y", "d"}}}, q).score, 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(ndcg_at_10({{"q", {"a", "b", "c", "e", "f", "g", "h", "i", "j", "k", "d"}}}, q).score, 0.0);
}

TEST(Ndcg, ZeroRelevanceQueriesExcluded) {
  Qrels q{{"q1", {{"d", 1}}}, {"q2", {{"d", 0}}}};
  const auto r = ndcg_at_10({{"q1", {"d"}}, {"q2", {"d"}}, {"q3", {"d"}}}, q);
  EXPECT_EQ(r.excluded, 2u);
  EXPECT_EQ(r.scored, 1u);
  EXPECT_DOUBLE_EQ(r.score, 1.0);
}

TEST(Ndcg, MatchesExhaustiveOracle) {
  Rng rng(7);
  for (std::size_t n = 1; n <= 8; ++n) {
    for (int trial = 0; trial < 6; ++trial) {
      std::vector<std::string> docs;
      Qrels q;
      std::vector<int> rels(n);
      for (std::size_t i = 0; i < n; ++i) {
        docs.push_back("d" + std::to_string(i));
        rels[i] = static_cast<int>(rng.below(4));
        if (rels[i] > 0 || rng.below(2)) q["q"][docs[i]] = rels[i];
      }
      if (std::all_of(rels.begin(), rels.end(), [](int r) { return r == 0; })) {
        rels[0] = 1;
        q["q"][docs[0]] = 1;
      }
      const double ideal = oracle_ideal(rels);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      do {
        std::vector<std::string> ranking;
        std::vector<int> got;
        for (auto i : perm) {
          ranking.push_back(docs[i]);
          got.push_back(rels[i]);
        }
        const double expect = oracle_dcg(got) / ideal;
        ASSERT_NEAR(ndcg_at_10({{"q", ranking}}, q).score, expect, 1e-9);
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
  }
}

TEST(Metrics, BoundedAndScaleInvariant) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::string> ids;
    Matrix m(12, 6);
    for (int i = 0; i < 12; ++i) {
      ids.push_back("d" + std::to_string(i));
      for (int c = 0; c < 6; ++c) m(i, c) = rng.uniform(-1, 1);
      m.row(i).normalize();
    }
    const EmbeddingIndex idx(ids, m);
    Qrels q;
    Rankings r1, r2;
    for (int k = 0; k < 5; ++k) {
      const std::string qid = "q" + std::to_string(k);
      q[qid][ids[rng.below(12)]] = 1 + static_cast<int>(rng.below(2));
      Vector v(6);
      for (int c = 0; c < 6; ++c) v[c] = rng.uniform(-1, 1);
      r1[qid] = idx.search(EmbeddingVector{v.normalized()}, 10);
      // Scaling every similarity by a positive constant leaves the ranking unchanged.
      const Vector scores = m * v.normalized();
      const Vector scaled = 3.7 * scores;
      std::vector<int> order(12);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return scaled[a] != scaled[b] ? scaled[a] > scaled[b] : ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
      });
      for (int i = 0; i < 10; ++i) r2[qid].push_back(ids[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    }
    EXPECT_EQ(r1, r2);
    const double a = acc_at_1(r1, q), n = ndcg_at_10(r1, q).score;
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    EXPECT_GE(n, 0.0);
    EXPECT_LE(n, 1.0);
  }
}

TEST(Benchmark, OracleScoresPerfectAndEmbedsDocsOnce) {
  SyntheticTaskConfig c;
  c.length_grid = {256, 512};
  c.queries_per_length = 30;
  c.candidates_per_length = 40;
  auto tasks = generate_tasks(c);
  c.kind = TaskKind::Needle;
  for (auto& t : generate_tasks(c)) tasks.push_back(std::move(t));
  const extembed::testing::OracleEmbedder oracle;
  const auto report = run_benchmark(oracle, tasks);
  EXPECT_EQ(oracle.document_calls, 4u * 40u);
  EXPECT_EQ(oracle.query_calls, 4u * 30u);
  for (const auto& t : report.tasks) EXPECT_DOUBLE_EQ(t.score, 1.0);
  EXPECT_DOUBLE_EQ(report.average, 1.0);
}

TEST(Benchmark, OverlongDocumentsAreUnretrievable) {
  const Model m = extembed::testing::tiny_model(PositionMode::Rotary, 16, 32, 4096);
  SyntheticTaskConfig c;
  c.length_grid = {16, 256};
  c.queries_per_length = 3;
  c.candidates_per_length = 5;
  const auto tasks = generate_tasks(c);
  ExtensionSpec spec{.strategy = Strategy::None, .original_context = 32, .target_context = 32};
  const ModelEmbedder embedder(m, spec);
  const auto report = run_benchmark(embedder, tasks);
  EXPECT_EQ(report.tasks[0].unretrievable, 0u);
  EXPECT_EQ(report.tasks[1].unretrievable, 5u);
  EXPECT_DOUBLE_EQ(report.tasks[1].score, 0.0);
  EXPECT_FALSE(report.tasks[1].errors.empty());

  const ModelEmbedder truncating(m, spec, true);
  EXPECT_EQ(run_benchmark(truncating, tasks).tasks[1].unretrievable, 0u);
}

TEST(Benchmark, DeterministicGivenInputs) {
  const Model m = extembed::testing::tiny_model(PositionMode::Absolute, 16, 64, 4096);
  SyntheticTaskConfig c;
  c.length_grid = {64};
  c.queries_per_length = 4;
  c.candidates_per_length = 8;
  const auto tasks = generate_tasks(c);
  ExtensionSpec spec{.strategy = Strategy::None, .original_context = 64, .target_context = 64};
  const ModelEmbedder e(m, spec);
  const auto a = run_benchmark(e, tasks), b = run_benchmark(e, tasks);
  EXPECT_EQ(a.tasks[0].score, b.tasks[0].score);
}

TEST(Report, AverageIsMeanOfColumnsAndRoundTrips) {
  EvalReport r;
  r.tasks.push_back({"passkey-256", TaskKind::Passkey, 256, "acc@1", 1.0});
  r.tasks.push_back({"passkey-512", TaskKind::Passkey, 512, "acc@1", 0.5});
  r.tasks.push_back({"needle-256", TaskKind::Needle, 256, "acc@1", 0.25});
  r.tasks.push_back({"qmsum", std::nullopt, 0, "ndcg@10", 0.4});
  compute_columns(r);
  ASSERT_EQ(r.columns.size(), 3u);
  EXPECT_EQ(r.columns[0].first, "Passkey");
  EXPECT_DOUBLE_EQ(r.columns[0].second, 0.75);
  EXPECT_DOUBLE_EQ(r.average, (0.75 + 0.25 + 0.4) / 3.0);

  const auto back = EvalReport::from_json(r.to_json());
  EXPECT_DOUBLE_EQ(back.average, r.average);
  EXPECT_EQ(back.tasks.size(), 4u);
  EXPECT_NE(r.summary_table().find("Passkey"), std::string::npos);
  EXPECT_NE(r.summary_table().find("Avg."), std::string::npos);
}
