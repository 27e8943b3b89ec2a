#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "stratpred/embedding.hpp"
#include "stratpred/mastery.hpp"
#include "stratpred/rng.hpp"
#include "stratpred/synthetic.hpp"

using namespace stratpred;
using embedding::EmbeddingSet;
using embedding::NodeKind;
using embedding::SamplingTables;
using embedding::Walk;
using embedding::WalkConfig;

namespace {

corpus::Corpus tiny_corpus(const std::vector<std::tuple<std::string, std::string,
                                                        std::vector<std::string>>>& traces) {
  std::vector<corpus::TransactionRecord> records;
  for (const auto& [student, problem, kcs] : traces) {
    for (std::size_t i = 0; i < kcs.size(); ++i) {
      records.push_back({student, problem, "u0", "sec0", static_cast<int>(i), kcs[i], 1});
    }
  }
  return corpus::consolidate(records);
}

mastery::MasteryTable table_of(
    const std::vector<std::tuple<std::string, std::string, std::string, double>>& entries) {
  mastery::MasteryTable t;
  for (const auto& [s, p, k, a] : entries) t.alpha[{s, p, k}] = a;
  return t;
}

double cos_sim(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / (std::sqrt(na) * std::sqrt(nb));
}

void check_proper_distributions(const SamplingTables& tables) {
  for (std::size_t si = 0; si < tables.student_count(); ++si) {
    const auto& kc_dist = tables.kc_given_student[si];
    REQUIRE(!kc_dist.items.empty());
    CHECK(std::abs(kc_dist.cumulative.back() - 1.0) <= 1e-9);
    double prev = 0.0;
    for (double c : kc_dist.cumulative) {
      CHECK(c >= prev - 1e-12);
      prev = c;
    }
    for (const auto& [kc, dist] : tables.problem_given[si]) {
      CHECK(std::abs(dist.cumulative.back() - 1.0) <= 1e-9);
    }
  }
}

}  // namespace

TEST_CASE("one student, one kc, one problem gives certain paths") {
  const auto c = tiny_corpus({{"s1", "p1", {"k1"}}});
  const auto table = table_of({{"s1", "p1", "k1", 0.7}});
  const auto tables = embedding::build_sampling_tables(c, table);
  check_proper_distributions(tables);
  const auto walks = embedding::sample_walks(tables, 10, 3);
  REQUIRE(walks.size() == 10);
  for (const Walk& w : walks) {
    CHECK(w.student == "s1");
    CHECK(w.kc == "k1");
    CHECK(w.problem == "p1");
  }
}

TEST_CASE("equal alphas over two kcs split the distribution evenly") {
  const auto c = tiny_corpus({{"s1", "p1", {"k1", "k2"}}});
  const auto table = table_of({{"s1", "p1", "k1", 0.4}, {"s1", "p1", "k2", 0.4}});
  const auto tables = embedding::build_sampling_tables(c, table);
  REQUIRE(tables.kc_given_student[0].items.size() == 2);
  CHECK(tables.kc_given_student[0].cumulative[0] == doctest::Approx(0.5));
  CHECK(tables.kc_given_student[0].cumulative[1] == doctest::Approx(1.0));
}

TEST_CASE("kc weights follow per-opportunity mean alpha") {
  // k1: alpha 0.9 on one problem; k2: alpha 0.3 on one problem -> 0.75 / 0.25.
  const auto c = tiny_corpus({{"s1", "p1", {"k1"}}, {"s1", "p2", {"k2"}}});
  const auto table = table_of({{"s1", "p1", "k1", 0.9}, {"s1", "p2", "k2", 0.3}});
  const auto tables = embedding::build_sampling_tables(c, table);
  REQUIRE(tables.kc_given_student[0].items == std::vector<std::string>{"k1", "k2"});
  CHECK(tables.kc_given_student[0].cumulative[0] == doctest::Approx(0.75));
}

TEST_CASE("a student with all-zero weights falls back to uniform and is counted") {
  const auto c = tiny_corpus({{"s1", "p1", {"k1", "k2"}}});
  const auto table = table_of({{"s1", "p1", "k1", 0.0}, {"s1", "p1", "k2", 0.0}});
  const auto tables = embedding::build_sampling_tables(c, table);
  CHECK(tables.uniform_fallbacks > 0);
  CHECK(tables.kc_given_student[0].cumulative[0] == doctest::Approx(0.5));
}

TEST_CASE("zero walks is an empty list") {
  const auto c = tiny_corpus({{"s1", "p1", {"k1"}}});
  const auto tables = embedding::build_uniform_tables(c);
  CHECK(embedding::sample_walks(tables, 0, 1).empty());
}

TEST_CASE("empirical kc frequency converges to the table probability") {
  const auto c = tiny_corpus({{"s1", "p1", {"k1"}}, {"s1", "p2", {"k2"}}});
  const auto table = table_of({{"s1", "p1", "k1", 0.9}, {"s1", "p2", "k2", 0.3}});
  const auto tables = embedding::build_sampling_tables(c, table);
  const auto walks = embedding::sample_walks(tables, 100000, 12345);
  long k1 = 0;
  for (const Walk& w : walks) k1 += w.kc == "k1" ? 1 : 0;
  CHECK(std::abs(static_cast<double>(k1) / 100000.0 - 0.75) < 0.01);
}

TEST_CASE("empirical marginals match uniform tables within one percent") {
  const auto c = tiny_corpus({{"s1", "p1", {"k1"}},
                              {"s1", "p2", {"k2"}},
                              {"s1", "p3", {"k3"}},
                              {"s2", "p1", {"k1"}}});
  const auto tables = embedding::build_uniform_tables(c);
  check_proper_distributions(tables);
  const auto walks = embedding::sample_walks(tables, 100000, 99);
  std::map<std::string, long> counts;
  long s1 = 0;
  for (const Walk& w : walks) {
    if (w.student == "s1") {
      ++s1;
      counts[w.kc] += 1;
    }
  }
  for (const auto& [kc, n] : counts) {
    CHECK(std::abs(static_cast<double>(n) / s1 - 1.0 / 3.0) < 0.01);
  }
}

TEST_CASE("skip-gram training covers every walked node") {
  const std::vector<Walk> walks(40, Walk{"s1", "k1", "p1"});
  WalkConfig cfg;
  cfg.dim = 8;
  cfg.sg_epochs = 1;
  const EmbeddingSet set = embedding::train_skipgram(walks, cfg);
  CHECK(set.find(NodeKind::Student, "s1") != nullptr);
  CHECK(set.find(NodeKind::Kc, "k1") != nullptr);
  CHECK(set.find(NodeKind::Problem, "p1") != nullptr);
  CHECK(set.find(NodeKind::Student, "nope") == nullptr);
  for (const auto& [key, vec] : set.vectors) {
    double norm = 0.0;
    for (double v : vec) {
      CHECK(std::isfinite(v));
      norm += v * v;
    }
    CHECK(norm > 0.0);
  }
}

TEST_CASE("same seed reproduces identical embeddings") {
  const auto c = tiny_corpus({{"s1", "p1", {"k1", "k2"}}, {"s2", "p2", {"k1"}}});
  WalkConfig cfg;
  cfg.dim = 8;
  cfg.n_walks = 500;
  cfg.seed = 31;
  const EmbeddingSet a = embedding::generate_embeddings(c, nullptr, cfg);
  const EmbeddingSet b = embedding::generate_embeddings(c, nullptr, cfg);
  CHECK(a.vectors == b.vectors);
}

TEST_CASE("shared contexts pull students together across seeds") {
  for (std::uint64_t seed : {11ULL, 22ULL, 33ULL}) {
    // s1 and s2 share every (kc, problem); s3 lives in a disjoint world.
    std::vector<Walk> walks;
    Rng rng(seed);
    for (int i = 0; i < 600; ++i) {
      const std::string kc = "k" + std::to_string(rng.index(3));
      const std::string problem = "p" + std::to_string(rng.index(2));
      walks.push_back({rng.bernoulli(0.5) ? "s1" : "s2", kc, problem});
      walks.push_back({"s3", "q" + std::to_string(rng.index(3)), "r" + std::to_string(rng.index(2))});
    }
    WalkConfig cfg;
    cfg.dim = 12;
    cfg.sg_epochs = 3;
    cfg.seed = seed;
    const EmbeddingSet set = embedding::train_skipgram(walks, cfg);
    const double close = cos_sim(*set.find(NodeKind::Student, "s1"),
                                 *set.find(NodeKind::Student, "s2"));
    const double far = cos_sim(*set.find(NodeKind::Student, "s1"),
                               *set.find(NodeKind::Student, "s3"));
    CAPTURE(seed);
    CHECK(close > far);
  }
}

TEST_CASE("mastery weighting separates archetypes more than uniform sampling") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    corpus::SyntheticWorldConfig wc;
    wc.n_students = 60;
    wc.n_problems = 36;
    wc.n_kcs = 12;
    wc.n_archetypes = 3;
    wc.strategies_per_section = 3;
    wc.problems_per_section = 6;
    wc.mastery_noise = 0.1;
    wc.unit_participation = 0.8;
    wc.archetype_skew = 1.0;
    wc.seed = seed;
    const auto [c, oracle] = corpus::generate_synthetic(wc);
    mastery::MasteryTable table;
    for (const auto& t : c.traces) {
      for (const auto& kc : t.kcs) {
        table.alpha[{t.student_id, t.problem_id, kc}] =
            oracle.mastery_of(oracle.archetype_of(t.student_id), kc);
      }
    }
    WalkConfig cfg;
    cfg.dim = 16;
    cfg.sg_epochs = 2;
    cfg.n_walks = 30LL * static_cast<long long>(c.traces.size());
    cfg.seed = seed * 101;
    const EmbeddingSet plain = embedding::generate_embeddings(c, nullptr, cfg);
    const EmbeddingSet weighted = embedding::generate_embeddings(c, &table, cfg);
    auto separation = [&](const EmbeddingSet& set) {
      double same = 0, cross = 0;
      long ns = 0, nc = 0;
      for (std::size_t i = 0; i < c.students.size(); ++i) {
        for (std::size_t j = i + 1; j < c.students.size(); ++j) {
          const auto* a = set.find(NodeKind::Student, c.students[i]);
          const auto* b = set.find(NodeKind::Student, c.students[j]);
          if (a == nullptr || b == nullptr) continue;
          const double s = cos_sim(*a, *b);
          if (oracle.archetype_of(c.students[i]) == oracle.archetype_of(c.students[j])) {
            same += s;
            ++ns;
          } else {
            cross += s;
            ++nc;
          }
        }
      }
      return same / ns - cross / nc;
    };
    CAPTURE(seed);
    CHECK(separation(weighted) > separation(plain));
  }
}

TEST_CASE("uniform-table embeddings cover all observed nodes") {
  corpus::SyntheticWorldConfig wc;
  wc.n_students = 15;
  wc.n_problems = 12;
  wc.n_kcs = 6;
  wc.n_archetypes = 2;
  wc.problems_per_section = 4;
  wc.seed = 8;
  const auto [c, oracle] = corpus::generate_synthetic(wc);
  WalkConfig cfg;
  cfg.dim = 8;
  cfg.seed = 5;
  const EmbeddingSet set = embedding::generate_embeddings(c, nullptr, cfg);
  for (const auto& s : c.students) CHECK(set.find(NodeKind::Student, s) != nullptr);
  // Walk sampling touches every student; kcs/problems follow the student's
  // observed sets, so with 50x walks all show up.
  for (const auto& k : c.kc_vocab) CHECK(set.find(NodeKind::Kc, k) != nullptr);
}

TEST_CASE("embedding files round-trip") {
  const auto c = tiny_corpus({{"s1", "p1", {"k1", "k2"}}});
  WalkConfig cfg;
  cfg.dim = 6;
  cfg.n_walks = 200;
  const EmbeddingSet set = embedding::generate_embeddings(c, nullptr, cfg);
  std::stringstream buf;
  embedding::save_embeddings(buf, set);
  const EmbeddingSet back = embedding::load_embeddings(buf);
  CHECK(back.dim == set.dim);
  CHECK(back.vectors == set.vectors);
}
