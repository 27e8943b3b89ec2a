#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "stratpred/clustering.hpp"
#include "stratpred/corpus.hpp"
#include "stratpred/embedding.hpp"
#include "stratpred/rng.hpp"
#include "oracles.hpp"

using namespace stratpred;
using clustering::ClusterModel;
using clustering::LabeledPoints;

namespace {

LabeledPoints points_1d(const std::string& prefix, std::vector<double> xs) {
  LabeledPoints out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out.ids.push_back(prefix + std::to_string(i));
    out.points.push_back({xs[i]});
  }
  return out;
}

void check_partition_validity(const ClusterModel& m) {
  for (int j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < m.ids[j].size(); ++i) {
      const int local = m.point_local[j][i];
      REQUIRE(local >= 0);
      REQUIRE(local < m.n_local(j));
      const int global = m.local_global[j][local];
      REQUIRE(global >= 0);
      REQUIRE(global < m.n_global());
    }
  }
}

}  // namespace

TEST_CASE("two far points with small penalties form two singleton globals") {
  const auto students = points_1d("s", {0.0});
  const auto problems = points_1d("p", {100.0});
  const ClusterModel m = clustering::dp_means_hdp(students, problems, 0.5, 0.5);
  CHECK(m.n_global() == 2);
  CHECK(m.n_local_total() == 2);
  CHECK(m.global_of(0, 0) != m.global_of(1, 0));
}

TEST_CASE("penalties larger than the data diameter keep one global cluster") {
  const auto students = points_1d("s", {0.0, 1.0, 2.0});
  const auto problems = points_1d("p", {0.5, 1.5});
  const ClusterModel m = clustering::dp_means_hdp(students, problems, 50.0, 50.0);
  CHECK(m.n_global() == 1);
  check_partition_validity(m);
}

TEST_CASE("empty input gives an empty model") {
  const ClusterModel m = clustering::dp_means_hdp({}, {}, 1.0, 1.0);
  CHECK(m.n_global() == 0);
  CHECK(m.objective == 0.0);
}

TEST_CASE("non-positive penalties are rejected") {
  CHECK_THROWS_AS(clustering::dp_means_hdp({}, {}, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("objective matches the exhaustive partition minimum on 20 tiny instances") {
  for (int i = 0; i < 20; ++i) {
    const auto inst = test_oracles::make_separable_instance(mix_seed(2, i));
    std::vector<double> trace;
    const ClusterModel m = clustering::dp_means_hdp(inst.students, inst.problems,
                                                    inst.lambda_local, inst.lambda_global, &trace);
    const double optimum = test_oracles::hdp_objective_minimum(
        inst.students, inst.problems, inst.lambda_local, inst.lambda_global);
    CAPTURE(i);
    CHECK(m.objective == doctest::Approx(optimum).epsilon(1e-12));
    // Non-increasing trace; the final objective is the smallest visited.
    for (std::size_t t = 1; t < trace.size(); ++t) CHECK(trace[t] <= trace[t - 1] + 1e-9);
    CHECK(m.objective <= trace.front() + 1e-9);
    check_partition_validity(m);
  }
}

TEST_CASE("tracked objective equals a from-scratch recomputation") {
  Rng rng(404);
  for (int trial = 0; trial < 10; ++trial) {
    LabeledPoints st, pr;
    const int ns = 4 + static_cast<int>(rng.index(8));
    const int np = 4 + static_cast<int>(rng.index(8));
    for (int i = 0; i < ns; ++i) {
      st.ids.push_back("s" + std::to_string(i));
      st.points.push_back({rng.uniform(0, 10), rng.uniform(0, 10)});
    }
    for (int i = 0; i < np; ++i) {
      pr.ids.push_back("p" + std::to_string(i));
      pr.points.push_back({rng.uniform(0, 10), rng.uniform(0, 10)});
    }
    const double ll = rng.uniform(0.5, 4.0), lg = rng.uniform(0.5, 6.0);
    const ClusterModel m = clustering::dp_means_hdp(st, pr, ll, lg);
    CHECK(std::abs(m.objective - clustering::recompute_objective(m, st, pr)) < 1e-6);
  }
}

TEST_CASE("halving the global penalty never decreases the global cluster count") {
  Rng rng(505);
  for (int trial = 0; trial < 5; ++trial) {
    LabeledPoints st, pr;
    for (int i = 0; i < 10; ++i) {
      st.ids.push_back("s" + std::to_string(i));
      st.points.push_back({rng.uniform(0, 12), rng.uniform(0, 12)});
      pr.ids.push_back("p" + std::to_string(i));
      pr.points.push_back({rng.uniform(0, 12), rng.uniform(0, 12)});
    }
    const double ll = rng.uniform(1.0, 3.0), lg = rng.uniform(4.0, 10.0);
    const int coarse = clustering::dp_means_hdp(st, pr, ll, lg).n_global();
    const int fine = clustering::dp_means_hdp(st, pr, ll, lg / 2.0).n_global();
    CAPTURE(trial);
    CHECK(fine >= coarse);
  }
}

TEST_CASE("best refinement iteration is the coherence argmax, earliest on ties") {
  CHECK(clustering::select_best_iteration({0.4, 0.6, 0.55}) == 1);
  CHECK(clustering::select_best_iteration({0.7}) == 0);
  CHECK(clustering::select_best_iteration({0.5, 0.5}) == 0);
  CHECK_THROWS_AS(clustering::select_best_iteration({}), std::invalid_argument);
}

namespace {

// A corpus of two archetype blobs with hand-placed embeddings.
struct RefinementFixture {
  corpus::Corpus corpus_data;
  embedding::EmbeddingSet embeddings;
};

RefinementFixture make_refinement_fixture() {
  RefinementFixture fx;
  std::vector<corpus::TransactionRecord> records;
  auto add_trace = [&](const std::string& s, const std::string& p,
                       const std::vector<std::string>& kcs) {
    for (std::size_t i = 0; i < kcs.size(); ++i) {
      records.push_back({s, p, "unit0", "sec0", static_cast<int>(i), kcs[i], 1});
    }
  };
  for (const std::string s : {"sa0", "sa1", "sa2"}) {
    add_trace(s, "prob0", {"kc0", "kc1", "kc2"});
    add_trace(s, "prob1", {"kc0", "kc1"});
  }
  for (const std::string s : {"sb0", "sb1", "sb2"}) {
    add_trace(s, "prob0", {"kc3", "kc4", "kc5"});
    add_trace(s, "prob1", {"kc4", "kc5"});
  }
  fx.corpus_data = corpus::consolidate(records);

  fx.embeddings.dim = 2;
  auto put = [&](embedding::NodeKind kind, const std::string& id, double x, double y) {
    fx.embeddings.insert(kind, id, {x, y});
  };
  put(embedding::NodeKind::Student, "sa0", 0.0, 0.1);
  put(embedding::NodeKind::Student, "sa1", 0.1, -0.1);
  put(embedding::NodeKind::Student, "sa2", -0.1, 0.0);
  put(embedding::NodeKind::Student, "sb0", 8.0, 0.1);
  put(embedding::NodeKind::Student, "sb1", 8.1, -0.1);
  put(embedding::NodeKind::Student, "sb2", 7.9, 0.0);
  put(embedding::NodeKind::Problem, "prob0", 4.0, 3.0);
  put(embedding::NodeKind::Problem, "prob1", 4.0, -3.0);
  for (int k = 0; k < 6; ++k) {
    // KCs of the two archetypes point in opposite directions.
    put(embedding::NodeKind::Kc, "kc" + std::to_string(k), k < 3 ? 1.0 : -1.0,
        k < 3 ? 0.5 : -0.5);
  }
  return fx;
}

}  // namespace

TEST_CASE("a single refinement iteration returns that clustering as-is") {
  const auto fx = make_refinement_fixture();
  clustering::RefinementConfig cfg;
  cfg.normalize = false;
  cfg.lambda_local = 2.0;
  cfg.lambda_global0 = 6.0;
  cfg.epsilon = 1.0;
  cfg.max_iterations = 1;
  const ClusterModel m = clustering::coarse_to_fine(fx.corpus_data, fx.embeddings, cfg);
  CHECK(m.coherence_history.size() == 1);
  check_partition_validity(m);
}

TEST_CASE("refinement separates the two archetype blobs") {
  const auto fx = make_refinement_fixture();
  clustering::RefinementConfig cfg;
  cfg.normalize = false;
  cfg.lambda_local = 2.0;
  cfg.lambda_global0 = 20.0;
  cfg.epsilon = 6.0;
  cfg.max_iterations = 12;
  const ClusterModel m = clustering::coarse_to_fine(fx.corpus_data, fx.embeddings, cfg);
  check_partition_validity(m);
  // Students of different archetypes never share a global cluster.
  const int ga = m.global_of(clustering::kStudents, m.index_of(clustering::kStudents, "sa0"));
  const int gb = m.global_of(clustering::kStudents, m.index_of(clustering::kStudents, "sb0"));
  for (const std::string s : {"sa1", "sa2"}) {
    CHECK(m.global_of(clustering::kStudents, m.index_of(clustering::kStudents, s)) == ga);
  }
  for (const std::string s : {"sb1", "sb2"}) {
    CHECK(m.global_of(clustering::kStudents, m.index_of(clustering::kStudents, s)) == gb);
  }
  CHECK(ga != gb);
  // History is non-decreasing up to the returned model's iteration.
  const std::size_t best = clustering::select_best_iteration(m.coherence_history);
  for (std::size_t t = 1; t <= best; ++t) {
    CHECK(m.coherence_history[t] >= m.coherence_history[t - 1]);
  }
}

TEST_CASE("refinement requires embeddings for every student and problem") {
  auto fx = make_refinement_fixture();
  fx.embeddings.vectors.erase({static_cast<int>(embedding::NodeKind::Student), "sa0"});
  clustering::RefinementConfig cfg;
  CHECK_THROWS_WITH_AS(clustering::coarse_to_fine(fx.corpus_data, fx.embeddings, cfg),
                       doctest::Contains("sa0"), std::runtime_error);
}

TEST_CASE("strategies_of_cluster returns pair traces and falls back one-sided") {
  const auto fx = make_refinement_fixture();
  ClusterModel m;
  m.ids = {std::vector<std::string>{"sa0", "sa1", "sa2", "sb0", "sb1", "sb2"},
           std::vector<std::string>{"prob0", "prob1"}};
  // Global 0: archetype A students and both problems. Global 1: B students only.
  m.point_local[0] = {0, 0, 0, 1, 1, 1};
  m.point_local[1] = {0, 0};
  m.local_global[0] = {0, 1};
  m.local_global[1] = {0};
  m.global_centers = {{}, {}};

  const auto both = clustering::strategies_of_cluster(m, fx.corpus_data, 0);
  CHECK(both.size() == 6);  // 3 A-students x 2 problems
  for (const auto* t : both) CHECK(t->student_id.substr(0, 2) == "sa");

  const auto fallback = clustering::strategies_of_cluster(m, fx.corpus_data, 1);
  CHECK(fallback.size() == 6);  // all traces of the B students
  for (const auto* t : fallback) CHECK(t->student_id.substr(0, 2) == "sb");

  CHECK_THROWS_AS(clustering::strategies_of_cluster(m, fx.corpus_data, 7),
                  std::invalid_argument);
}

TEST_CASE("one student with two attempted problems yields two traces") {
  const auto fx = make_refinement_fixture();
  ClusterModel m;
  m.ids = {std::vector<std::string>{"sa0", "sa1", "sa2", "sb0", "sb1", "sb2"},
           std::vector<std::string>{"prob0", "prob1"}};
  m.point_local[0] = {0, 1, 1, 1, 1, 1};  // sa0 alone in local 0 -> global 0
  m.point_local[1] = {0, 0};              // both problems -> global 0
  m.local_global[0] = {0, 1};
  m.local_global[1] = {0};
  m.global_centers = {{}, {}};
  const auto traces = clustering::strategies_of_cluster(m, fx.corpus_data, 0);
  CHECK(traces.size() == 2);
  for (const auto* t : traces) CHECK(t->student_id == "sa0");
}

TEST_CASE("cluster files round-trip memberships and history") {
  const auto fx = make_refinement_fixture();
  clustering::RefinementConfig cfg;
  cfg.normalize = false;
  cfg.lambda_local = 2.0;
  cfg.lambda_global0 = 30.0;
  cfg.epsilon = 5.0;
  cfg.max_iterations = 6;
  const ClusterModel m = clustering::coarse_to_fine(fx.corpus_data, fx.embeddings, cfg);
  std::stringstream buf;
  clustering::save_cluster_model(buf, m);
  const ClusterModel back = clustering::load_cluster_model(buf);
  CHECK(back.ids == m.ids);
  CHECK(back.point_local == m.point_local);
  CHECK(back.local_global == m.local_global);
  CHECK(back.coherence_history.size() == m.coherence_history.size());
  CHECK(back.lambda_local == m.lambda_local);
  for (int j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < m.ids[j].size(); ++i) {
      CHECK(back.global_of(j, static_cast<int>(i)) == m.global_of(j, static_cast<int>(i)));
    }
  }
}
