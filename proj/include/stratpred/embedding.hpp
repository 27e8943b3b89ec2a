#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "stratpred/corpus.hpp"
#include "stratpred/mastery.hpp"

namespace stratpred::embedding {

enum class NodeKind { Student = 0, Problem = 1, Kc = 2 };

const char* kind_name(NodeKind kind);

struct WalkConfig {
  long long n_walks = -1;  // -1 means 50 * number of traces
  int dim = 32;
  int window = 2;
  int negatives = 5;
  int sg_epochs = 3;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;
};

struct EmbeddingSet {
  int dim = 0;
  // (kind, id) -> vector, ordered for deterministic serialization.
  std::map<std::pair<int, std::string>, std::vector<double>> vectors;

  const std::vector<double>* find(NodeKind kind, const std::string& id) const;
  void insert(NodeKind kind, const std::string& id, std::vector<double> v);
};

// Header line "d=<dim>", then one line per node: kind, id, d floats.
void save_embeddings(std::ostream& out, const EmbeddingSet& set);
EmbeddingSet load_embeddings(std::istream& in);

// One sampled <student, kc, problem> path.
struct Walk {
  std::string student;
  std::string kc;
  std::string problem;
};

// Per-student KC distribution and per-(student, kc) problem distribution.
struct SamplingTables {
  struct Dist {
    std::vector<std::string> items;
    std::vector<double> cumulative;  // strictly increasing, back() == 1
  };
  std::vector<std::string> students;
  std::vector<Dist> kc_given_student;                     // by student index
  std::vector<std::map<std::string, Dist>> problem_given; // by student index, keyed by kc
  int uniform_fallbacks = 0;  // contexts whose weights were all zero

  std::size_t student_count() const { return students.size(); }
};

// Mastery-weighted tables: the KC weight is the mean alpha over the student's
// problems using that KC divided by the opportunity count, and the problem
// weight is alpha itself; each context renormalized to a proper distribution.
SamplingTables build_sampling_tables(const corpus::Corpus& corpus,
                                     const mastery::MasteryTable& mastery);

// Uniform tables over the observed triples (no mastery weighting).
SamplingTables build_uniform_tables(const corpus::Corpus& corpus);

// T independent draws: student uniform, then kc, then problem. The relation
// graph is never materialized.
std::vector<Walk> sample_walks(const SamplingTables& tables, long long n_walks,
                               std::uint64_t seed);

// Skip-gram with negative sampling over the walks; deterministic given seed.
EmbeddingSet train_skipgram(const std::vector<Walk>& walks, const WalkConfig& config);

// End to end: tables (mastery-weighted when a table is given, else uniform),
// walks, then skip-gram.
EmbeddingSet generate_embeddings(const corpus::Corpus& corpus,
                                 const mastery::MasteryTable* mastery, const WalkConfig& config);

}  // namespace stratpred::embedding
