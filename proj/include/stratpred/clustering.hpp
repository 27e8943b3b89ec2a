#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stratpred/corpus.hpp"
#include "stratpred/embedding.hpp"

namespace stratpred::clustering {

// Points of one dataset (students or problems), ids sorted lexicographically.
struct LabeledPoints {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> points;
};

inline constexpr int kStudents = 0;
inline constexpr int kProblems = 1;

// Two-level hard clustering: per-dataset local clusters, each local cluster
// attached to exactly one global cluster whose center is the mean of all its
// points.
struct ClusterModel {
  double lambda_local = 7.0;
  double lambda_global = 9.0;
  std::array<std::vector<std::string>, 2> ids;   // [kStudents], [kProblems]
  std::array<std::vector<int>, 2> point_local;   // point -> local cluster (per dataset)
  std::array<std::vector<int>, 2> local_global;  // local cluster -> global cluster
  std::vector<std::vector<double>> global_centers;
  double objective = 0.0;
  std::vector<double> coherence_history;

  int n_global() const { return static_cast<int>(global_centers.size()); }
  int n_local(int dataset) const { return static_cast<int>(local_global[dataset].size()); }
  int n_local_total() const { return n_local(0) + n_local(1); }
  int global_of(int dataset, int point) const {
    return local_global[dataset][point_local[dataset][point]];
  }
  // Index of an id within a dataset; -1 if absent.
  int index_of(int dataset, const std::string& id) const;
};

// Minimizes sum of squared distances to global centers + lambda_local * (total
// local clusters) + lambda_global * (global clusters). Points are processed in
// lexicographic id order; iterates until assignments stabilize (at most 100
// passes). Throws if the objective ever increases across an iteration.
ClusterModel dp_means_hdp(const LabeledPoints& students, const LabeledPoints& problems,
                          double lambda_local, double lambda_global,
                          std::vector<double>* objective_trace = nullptr);

// Recomputes the objective from scratch (for the tracked-value invariant).
double recompute_objective(const ClusterModel& model, const LabeledPoints& students,
                           const LabeledPoints& problems);

struct RefinementConfig {
  double lambda_local = 7.0;
  double lambda_global0 = 9.0;
  double epsilon = 1.0;
  int max_iterations = 16;
  std::uint64_t seed = 1;
  int pair_cap = 200;
  // Cluster on length-normalized embeddings. Raw skip-gram norms track node
  // frequency and drown the direction signal the clustering is after.
  bool normalize = true;
};

// Clusters at the current penalties, scores coherence, lowers the global
// penalty by epsilon, and repeats while coherence strictly improves. Returns
// the model with the best coherence seen; its coherence_history covers all
// iterations run.
ClusterModel coarse_to_fine(const corpus::Corpus& corpus,
                            const embedding::EmbeddingSet& embeddings,
                            const RefinementConfig& config);

// Index of the model a refinement run returns for a given coherence history:
// the argmax, earliest on ties.
std::size_t select_best_iteration(const std::vector<double>& coherence_history);

// All traces whose student and problem both fall in global cluster p. If the
// cluster has only one side, falls back to every trace touching that side.
std::vector<const corpus::StrategyTrace*> strategies_of_cluster(const ClusterModel& model,
                                                                const corpus::Corpus& corpus,
                                                                int global_index);

LabeledPoints points_of_kind(const embedding::EmbeddingSet& embeddings,
                             embedding::NodeKind kind);

void save_cluster_model(std::ostream& out, const ClusterModel& model);
ClusterModel load_cluster_model(std::istream& in);

}  // namespace stratpred::clustering
