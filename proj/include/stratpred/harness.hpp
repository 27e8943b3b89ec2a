#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stratpred/clustering.hpp"
#include "stratpred/corpus.hpp"
#include "stratpred/embedding.hpp"
#include "stratpred/mastery.hpp"
#include "stratpred/predictor.hpp"

namespace stratpred::harness {

enum class SamplingMethod {
  ClusterRoundRobin,  // "as": equal representation across global clusters
  GroupProportional,  // "gs": students weighted by trace count
  UniformRandom,      // "rs"
  RandomClusters,     // "ns": round-robin over randomly assigned clusters
};

enum class Ablation {
  NoSymmetry,       // "ns": plain embeddings + random clusters
  Symmetry,         // "ss": plain embeddings + refined clusters
  SymmetryMastery,  // "ssms": mastery-weighted embeddings + refined clusters
};

std::string method_name(SamplingMethod m);
std::string ablation_name(Ablation a);
std::optional<SamplingMethod> parse_method(const std::string& name);
std::optional<Ablation> parse_ablation(const std::string& name);

// Trace-level split stratified by student: every student with at least two
// traces appears on both sides; single-trace students go to train.
std::pair<corpus::Corpus, corpus::Corpus> split_corpus(const corpus::Corpus& corpus,
                                                       double test_fraction, std::uint64_t seed);

// Random per-node cluster assignment with n_global singleton-local clusters
// per side, used by the no-symmetry ablation.
clustering::ClusterModel make_random_clusters(const corpus::Corpus& corpus, int n_global,
                                              std::uint64_t seed);

// Draws `budget` distinct traces. Cluster methods go round-robin over global
// clusters and uniformly without replacement inside each; GroupProportional
// weights students by remaining trace count; UniformRandom is uniform.
std::vector<const corpus::StrategyTrace*> sample_training_set(
    const corpus::Corpus& train, SamplingMethod method, std::size_t budget,
    const clustering::ClusterModel* clusters, std::uint64_t seed);

struct ExperimentConfigs {
  mastery::MasteryModelConfig mastery;
  embedding::WalkConfig walk;
  clustering::RefinementConfig refine;
  predictor::PredictorConfig predictor;
  double test_fraction = 0.2;
  int n_runs = 3;  // training runs averaged per cell
  int random_clusters = 8;
};

struct SweepCell {
  std::size_t budget = 0;
  std::string method;
  std::string ablation;
  std::vector<double> run_accuracies;
  double mean_accuracy = 0.0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t skipped_test_traces = 0;
  std::map<std::string, double> stage_seconds;
};

struct SweepResult {
  std::vector<SweepCell> cells;
};

// For each budget: build embeddings per the ablation, cluster when the method
// needs it, sample, train the decoder, and average test step accuracy over
// n_runs reseeded training runs. Wall-clock per stage is recorded.
SweepResult run_experiment(const corpus::Corpus& corpus, SamplingMethod method,
                           const std::vector<std::size_t>& budgets, Ablation ablation,
                           const ExperimentConfigs& configs, std::uint64_t seed);

// Serialized forms. include_timings=false keeps the output a pure function of
// (data, seed) for byte-determinism checks.
void write_sweep_json(std::ostream& out, const SweepResult& result, bool include_timings = true);
void write_sweep_csv(std::ostream& out, const SweepResult& result, bool include_timings = true);

struct FairnessGroup {
  std::string label;
  int count = 0;        // students (performance groups) or sections (variance groups)
  int traces = 0;
  double accuracy = 0.0;
};

struct FairnessReport {
  std::vector<FairnessGroup> performance_groups;  // empty groups are absent
  std::vector<FairnessGroup> variance_groups;
  double performance_disparity = 0.0;  // max - min group accuracy
  double variance_disparity = 0.0;
  std::size_t skipped_traces = 0;
};

// Performance groups bucket students by their test-set share of correct first
// attempts ([0,.3], (.3,.5], (.5,.7], (.7,.9], (.9,1]); variance groups bucket
// sections by the population variance of pairwise normalized edit distances
// between their strategies, five equal-width buckets.
FairnessReport fairness_report(const predictor::PredictorModel& model,
                               const corpus::Corpus& test,
                               const embedding::EmbeddingSet& embeddings);

void write_fairness_json(std::ostream& out, const FairnessReport& report);
void write_fairness_csv(std::ostream& out, const FairnessReport& report);

// Levenshtein distance divided by the longer length; 0 for two empty inputs.
double normalized_edit_distance(const std::vector<std::string>& a,
                                const std::vector<std::string>& b);

// Agreement between two labelings, chance-adjusted; 1 = identical partitions.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace stratpred::harness
