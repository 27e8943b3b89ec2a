#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace stratpred::symmetry {

// Sinusoidal position code: component k is sin(w_k t) for even k and
// cos(w_k t) for odd k, with w_k = 1/10000^(2k/d).
std::vector<double> positional_encoding(int t, int d);

// Cached rows 0..max_len-1, all of dimension d.
class PositionalEncodingTable {
 public:
  PositionalEncodingTable(int max_len, int d);
  const std::vector<double>& row(int t) const;
  int dim() const { return d_; }

 private:
  int d_;
  std::vector<std::vector<double>> rows_;
};

// One strategy as a list of step vectors (embedding + position code per step).
struct PositionalStrategy {
  std::vector<std::vector<double>> steps;

  std::size_t size() const { return steps.size(); }
  bool empty() const { return steps.empty(); }
};

// Cosine similarity; identical vectors compare as exactly 1. Throws on a
// zero-norm vector.
double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct Alignment {
  std::vector<std::pair<int, int>> pairs;  // strictly increasing in both coordinates
  double score = 0.0;
};

// Smith-Waterman local alignment with cosine similarity and zero gap penalty.
// Only pairs that strictly increase the running score are aligned, so every
// aligned pair has positive cosine. Traceback ties prefer diagonal, then up,
// then left.
Alignment sw_align(const PositionalStrategy& a, const PositionalStrategy& b);

// r = (sum of aligned cosines) / max(|a|, |b|); symmetric and in [0, 1].
double symmetry_score(const PositionalStrategy& a, const PositionalStrategy& b);

// Mean over clusters of the mean pairwise symmetry score inside each cluster.
// Singleton and empty clusters count as 1. Clusters with more than pair_cap
// pairs are scored on a seeded uniform subsample of pair_cap distinct pairs.
double cluster_coherence(const std::vector<std::vector<PositionalStrategy>>& clusters,
                         int pair_cap = 200, std::uint64_t seed = 1);

// Same scoring with lazily materialized strategies, for large clusters.
double cluster_coherence_lazy(
    const std::vector<std::size_t>& cluster_sizes,
    const std::function<PositionalStrategy(std::size_t cluster, std::size_t index)>& strategy_at,
    int pair_cap = 200, std::uint64_t seed = 1);

}  // namespace stratpred::symmetry
