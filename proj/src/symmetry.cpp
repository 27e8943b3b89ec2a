#include "stratpred/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "stratpred/rng.hpp"

namespace stratpred::symmetry {

std::vector<double> positional_encoding(int t, int d) {
  if (t < 0 || d < 1) throw std::invalid_argument("positional_encoding: t >= 0 and d >= 1");
  std::vector<double> v(d);
  for (int k = 0; k < d; ++k) {
    const double omega = std::pow(10000.0, -2.0 * k / d);
    v[k] = (k % 2 == 0) ? std::sin(omega * t) : std::cos(omega * t);
  }
  return v;
}

PositionalEncodingTable::PositionalEncodingTable(int max_len, int d) : d_(d) {
  rows_.reserve(max_len);
  for (int t = 0; t < max_len; ++t) rows_.push_back(positional_encoding(t, d));
}

const std::vector<double>& PositionalEncodingTable::row(int t) const {
  if (t < 0 || t >= static_cast<int>(rows_.size())) {
    throw std::invalid_argument("positional encoding table: position out of range");
  }
  return rows_[t];
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  if (a == b) {
    double norm = 0.0;
    for (double v : a) norm += v * v;
    if (norm == 0.0) throw std::domain_error("cosine undefined for zero-norm vector");
    return 1.0;
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine undefined for zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Alignment sw_align(const PositionalStrategy& a, const PositionalStrategy& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("sw_align: empty strategy");
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  std::vector<std::vector<double>> sim(n, std::vector<double>(m));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) sim[i][j] = cosine(a.steps[i], b.steps[j]);

  // H is (n+1) x (m+1); gap penalty is zero so up/left moves keep the score.
  std::vector<std::vector<double>> H(n + 1, std::vector<double>(m + 1, 0.0));
  double best = 0.0;
  int bi = 0, bj = 0;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      const double diag = H[i - 1][j - 1] + sim[i - 1][j - 1];
      double h = 0.0;
      h = std::max(h, diag);
      h = std::max(h, H[i - 1][j]);
      h = std::max(h, H[i][j - 1]);
      H[i][j] = h;
      if (h > best) {
        best = h;
        bi = i;
        bj = j;
      }
    }
  }

  Alignment out;
  out.score = best;
  int i = bi, j = bj;
  while (i > 0 && j > 0 && H[i][j] > 0.0) {
    const double h = H[i][j];
    const double diag = H[i - 1][j - 1] + sim[i - 1][j - 1];
    if (h == diag && h > H[i - 1][j - 1]) {
      out.pairs.emplace_back(i - 1, j - 1);
      --i;
      --j;
    } else if (h == H[i - 1][j]) {
      --i;
    } else if (h == H[i][j - 1]) {
      --j;
    } else {
      // Diagonal source without strict increase: skip the pair.
      --i;
      --j;
    }
  }
  std::reverse(out.pairs.begin(), out.pairs.end());
  return out;
}

double symmetry_score(const PositionalStrategy& a, const PositionalStrategy& b) {
  const Alignment al = sw_align(a, b);
  return al.score / static_cast<double>(std::max(a.size(), b.size()));
}

double cluster_coherence_lazy(
    const std::vector<std::size_t>& cluster_sizes,
    const std::function<PositionalStrategy(std::size_t cluster, std::size_t index)>& strategy_at,
    int pair_cap, std::uint64_t seed) {
  if (cluster_sizes.empty()) return 1.0;
  double total = 0.0;
  for (std::size_t c = 0; c < cluster_sizes.size(); ++c) {
    const std::size_t n = cluster_sizes[c];
    if (n <= 1) {
      total += 1.0;  // a lone strategy is vacuously self-symmetric
      continue;
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    const std::size_t all_pairs = n * (n - 1) / 2;
    if (all_pairs <= static_cast<std::size_t>(pair_cap)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    } else {
      Rng rng(mix_seed(seed, 0xC0DE + c));
      std::set<std::pair<std::size_t, std::size_t>> chosen;
      while (chosen.size() < static_cast<std::size_t>(pair_cap)) {
        std::size_t i = rng.index(n);
        std::size_t j = rng.index(n);
        if (i == j) continue;
        if (i > j) std::swap(i, j);
        chosen.emplace(i, j);
      }
      pairs.assign(chosen.begin(), chosen.end());
    }
    // Materialize only the strategies the sampled pairs touch.
    std::vector<PositionalStrategy> cache(n);
    std::vector<bool> have(n, false);
    auto get = [&](std::size_t i) -> const PositionalStrategy& {
      if (!have[i]) {
        cache[i] = strategy_at(c, i);
        have[i] = true;
      }
      return cache[i];
    };
    double sum = 0.0;
    for (const auto& [i, j] : pairs) sum += symmetry_score(get(i), get(j));
    total += sum / static_cast<double>(pairs.size());
  }
  return total / static_cast<double>(cluster_sizes.size());
}

double cluster_coherence(const std::vector<std::vector<PositionalStrategy>>& clusters,
                         int pair_cap, std::uint64_t seed) {
  std::vector<std::size_t> sizes;
  sizes.reserve(clusters.size());
  for (const auto& c : clusters) sizes.push_back(c.size());
  return cluster_coherence_lazy(
      sizes, [&](std::size_t c, std::size_t i) { return clusters[c][i]; }, pair_cap, seed);
}

}  // namespace stratpred::symmetry
