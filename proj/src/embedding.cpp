#include "stratpred/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "stratpred/rng.hpp"

namespace stratpred::embedding {

const char* kind_name(NodeKind kind) {
  switch (kind) {
    case NodeKind::Student: return "student";
    case NodeKind::Problem: return "problem";
    case NodeKind::Kc: return "kc";
  }
  return "?";
}

const std::vector<double>* EmbeddingSet::find(NodeKind kind, const std::string& id) const {
  auto it = vectors.find({static_cast<int>(kind), id});
  return it != vectors.end() ? &it->second : nullptr;
}

void EmbeddingSet::insert(NodeKind kind, const std::string& id, std::vector<double> v) {
  vectors[{static_cast<int>(kind), id}] = std::move(v);
}

void save_embeddings(std::ostream& out, const EmbeddingSet& set) {
  out << "d=" << set.dim << "\n";
  char buf[64];
  for (const auto& [key, vec] : set.vectors) {
    out << kind_name(static_cast<NodeKind>(key.first)) << '\t' << key.second;
    for (double v : vec) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << '\t' << buf;
    }
    out << '\n';
  }
}

EmbeddingSet load_embeddings(std::istream& in) {
  EmbeddingSet set;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') continue;
    if (line.rfind("d=", 0) == 0) {
      set.dim = std::stoi(line.substr(2));
      continue;
    }
    std::istringstream ls(line);
    std::string kind, id, cell;
    if (!std::getline(ls, kind, '\t') || !std::getline(ls, id, '\t')) {
      throw std::runtime_error("malformed embedding line: " + line);
    }
    std::vector<double> vec;
    while (std::getline(ls, cell, '\t')) vec.push_back(std::stod(cell));
    if (static_cast<int>(vec.size()) != set.dim) {
      throw std::runtime_error("embedding dimension mismatch for node " + id);
    }
    NodeKind k;
    if (kind == "student") k = NodeKind::Student;
    else if (kind == "problem") k = NodeKind::Problem;
    else if (kind == "kc") k = NodeKind::Kc;
    else throw std::runtime_error("unknown node kind: " + kind);
    set.insert(k, id, std::move(vec));
  }
  return set;
}

namespace {

SamplingTables::Dist make_dist(const std::vector<std::pair<std::string, double>>& weighted,
                               int* fallback_counter) {
  SamplingTables::Dist d;
  double total = 0.0;
  for (const auto& [item, w] : weighted) total += w;
  d.items.reserve(weighted.size());
  if (total <= 0.0) {
    if (fallback_counter != nullptr) *fallback_counter += 1;
    const double p = 1.0 / static_cast<double>(weighted.size());
    double cum = 0.0;
    for (const auto& [item, w] : weighted) {
      cum += p;
      d.items.push_back(item);
      d.cumulative.push_back(cum);
    }
  } else {
    double cum = 0.0;
    for (const auto& [item, w] : weighted) {
      cum += w / total;
      d.items.push_back(item);
      d.cumulative.push_back(cum);
    }
  }
  d.cumulative.back() = 1.0;
  return d;
}

const std::string& draw(const SamplingTables::Dist& d, Rng& rng) {
  const double u = rng.uniform();
  const auto it = std::upper_bound(d.cumulative.begin(), d.cumulative.end(), u);
  const std::size_t idx = std::min<std::size_t>(it - d.cumulative.begin(), d.items.size() - 1);
  return d.items[idx];
}

struct StudentObservations {
  // kc -> problems that used it (deduplicated), and kc -> opportunity count
  std::map<std::string, std::set<std::string>> kc_problems;
  std::map<std::string, int> kc_opportunities;
};

std::map<std::string, StudentObservations> observe(const corpus::Corpus& corpus) {
  std::map<std::string, StudentObservations> by_student;
  for (const corpus::StrategyTrace& t : corpus.traces) {
    StudentObservations& obs = by_student[t.student_id];
    for (const std::string& kc : t.kcs) {
      obs.kc_problems[kc].insert(t.problem_id);
      obs.kc_opportunities[kc] += 1;
    }
  }
  return by_student;
}

}  // namespace

SamplingTables build_sampling_tables(const corpus::Corpus& corpus,
                                     const mastery::MasteryTable& mastery) {
  SamplingTables tables;
  const auto by_student = observe(corpus);
  for (const auto& [student, obs] : by_student) {
    std::vector<std::pair<std::string, double>> kc_weights;
    std::map<std::string, SamplingTables::Dist> problem_dists;
    for (const auto& [kc, problems] : obs.kc_problems) {
      double alpha_sum = 0.0;
      std::vector<std::pair<std::string, double>> problem_weights;
      for (const std::string& problem : problems) {
        const double a = mastery.lookup(student, problem, kc).value_or(0.0);
        alpha_sum += a;
        problem_weights.emplace_back(problem, a);
      }
      const int opportunities = obs.kc_opportunities.at(kc);
      kc_weights.emplace_back(kc, alpha_sum / static_cast<double>(opportunities));
      problem_dists[kc] = make_dist(problem_weights, &tables.uniform_fallbacks);
    }
    tables.students.push_back(student);
    tables.kc_given_student.push_back(make_dist(kc_weights, &tables.uniform_fallbacks));
    tables.problem_given.push_back(std::move(problem_dists));
  }
  return tables;
}

SamplingTables build_uniform_tables(const corpus::Corpus& corpus) {
  SamplingTables tables;
  const auto by_student = observe(corpus);
  for (const auto& [student, obs] : by_student) {
    std::vector<std::pair<std::string, double>> kc_weights;
    std::map<std::string, SamplingTables::Dist> problem_dists;
    for (const auto& [kc, problems] : obs.kc_problems) {
      kc_weights.emplace_back(kc, 1.0);
      std::vector<std::pair<std::string, double>> problem_weights;
      for (const std::string& problem : problems) problem_weights.emplace_back(problem, 1.0);
      problem_dists[kc] = make_dist(problem_weights, nullptr);
    }
    tables.students.push_back(student);
    tables.kc_given_student.push_back(make_dist(kc_weights, nullptr));
    tables.problem_given.push_back(std::move(problem_dists));
  }
  return tables;
}

std::vector<Walk> sample_walks(const SamplingTables& tables, long long n_walks,
                               std::uint64_t seed) {
  if (n_walks < 0) throw std::invalid_argument("n_walks must be >= 0");
  std::vector<Walk> walks;
  walks.reserve(static_cast<std::size_t>(n_walks));
  if (tables.students.empty()) {
    if (n_walks > 0) throw std::runtime_error("cannot sample walks from empty tables");
    return walks;
  }
  Rng rng(mix_seed(seed, 0x3A1C5));
  for (long long t = 0; t < n_walks; ++t) {
    const std::size_t si = rng.index(tables.students.size());
    const std::string& kc = draw(tables.kc_given_student[si], rng);
    const std::string& problem = draw(tables.problem_given[si].at(kc), rng);
    walks.push_back({tables.students[si], kc, problem});
  }
  return walks;
}

EmbeddingSet train_skipgram(const std::vector<Walk>& walks, const WalkConfig& config) {
  if (walks.empty()) throw std::invalid_argument("train_skipgram requires nonempty walks");
  if (config.dim < 1 || config.window < 2 || config.negatives < 0 || config.sg_epochs < 1) {
    throw std::invalid_argument("bad walk config");
  }

  // Node vocabulary, tagged by kind, in deterministic order.
  std::map<std::pair<int, std::string>, int> vocab;
  std::vector<std::pair<int, std::string>> nodes;
  std::vector<long long> counts;
  auto intern = [&](NodeKind kind, const std::string& id) {
    auto key = std::make_pair(static_cast<int>(kind), id);
    auto it = vocab.find(key);
    if (it == vocab.end()) {
      it = vocab.emplace(key, static_cast<int>(nodes.size())).first;
      nodes.push_back(key);
      counts.push_back(0);
    }
    counts[it->second] += 1;
    return it->second;
  };
  std::vector<std::array<int, 3>> encoded;
  encoded.reserve(walks.size());
  for (const Walk& w : walks) {
    encoded.push_back({intern(NodeKind::Student, w.student), intern(NodeKind::Kc, w.kc),
                       intern(NodeKind::Problem, w.problem)});
  }
  const int n = static_cast<int>(nodes.size());
  const int d = config.dim;

  // Unigram^(3/4) table for negative sampling.
  std::vector<double> neg_cum(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    total += std::pow(static_cast<double>(counts[i]), 0.75);
    neg_cum[i] = total;
  }
  for (double& v : neg_cum) v /= total;
  Rng rng(mix_seed(config.seed, 0x5C1B));
  auto draw_negative = [&]() {
    const double u = rng.uniform();
    const auto it = std::upper_bound(neg_cum.begin(), neg_cum.end(), u);
    return static_cast<int>(std::min<std::size_t>(it - neg_cum.begin(), n - 1));
  };

  std::vector<double> syn0(static_cast<std::size_t>(n) * d);
  std::vector<double> syn1(static_cast<std::size_t>(n) * d, 0.0);
  for (double& v : syn0) v = (rng.uniform() - 0.5) / d;

  const long long pairs_per_epoch = static_cast<long long>(encoded.size()) * 6;  // 3 centers x 2
  const long long total_pairs = pairs_per_epoch * config.sg_epochs;
  long long seen = 0;
  std::vector<double> accum(d);
  std::vector<std::size_t> order(encoded.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.sg_epochs; ++epoch) {
    rng.shuffle(order);
    for (const std::size_t wi : order) {
      const std::array<int, 3>& path = encoded[wi];
      for (int center = 0; center < 3; ++center) {
        for (int context = 0; context < 3; ++context) {
          if (context == center || std::abs(context - center) > config.window) continue;
          const double lr = std::max(
              config.learning_rate * (1.0 - static_cast<double>(seen) / total_pairs),
              config.learning_rate * 1e-4);
          ++seen;
          double* in = &syn0[static_cast<std::size_t>(path[center]) * d];
          std::fill(accum.begin(), accum.end(), 0.0);
          for (int k = 0; k <= config.negatives; ++k) {
            int target;
            double label;
            if (k == 0) {
              target = path[context];
              label = 1.0;
            } else {
              target = draw_negative();
              if (target == path[context]) continue;
              label = 0.0;
            }
            double* out = &syn1[static_cast<std::size_t>(target) * d];
            double dot = 0.0;
            for (int idx = 0; idx < d; ++idx) dot += in[idx] * out[idx];
            const double f = 1.0 / (1.0 + std::exp(-dot));
            const double g = (label - f) * lr;
            for (int idx = 0; idx < d; ++idx) {
              accum[idx] += g * out[idx];
              out[idx] += g * in[idx];
            }
          }
          for (int idx = 0; idx < d; ++idx) in[idx] += accum[idx];
        }
      }
    }
  }

  EmbeddingSet set;
  set.dim = d;
  for (int i = 0; i < n; ++i) {
    std::vector<double> v(syn0.begin() + static_cast<std::size_t>(i) * d,
                          syn0.begin() + static_cast<std::size_t>(i + 1) * d);
    for (double x : v) {
      if (!std::isfinite(x)) throw std::runtime_error("non-finite embedding for " + nodes[i].second);
    }
    set.vectors.emplace(nodes[i], std::move(v));
  }
  return set;
}

EmbeddingSet generate_embeddings(const corpus::Corpus& corpus,
                                 const mastery::MasteryTable* mastery, const WalkConfig& config) {
  const SamplingTables tables =
      mastery != nullptr ? build_sampling_tables(corpus, *mastery) : build_uniform_tables(corpus);
  const long long n_walks =
      config.n_walks >= 0 ? config.n_walks : 50LL * static_cast<long long>(corpus.traces.size());
  const std::vector<Walk> walks = sample_walks(tables, n_walks, config.seed);
  return train_skipgram(walks, config);
}

}  // namespace stratpred::embedding
