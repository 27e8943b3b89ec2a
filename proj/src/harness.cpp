#include "stratpred/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "stratpred/rng.hpp"

namespace stratpred::harness {

namespace {

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double elapsed_s(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

corpus::Corpus corpus_from_traces(const std::vector<const corpus::StrategyTrace*>& traces) {
  std::vector<corpus::TransactionRecord> records;
  corpus::Corpus tmp;
  for (const auto* t : traces) tmp.traces.push_back(*t);
  return corpus::consolidate(corpus::to_transactions(tmp));
}

}  // namespace

std::string method_name(SamplingMethod m) {
  switch (m) {
    case SamplingMethod::ClusterRoundRobin: return "as";
    case SamplingMethod::GroupProportional: return "gs";
    case SamplingMethod::UniformRandom: return "rs";
    case SamplingMethod::RandomClusters: return "ns";
  }
  return "?";
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::NoSymmetry: return "ns";
    case Ablation::Symmetry: return "ss";
    case Ablation::SymmetryMastery: return "ssms";
  }
  return "?";
}

std::optional<SamplingMethod> parse_method(const std::string& name) {
  if (name == "as") return SamplingMethod::ClusterRoundRobin;
  if (name == "gs") return SamplingMethod::GroupProportional;
  if (name == "rs") return SamplingMethod::UniformRandom;
  if (name == "ns") return SamplingMethod::RandomClusters;
  return std::nullopt;
}

std::optional<Ablation> parse_ablation(const std::string& name) {
  if (name == "ns") return Ablation::NoSymmetry;
  if (name == "ss") return Ablation::Symmetry;
  if (name == "ssms") return Ablation::SymmetryMastery;
  return std::nullopt;
}

std::pair<corpus::Corpus, corpus::Corpus> split_corpus(const corpus::Corpus& corpus,
                                                       double test_fraction, std::uint64_t seed) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0) {
    throw std::invalid_argument("test_fraction must be in (0,1)");
  }
  std::map<std::string, std::vector<const corpus::StrategyTrace*>> by_student;
  for (const auto& t : corpus.traces) by_student[t.student_id].push_back(&t);

  std::vector<const corpus::StrategyTrace*> train, test;
  for (const auto& [student, traces] : by_student) {
    if (traces.size() < 2) {
      train.insert(train.end(), traces.begin(), traces.end());
      continue;
    }
    std::vector<const corpus::StrategyTrace*> shuffled = traces;
    Rng rng(mix_seed(seed, hash_string(student)));
    rng.shuffle(shuffled);
    std::size_t n_test = static_cast<std::size_t>(
        std::lround(test_fraction * static_cast<double>(traces.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, traces.size() - 1);
    test.insert(test.end(), shuffled.begin(), shuffled.begin() + n_test);
    train.insert(train.end(), shuffled.begin() + n_test, shuffled.end());
  }
  return {corpus_from_traces(train), corpus_from_traces(test)};
}

clustering::ClusterModel make_random_clusters(const corpus::Corpus& corpus, int n_global,
                                              std::uint64_t seed) {
  if (n_global < 1) throw std::invalid_argument("n_global must be >= 1");
  clustering::ClusterModel model;
  model.lambda_local = 0.0;
  model.lambda_global = 0.0;
  model.ids = {corpus.students, corpus.problems};
  model.global_centers.assign(n_global, {});
  Rng rng(mix_seed(seed, 0xBADC));
  for (int j = 0; j < 2; ++j) {
    // One local cluster per global per dataset.
    model.local_global[j].resize(n_global);
    std::iota(model.local_global[j].begin(), model.local_global[j].end(), 0);
    model.point_local[j].resize(model.ids[j].size());
    for (std::size_t i = 0; i < model.ids[j].size(); ++i) {
      model.point_local[j][i] = static_cast<int>(rng.index(n_global));
    }
  }
  return model;
}

std::vector<const corpus::StrategyTrace*> sample_training_set(
    const corpus::Corpus& train, SamplingMethod method, std::size_t budget,
    const clustering::ClusterModel* clusters, std::uint64_t seed) {
  if (budget > train.traces.size()) {
    throw std::invalid_argument("budget " + std::to_string(budget) + " exceeds training set size " +
                                std::to_string(train.traces.size()));
  }
  const bool needs_clusters =
      method == SamplingMethod::ClusterRoundRobin || method == SamplingMethod::RandomClusters;
  if (needs_clusters && clusters == nullptr) {
    throw std::invalid_argument("cluster-based sampling requires a cluster model");
  }
  Rng rng(mix_seed(seed, 0x5a17));
  std::vector<const corpus::StrategyTrace*> out;
  out.reserve(budget);

  if (method == SamplingMethod::UniformRandom) {
    std::vector<const corpus::StrategyTrace*> all;
    for (const auto& t : train.traces) all.push_back(&t);
    rng.shuffle(all);
    out.assign(all.begin(), all.begin() + budget);
    return out;
  }

  if (method == SamplingMethod::GroupProportional) {
    // Students keep their full-trace-count weight until exhausted.
    std::map<std::string, std::vector<const corpus::StrategyTrace*>> remaining;
    for (const auto& t : train.traces) remaining[t.student_id].push_back(&t);
    std::vector<std::string> students;
    std::vector<double> weights;
    for (const auto& [student, traces] : remaining) {
      students.push_back(student);
      weights.push_back(static_cast<double>(traces.size()));
    }
    while (out.size() < budget) {
      double total = 0.0;
      for (std::size_t i = 0; i < students.size(); ++i) {
        if (!remaining[students[i]].empty()) total += weights[i];
      }
      double u = rng.uniform() * total;
      std::size_t chosen = 0;
      for (std::size_t i = 0; i < students.size(); ++i) {
        if (remaining[students[i]].empty()) continue;
        chosen = i;
        u -= weights[i];
        if (u <= 0.0) break;
      }
      auto& pool = remaining[students[chosen]];
      const std::size_t pick = rng.index(pool.size());
      out.push_back(pool[pick]);
      pool.erase(pool.begin() + pick);
    }
    return out;
  }

  // Cluster round-robin: each trace belongs to one bucket -- the shared global
  // cluster when student and problem agree, else the student's side.
  const int n_global = std::max(clusters->n_global(), 1);
  std::vector<std::vector<const corpus::StrategyTrace*>> buckets(n_global);
  for (const auto& t : train.traces) {
    const int si = clusters->index_of(clustering::kStudents, t.student_id);
    const int pi = clusters->index_of(clustering::kProblems, t.problem_id);
    int g = 0;
    if (si >= 0) {
      g = clusters->global_of(clustering::kStudents, si);
    } else if (pi >= 0) {
      g = clusters->global_of(clustering::kProblems, pi);
    }
    buckets[g].push_back(&t);
  }
  for (auto& b : buckets) rng.shuffle(b);
  std::vector<std::size_t> cursor(buckets.size(), 0);
  while (out.size() < budget) {
    bool advanced = false;
    for (std::size_t g = 0; g < buckets.size() && out.size() < budget; ++g) {
      if (cursor[g] < buckets[g].size()) {
        out.push_back(buckets[g][cursor[g]++]);
        advanced = true;
      }
    }
    if (!advanced) break;
  }
  return out;
}

SweepResult run_experiment(const corpus::Corpus& corpus, SamplingMethod method,
                           const std::vector<std::size_t>& budgets, Ablation ablation,
                           const ExperimentConfigs& configs, std::uint64_t seed) {
  SweepResult result;
  auto [train, test] = split_corpus(corpus, configs.test_fraction, mix_seed(seed, 0x711));

  std::map<std::string, double> stage_seconds;
  auto timed = [&](const char* stage, auto&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto value = fn();
    stage_seconds[stage] += elapsed_s(start);
    return value;
  };

  // Representation per the ablation: the mastery table only feeds the
  // mastery-weighted variant.
  const mastery::MasteryTable* mastery_ptr = nullptr;
  mastery::MasteryTable mastery_table;
  if (ablation == Ablation::SymmetryMastery) {
    mastery_table = timed("mastery", [&] {
      const auto pairs = mastery::build_training_set(train);
      const auto model = mastery::train_cfa_model(pairs, configs.mastery, mix_seed(seed, 0x3A));
      return mastery::compute_alpha(model, train);
    });
    mastery_ptr = &mastery_table;
  }
  embedding::WalkConfig walk_cfg = configs.walk;
  walk_cfg.seed = mix_seed(seed, 0x3B);
  const embedding::EmbeddingSet embeddings =
      timed("embed", [&] { return embedding::generate_embeddings(train, mastery_ptr, walk_cfg); });

  const bool needs_clusters =
      method == SamplingMethod::ClusterRoundRobin || method == SamplingMethod::RandomClusters;
  const bool random_clusters =
      method == SamplingMethod::RandomClusters || ablation == Ablation::NoSymmetry;
  clustering::ClusterModel cluster_model;
  if (needs_clusters) {
    cluster_model = timed("cluster", [&] {
      if (random_clusters) {
        return make_random_clusters(train, configs.random_clusters, mix_seed(seed, 0x3C));
      }
      clustering::RefinementConfig refine = configs.refine;
      refine.seed = mix_seed(seed, 0x3C);
      return clustering::coarse_to_fine(train, embeddings, refine);
    });
  }

  for (const std::size_t budget : budgets) {
    SweepCell cell;
    cell.budget = budget;
    cell.method = method_name(method);
    cell.ablation = ablation_name(ablation);
    cell.train_size = train.traces.size();
    cell.test_size = test.traces.size();
    for (int run = 0; run < configs.n_runs; ++run) {
      const std::uint64_t run_seed = mix_seed(seed, mix_seed(budget, 0x100 + run));
      const auto samples = timed("sample", [&] {
        return sample_training_set(train, method, budget,
                                   needs_clusters ? &cluster_model : nullptr, run_seed);
      });
      const auto model = timed("train", [&] {
        return predictor::train_predictor(samples, embeddings, configs.predictor,
                                          mix_seed(run_seed, 0x200));
      });
      const double accuracy = timed("eval", [&] {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& t : test.traces) {
          if (embeddings.find(embedding::NodeKind::Student, t.student_id) == nullptr ||
              embeddings.find(embedding::NodeKind::Problem, t.problem_id) == nullptr) {
            cell.skipped_test_traces += 1;
            continue;
          }
          const auto pred = predictor::predict(model, t.student_id, t.problem_id, embeddings);
          sum += predictor::step_accuracy(pred.kcs, t.kcs);
          ++n;
        }
        return n > 0 ? sum / static_cast<double>(n) : 0.0;
      });
      cell.run_accuracies.push_back(accuracy);
    }
    cell.mean_accuracy =
        std::accumulate(cell.run_accuracies.begin(), cell.run_accuracies.end(), 0.0) /
        static_cast<double>(cell.run_accuracies.size());
    cell.stage_seconds = stage_seconds;
    result.cells.push_back(std::move(cell));
  }
  return result;
}

void write_sweep_json(std::ostream& out, const SweepResult& result, bool include_timings) {
  nlohmann::ordered_json doc;
  doc["cells"] = nlohmann::ordered_json::array();
  for (const SweepCell& c : result.cells) {
    nlohmann::ordered_json jc;
    jc["budget"] = c.budget;
    jc["method"] = c.method;
    jc["ablation"] = c.ablation;
    jc["mean_accuracy"] = c.mean_accuracy;
    jc["run_accuracies"] = c.run_accuracies;
    jc["train_size"] = c.train_size;
    jc["test_size"] = c.test_size;
    jc["skipped_test_traces"] = c.skipped_test_traces;
    if (include_timings) jc["stage_seconds"] = c.stage_seconds;
    doc["cells"].push_back(std::move(jc));
  }
  out << doc.dump(2) << "\n";
}

void write_sweep_csv(std::ostream& out, const SweepResult& result, bool include_timings) {
  out << "budget,method,ablation,mean_accuracy,run_accuracies,train_size,test_size,skipped";
  if (include_timings) out << ",stage_seconds";
  out << "\n";
  char buf[64];
  for (const SweepCell& c : result.cells) {
    std::snprintf(buf, sizeof(buf), "%.6f", c.mean_accuracy);
    out << c.budget << ',' << c.method << ',' << c.ablation << ',' << buf << ',';
    for (std::size_t i = 0; i < c.run_accuracies.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.6f", c.run_accuracies[i]);
      out << (i ? ";" : "") << buf;
    }
    out << ',' << c.train_size << ',' << c.test_size << ',' << c.skipped_test_traces;
    if (include_timings) {
      out << ',';
      bool first = true;
      for (const auto& [stage, secs] : c.stage_seconds) {
        std::snprintf(buf, sizeof(buf), "%s=%.3f", stage.c_str(), secs);
        out << (first ? "" : ";") << buf;
        first = false;
      }
    }
    out << "\n";
  }
}

double normalized_edit_distance(const std::vector<std::string>& a,
                                const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  if (n == 0 && m == 0) return 0.0;
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m));
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("label vectors differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, long long> joint;
  std::map<int, long long> ca, cb;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{a[i], b[i]}] += 1;
    ca[a[i]] += 1;
    cb[b[i]] += 1;
  }
  auto comb2 = [](long long k) { return static_cast<double>(k) * (k - 1) / 2.0; };
  double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [k, v] : joint) sum_joint += comb2(v);
  for (const auto& [k, v] : ca) sum_a += comb2(v);
  for (const auto& [k, v] : cb) sum_b += comb2(v);
  const double total = comb2(static_cast<long long>(n));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

FairnessReport fairness_report(const predictor::PredictorModel& model,
                               const corpus::Corpus& test,
                               const embedding::EmbeddingSet& embeddings) {
  FairnessReport report;

  struct StudentStats {
    double accuracy_sum = 0.0;
    int evaluated = 0;
    int steps = 0;
    int correct_steps = 0;
  };
  std::map<std::string, StudentStats> per_student;
  std::map<std::string, std::vector<double>> section_accuracies;
  std::map<std::string, std::vector<const corpus::StrategyTrace*>> section_traces;

  for (const auto& t : test.traces) {
    StudentStats& st = per_student[t.student_id];
    st.steps += static_cast<int>(t.cfas.size());
    for (int cfa : t.cfas) st.correct_steps += cfa;
    section_traces[t.section_id].push_back(&t);
    if (embeddings.find(embedding::NodeKind::Student, t.student_id) == nullptr ||
        embeddings.find(embedding::NodeKind::Problem, t.problem_id) == nullptr) {
      report.skipped_traces += 1;
      continue;
    }
    const auto pred = predictor::predict(model, t.student_id, t.problem_id, embeddings);
    const double acc = predictor::step_accuracy(pred.kcs, t.kcs);
    st.accuracy_sum += acc;
    st.evaluated += 1;
    section_accuracies[t.section_id].push_back(acc);
  }

  // Performance groups over the share of steps correct on first attempt:
  // first bucket closed, the rest left-open right-closed.
  struct Bucket {
    const char* label;
    double lo, hi;
  };
  const Bucket perf_buckets[5] = {{"<=30%", 0.0, 0.3},
                                  {"30-50%", 0.3, 0.5},
                                  {"50-70%", 0.5, 0.7},
                                  {"70-90%", 0.7, 0.9},
                                  {">=90%", 0.9, 1.0}};
  std::vector<double> group_sums(5, 0.0);
  std::vector<int> group_counts(5, 0);
  for (const auto& [student, st] : per_student) {
    if (st.evaluated == 0 || st.steps == 0) continue;
    const double rate = static_cast<double>(st.correct_steps) / st.steps;
    int g = 0;
    for (int i = 0; i < 5; ++i) {
      if (i == 0 ? rate <= perf_buckets[i].hi
                 : rate > perf_buckets[i].lo && rate <= perf_buckets[i].hi) {
        g = i;
        break;
      }
    }
    group_sums[g] += st.accuracy_sum / st.evaluated;
    group_counts[g] += 1;
  }
  double pmax = -1.0, pmin = 2.0;
  for (int i = 0; i < 5; ++i) {
    if (group_counts[i] == 0) continue;
    FairnessGroup g;
    g.label = perf_buckets[i].label;
    g.count = group_counts[i];
    g.accuracy = group_sums[i] / group_counts[i];
    report.performance_groups.push_back(g);
    pmax = std::max(pmax, g.accuracy);
    pmin = std::min(pmin, g.accuracy);
  }
  report.performance_disparity = report.performance_groups.empty() ? 0.0 : pmax - pmin;

  // Variance groups: per-section population variance of pairwise normalized
  // edit distances, sections bucketed at five equal-width thresholds.
  std::map<std::string, double> section_variance;
  for (const auto& [section, traces] : section_traces) {
    std::vector<double> dists;
    const std::size_t n = traces.size();
    if (n >= 2) {
      // Stride over pairs when a section is huge; deterministic.
      const std::size_t all_pairs = n * (n - 1) / 2;
      const std::size_t stride = all_pairs > 20000 ? all_pairs / 20000 : 1;
      std::size_t index = 0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j, ++index) {
          if (index % stride != 0) continue;
          dists.push_back(normalized_edit_distance(traces[i]->kcs, traces[j]->kcs));
        }
      }
    }
    if (dists.empty()) {
      section_variance[section] = 0.0;
      continue;
    }
    double mean = 0.0;
    for (double d : dists) mean += d;
    mean /= static_cast<double>(dists.size());
    double var = 0.0;
    for (double d : dists) var += (d - mean) * (d - mean);
    section_variance[section] = var / static_cast<double>(dists.size());
  }
  double vmax = 0.0;
  for (const auto& [sec, v] : section_variance) vmax = std::max(vmax, v);
  std::vector<double> vsums(5, 0.0);
  std::vector<int> vtraces(5, 0);
  std::vector<int> vsections(5, 0);
  for (const auto& [section, var] : section_variance) {
    int bucket = vmax > 0.0 ? std::min(4, static_cast<int>(var / vmax * 5.0)) : 0;
    const auto& accs = section_accuracies[section];
    vsections[bucket] += 1;
    for (double a : accs) {
      vsums[bucket] += a;
      vtraces[bucket] += 1;
    }
  }
  double vmax_acc = -1.0, vmin_acc = 2.0;
  for (int i = 0; i < 5; ++i) {
    if (vtraces[i] == 0) continue;
    FairnessGroup g;
    char label[64];
    std::snprintf(label, sizeof(label), "var[%.3f,%.3f)", vmax * i / 5.0, vmax * (i + 1) / 5.0);
    g.label = label;
    g.count = vsections[i];
    g.traces = vtraces[i];
    g.accuracy = vsums[i] / vtraces[i];
    report.variance_groups.push_back(g);
    vmax_acc = std::max(vmax_acc, g.accuracy);
    vmin_acc = std::min(vmin_acc, g.accuracy);
  }
  report.variance_disparity = report.variance_groups.empty() ? 0.0 : vmax_acc - vmin_acc;
  return report;
}

void write_fairness_json(std::ostream& out, const FairnessReport& report) {
  nlohmann::ordered_json doc;
  auto groups_to_json = [](const std::vector<FairnessGroup>& groups) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const FairnessGroup& g : groups) {
      arr.push_back({{"label", g.label}, {"count", g.count}, {"traces", g.traces},
                     {"accuracy", g.accuracy}});
    }
    return arr;
  };
  doc["performance_groups"] = groups_to_json(report.performance_groups);
  doc["performance_disparity"] = report.performance_disparity;
  doc["variance_groups"] = groups_to_json(report.variance_groups);
  doc["variance_disparity"] = report.variance_disparity;
  doc["skipped_traces"] = report.skipped_traces;
  out << doc.dump(2) << "\n";
}

void write_fairness_csv(std::ostream& out, const FairnessReport& report) {
  out << "grouping,label,count,traces,accuracy\n";
  char buf[64];
  for (const FairnessGroup& g : report.performance_groups) {
    std::snprintf(buf, sizeof(buf), "%.6f", g.accuracy);
    out << "performance," << g.label << ',' << g.count << ',' << g.traces << ',' << buf << "\n";
  }
  for (const FairnessGroup& g : report.variance_groups) {
    std::snprintf(buf, sizeof(buf), "%.6f", g.accuracy);
    out << "variance," << g.label << ',' << g.count << ',' << g.traces << ',' << buf << "\n";
  }
}

}  // namespace stratpred::harness
