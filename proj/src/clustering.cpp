#include "stratpred/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "stratpred/rng.hpp"
#include "stratpred/symmetry.hpp"

namespace stratpred::clustering {

namespace {

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<double> mean_of(const std::vector<const std::vector<double>*>& pts) {
  std::vector<double> m(pts.front()->size(), 0.0);
  for (const auto* p : pts)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += (*p)[i];
  for (double& v : m) v /= static_cast<double>(pts.size());
  return m;
}

LabeledPoints sorted_copy(const LabeledPoints& in) {
  std::vector<std::size_t> order(in.ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return in.ids[a] < in.ids[b]; });
  LabeledPoints out;
  out.ids.reserve(in.ids.size());
  out.points.reserve(in.points.size());
  for (std::size_t i : order) {
    out.ids.push_back(in.ids[i]);
    out.points.push_back(in.points[i]);
  }
  return out;
}

}  // namespace

int ClusterModel::index_of(int dataset, const std::string& id) const {
  const auto& v = ids[dataset];
  auto it = std::lower_bound(v.begin(), v.end(), id);
  if (it != v.end() && *it == id) return static_cast<int>(it - v.begin());
  return -1;
}

double recompute_objective(const ClusterModel& model, const LabeledPoints& students,
                           const LabeledPoints& problems) {
  const std::array<const LabeledPoints*, 2> data = {&students, &problems};
  // Means per global cluster from scratch; inputs may be in any order, so go
  // through the model's id list.
  std::vector<std::vector<const std::vector<double>*>> members(model.n_global());
  for (int j = 0; j < 2; ++j) {
    std::map<std::string, const std::vector<double>*> by_id;
    for (std::size_t i = 0; i < data[j]->ids.size(); ++i)
      by_id[data[j]->ids[i]] = &data[j]->points[i];
    for (std::size_t i = 0; i < model.ids[j].size(); ++i) {
      auto it = by_id.find(model.ids[j][i]);
      if (it == by_id.end())
        throw std::invalid_argument("recompute_objective: unknown id " + model.ids[j][i]);
      members[model.global_of(j, static_cast<int>(i))].push_back(it->second);
    }
  }
  double obj = 0.0;
  for (int p = 0; p < model.n_global(); ++p) {
    if (members[p].empty()) continue;
    const std::vector<double> mu = mean_of(members[p]);
    for (const auto* x : members[p]) obj += sqdist(*x, mu);
  }
  obj += model.lambda_local * model.n_local_total();
  obj += model.lambda_global * model.n_global();
  return obj;
}

ClusterModel dp_means_hdp(const LabeledPoints& students_in, const LabeledPoints& problems_in,
                          double lambda_local, double lambda_global,
                          std::vector<double>* objective_trace) {
  if (lambda_local <= 0.0 || lambda_global <= 0.0) {
    throw std::invalid_argument("cluster penalties must be positive");
  }
  const LabeledPoints students = sorted_copy(students_in);
  const LabeledPoints problems = sorted_copy(problems_in);
  const std::array<const LabeledPoints*, 2> data = {&students, &problems};
  const std::size_t total = students.points.size() + problems.points.size();

  ClusterModel model;
  model.lambda_local = lambda_local;
  model.lambda_global = lambda_global;
  model.ids = {students.ids, problems.ids};
  if (total == 0) return model;
  const std::size_t dim =
      !students.points.empty() ? students.points[0].size() : problems.points[0].size();
  for (int j = 0; j < 2; ++j)
    for (const auto& p : data[j]->points)
      if (p.size() != dim) throw std::invalid_argument("cluster points must share one dimension");

  // Start from a single global cluster holding one local cluster per
  // non-empty dataset, centered at the grand mean.
  std::array<std::vector<int>, 2> z;       // point -> local
  std::array<std::vector<int>, 2> v;       // local -> global
  std::vector<std::vector<double>> centers;
  {
    std::vector<const std::vector<double>*> all;
    for (int j = 0; j < 2; ++j)
      for (const auto& p : data[j]->points) all.push_back(&p);
    centers.push_back(mean_of(all));
  }
  for (int j = 0; j < 2; ++j) {
    z[j].assign(data[j]->points.size(), 0);
    if (!data[j]->points.empty()) v[j] = {0};
  }

  double prev_objective = std::numeric_limits<double>::infinity();
  constexpr int kMaxPasses = 100;
  for (int pass = 0; pass < kMaxPasses; ++pass) {
    bool changed = false;

    // Pass over points.
    for (int j = 0; j < 2; ++j) {
      for (std::size_t i = 0; i < data[j]->points.size(); ++i) {
        const std::vector<double>& x = data[j]->points[i];
        const int g = static_cast<int>(centers.size());
        // Which globals already host a local cluster of this dataset?
        std::vector<char> has_local(g, 0);
        for (int c = 0; c < static_cast<int>(v[j].size()); ++c) has_local[v[j][c]] = 1;
        double best_d = std::numeric_limits<double>::infinity();
        int best_p = -1;
        for (int p = 0; p < g; ++p) {
          double d = sqdist(x, centers[p]);
          if (!has_local[p]) d += lambda_local;
          if (d < best_d) {
            best_d = d;
            best_p = p;
          }
        }
        if (best_d > lambda_local + lambda_global) {
          const int c = static_cast<int>(v[j].size());
          v[j].push_back(static_cast<int>(centers.size()));
          centers.push_back(x);
          z[j][i] = c;
          changed = true;
        } else {
          int c_target = -1;
          for (int c = 0; c < static_cast<int>(v[j].size()); ++c) {
            if (v[j][c] == best_p) {
              c_target = c;
              break;
            }
          }
          if (c_target < 0) {
            c_target = static_cast<int>(v[j].size());
            v[j].push_back(best_p);
            changed = true;
          }
          if (z[j][i] != c_target) {
            z[j][i] = c_target;
            changed = true;
          }
        }
      }
    }

    // Refresh global means before judging local clusters; the point pass can
    // leave centers far from their current membership.
    {
      std::vector<std::vector<const std::vector<double>*>> members(centers.size());
      for (int j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < data[j]->points.size(); ++i)
          members[v[j][z[j][i]]].push_back(&data[j]->points[i]);
      for (std::size_t p = 0; p < centers.size(); ++p)
        if (!members[p].empty()) centers[p] = mean_of(members[p]);
    }

    // Pass over local clusters.
    for (int j = 0; j < 2; ++j) {
      for (int c = 0; c < static_cast<int>(v[j].size()); ++c) {
        std::vector<const std::vector<double>*> pts;
        for (std::size_t i = 0; i < data[j]->points.size(); ++i)
          if (z[j][i] == c) pts.push_back(&data[j]->points[i]);
        if (pts.empty()) continue;
        const std::vector<double> local_mean = mean_of(pts);
        double within = 0.0;
        for (const auto* x : pts) within += sqdist(*x, local_mean);
        double best_d = std::numeric_limits<double>::infinity();
        int best_p = -1;
        for (int p = 0; p < static_cast<int>(centers.size()); ++p) {
          double d = 0.0;
          for (const auto* x : pts) d += sqdist(*x, centers[p]);
          if (d < best_d) {
            best_d = d;
            best_p = p;
          }
        }
        if (best_d > lambda_global + within) {
          v[j][c] = static_cast<int>(centers.size());
          centers.push_back(local_mean);
          changed = true;
        } else if (v[j][c] != best_p) {
          v[j][c] = best_p;
          changed = true;
        }
      }
    }

    // Prune empty local clusters, then orphaned globals, then refresh means.
    for (int j = 0; j < 2; ++j) {
      std::vector<int> count(v[j].size(), 0);
      for (int zi : z[j]) count[zi] += 1;
      std::vector<int> remap(v[j].size(), -1);
      std::vector<int> keep;
      for (int c = 0; c < static_cast<int>(v[j].size()); ++c) {
        if (count[c] > 0) {
          remap[c] = static_cast<int>(keep.size());
          keep.push_back(v[j][c]);
        } else {
          changed = true;
        }
      }
      for (int& zi : z[j]) zi = remap[zi];
      v[j] = keep;
    }
    {
      std::vector<char> used(centers.size(), 0);
      for (int j = 0; j < 2; ++j)
        for (int g : v[j]) used[g] = 1;
      std::vector<int> remap(centers.size(), -1);
      std::vector<std::vector<double>> kept;
      for (int p = 0; p < static_cast<int>(centers.size()); ++p) {
        if (used[p]) {
          remap[p] = static_cast<int>(kept.size());
          kept.push_back(centers[p]);
        } else {
          changed = true;
        }
      }
      for (int j = 0; j < 2; ++j)
        for (int& g : v[j]) g = remap[g];
      centers = kept;
    }
    {
      std::vector<std::vector<const std::vector<double>*>> members(centers.size());
      for (int j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < data[j]->points.size(); ++i)
          members[v[j][z[j][i]]].push_back(&data[j]->points[i]);
      for (std::size_t p = 0; p < centers.size(); ++p)
        if (!members[p].empty()) centers[p] = mean_of(members[p]);
    }

    // Track the objective and enforce monotone descent.
    model.point_local = z;
    model.local_global = v;
    model.global_centers = centers;
    const double obj = recompute_objective(model, students, problems);
    if (obj > prev_objective + 1e-9) {
      throw std::runtime_error("clustering objective increased: " + std::to_string(prev_objective) +
                               " -> " + std::to_string(obj));
    }
    prev_objective = obj;
    model.objective = obj;
    if (objective_trace != nullptr) objective_trace->push_back(obj);
    if (!changed) break;
  }
  return model;
}

std::size_t select_best_iteration(const std::vector<double>& coherence_history) {
  if (coherence_history.empty()) throw std::invalid_argument("empty coherence history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < coherence_history.size(); ++i)
    if (coherence_history[i] > coherence_history[best]) best = i;
  return best;
}

LabeledPoints points_of_kind(const embedding::EmbeddingSet& embeddings,
                             embedding::NodeKind kind) {
  LabeledPoints out;
  for (const auto& [key, vec] : embeddings.vectors) {
    if (key.first == static_cast<int>(kind)) {
      out.ids.push_back(key.second);
      out.points.push_back(vec);
    }
  }
  return out;
}

namespace {

// Step vectors for coherence scoring: KC embedding plus position code. A KC
// missing from the embedding set contributes its position code alone.
symmetry::PositionalStrategy positional_of(const corpus::StrategyTrace& trace,
                                           const embedding::EmbeddingSet& embeddings,
                                           const symmetry::PositionalEncodingTable& table) {
  symmetry::PositionalStrategy s;
  s.steps.reserve(trace.kcs.size());
  for (std::size_t t = 0; t < trace.kcs.size(); ++t) {
    std::vector<double> v = table.row(static_cast<int>(t));
    if (const std::vector<double>* e =
            embeddings.find(embedding::NodeKind::Kc, trace.kcs[t])) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += (*e)[i];
    }
    s.steps.push_back(std::move(v));
  }
  return s;
}

}  // namespace

ClusterModel coarse_to_fine(const corpus::Corpus& corpus,
                            const embedding::EmbeddingSet& embeddings,
                            const RefinementConfig& config) {
  if (config.lambda_local <= 0.0 || config.lambda_global0 <= 0.0 || config.epsilon <= 0.0) {
    throw std::invalid_argument("refinement penalties and epsilon must be positive");
  }
  for (const std::string& s : corpus.students)
    if (embeddings.find(embedding::NodeKind::Student, s) == nullptr)
      throw std::runtime_error("no embedding for student \"" + s + "\"");
  for (const std::string& p : corpus.problems)
    if (embeddings.find(embedding::NodeKind::Problem, p) == nullptr)
      throw std::runtime_error("no embedding for problem \"" + p + "\"");

  LabeledPoints student_points = points_of_kind(embeddings, embedding::NodeKind::Student);
  LabeledPoints problem_points = points_of_kind(embeddings, embedding::NodeKind::Problem);
  if (config.normalize) {
    for (LabeledPoints* pts : {&student_points, &problem_points}) {
      for (auto& p : pts->points) {
        double norm = 0.0;
        for (double v : p) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 0.0) {
          for (double& v : p) v /= norm;
        }
      }
    }
  }

  std::size_t max_len = 1;
  for (const auto& t : corpus.traces) max_len = std::max(max_len, t.kcs.size());
  const symmetry::PositionalEncodingTable pe_table(static_cast<int>(max_len), embeddings.dim);

  std::vector<double> history;
  std::vector<ClusterModel> models;
  double lambda_g = config.lambda_global0;
  for (int t = 0; t < config.max_iterations; ++t) {
    if (lambda_g <= 0.0) break;
    ClusterModel model = dp_means_hdp(student_points, problem_points, config.lambda_local,
                                      lambda_g);
    std::vector<std::vector<const corpus::StrategyTrace*>> cluster_traces(model.n_global());
    for (int p = 0; p < model.n_global(); ++p)
      cluster_traces[p] = strategies_of_cluster(model, corpus, p);
    std::vector<std::size_t> sizes(cluster_traces.size());
    for (std::size_t i = 0; i < cluster_traces.size(); ++i) sizes[i] = cluster_traces[i].size();
    const double coh = symmetry::cluster_coherence_lazy(
        sizes,
        [&](std::size_t c, std::size_t i) {
          return positional_of(*cluster_traces[c][i], embeddings, pe_table);
        },
        config.pair_cap, mix_seed(config.seed, static_cast<std::uint64_t>(t)));
    history.push_back(coh);
    models.push_back(std::move(model));
    if (history.size() >= 2 && history[history.size() - 1] <= history[history.size() - 2]) break;
    lambda_g -= config.epsilon;
  }
  if (models.empty()) throw std::runtime_error("refinement ran no iterations");
  const std::size_t best = select_best_iteration(history);
  ClusterModel result = std::move(models[best]);
  result.coherence_history = history;
  return result;
}

std::vector<const corpus::StrategyTrace*> strategies_of_cluster(const ClusterModel& model,
                                                                const corpus::Corpus& corpus,
                                                                int global_index) {
  if (global_index < 0 || global_index >= model.n_global()) {
    throw std::invalid_argument("invalid global cluster index");
  }
  std::set<std::string> students, problems;
  for (int j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < model.ids[j].size(); ++i) {
      if (model.global_of(j, static_cast<int>(i)) == global_index) {
        (j == kStudents ? students : problems).insert(model.ids[j][i]);
      }
    }
  }
  std::vector<const corpus::StrategyTrace*> out;
  const bool both = !students.empty() && !problems.empty();
  for (const corpus::StrategyTrace& t : corpus.traces) {
    const bool s_in = students.count(t.student_id) > 0;
    const bool p_in = problems.count(t.problem_id) > 0;
    if (both ? (s_in && p_in) : (s_in || p_in)) out.push_back(&t);
  }
  return out;
}

void save_cluster_model(std::ostream& out, const ClusterModel& model) {
  out << "# lambda_local\t" << model.lambda_local << "\n";
  out << "# lambda_global\t" << model.lambda_global << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", model.objective);
  out << "# objective\t" << buf << "\n";
  out << "# coherence_history";
  for (double c : model.coherence_history) {
    std::snprintf(buf, sizeof(buf), "%.17g", c);
    out << '\t' << buf;
  }
  out << "\n";
  out << "# columns\tkind\tnode_id\tlocal_cluster\tglobal_cluster\n";
  for (int j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < model.ids[j].size(); ++i) {
      out << (j == kStudents ? "student" : "problem") << '\t' << model.ids[j][i] << '\t'
          << model.point_local[j][i] << '\t' << model.global_of(j, static_cast<int>(i)) << '\n';
    }
  }
}

ClusterModel load_cluster_model(std::istream& in) {
  ClusterModel model;
  std::string line;
  int max_global = -1;
  std::array<std::map<int, int>, 2> local_global_map;
  std::array<std::vector<std::pair<std::string, int>>, 2> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      if (key == "lambda_local") hs >> model.lambda_local;
      if (key == "lambda_global") hs >> model.lambda_global;
      if (key == "objective") hs >> model.objective;
      if (key == "coherence_history") {
        double v;
        while (hs >> v) model.coherence_history.push_back(v);
      }
      continue;
    }
    std::istringstream ls(line);
    std::string kind, node;
    int local = 0, global = 0;
    if (!std::getline(ls, kind, '\t') || !std::getline(ls, node, '\t') || !(ls >> local)) {
      throw std::runtime_error("malformed cluster file line: " + line);
    }
    ls.ignore(1);
    ls >> global;
    const int j = kind == "student" ? kStudents : kProblems;
    rows[j].emplace_back(node, local);
    auto [it, inserted] = local_global_map[j].emplace(local, global);
    if (!inserted && it->second != global) {
      throw std::runtime_error("cluster file maps local cluster to two globals");
    }
    max_global = std::max(max_global, global);
  }
  for (int j = 0; j < 2; ++j) {
    std::sort(rows[j].begin(), rows[j].end());
    for (const auto& [node, local] : rows[j]) {
      model.ids[j].push_back(node);
      model.point_local[j].push_back(local);
    }
    if (!local_global_map[j].empty()) {
      model.local_global[j].assign(local_global_map[j].rbegin()->first + 1, 0);
      for (const auto& [local, global] : local_global_map[j])
        model.local_global[j][local] = global;
    }
  }
  // Centers are not part of the file; memberships are what downstream needs.
  model.global_centers.assign(static_cast<std::size_t>(max_global + 1), {});
  return model;
}

}  // namespace stratpred::clustering
