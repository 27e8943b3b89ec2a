#include "stratpred/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "stratpred/rng.hpp"

namespace stratpred::corpus {

namespace {

std::string padded_id(const std::string& prefix, int i, int count) {
  int width = 1;
  for (int c = count - 1; c >= 10; c /= 10) ++width;
  std::string digits = std::to_string(i);
  return prefix + std::string(width - std::min<int>(width, digits.size()), '0') + digits;
}

void validate(const SyntheticWorldConfig& c) {
  if (c.n_students < 1 || c.n_problems < 1 || c.n_kcs < 1 || c.n_archetypes < 1 ||
      c.strategies_per_section < 1 || c.problems_per_section < 1 || c.sections_per_unit < 1) {
    throw std::invalid_argument("synthetic world counts must all be >= 1");
  }
  if (c.mastery_noise < 0.0 || c.mastery_noise > 1.0) {
    throw std::invalid_argument("mastery_noise must be in [0,1]");
  }
  if (c.unit_participation <= 0.0 || c.unit_participation > 1.0) {
    throw std::invalid_argument("unit_participation must be in (0,1]");
  }
  if (c.n_archetypes > c.n_students) {
    throw std::invalid_argument("n_archetypes exceeds n_students");
  }
}

}  // namespace

int OracleLabels::archetype_of(const std::string& student) const {
  auto it = student_archetype.find(student);
  if (it == student_archetype.end()) throw std::invalid_argument("unknown student: " + student);
  return it->second;
}

int OracleLabels::template_of(const std::string& section, int archetype) const {
  auto it = section_templates.find(section);
  if (it == section_templates.end()) throw std::invalid_argument("unknown section: " + section);
  return archetype % static_cast<int>(it->second.size());
}

const std::vector<std::string>& OracleLabels::template_kcs(const std::string& section,
                                                           int archetype) const {
  const auto& templates = section_templates.at(section);
  return templates[archetype % static_cast<int>(templates.size())];
}

double OracleLabels::mastery_of(int archetype, const std::string& kc) const {
  for (std::size_t i = 0; i < kc_ids.size(); ++i) {
    if (kc_ids[i] == kc) return archetype_kc_mastery[archetype][i];
  }
  throw std::invalid_argument("unknown kc: " + kc);
}

std::pair<Corpus, OracleLabels> generate_synthetic(const SyntheticWorldConfig& cfg) {
  validate(cfg);
  OracleLabels oracle;

  std::vector<std::string> kc_ids(cfg.n_kcs);
  for (int k = 0; k < cfg.n_kcs; ++k) kc_ids[k] = padded_id("kc", k, cfg.n_kcs);
  oracle.kc_ids = kc_ids;

  const int n_sections = (cfg.n_problems + cfg.problems_per_section - 1) / cfg.problems_per_section;
  const int n_units = (n_sections + cfg.sections_per_unit - 1) / cfg.sections_per_unit;

  std::vector<std::string> section_ids(n_sections);
  std::vector<std::string> unit_of_section(n_sections);
  for (int s = 0; s < n_sections; ++s) {
    section_ids[s] = padded_id("sec", s, n_sections);
    unit_of_section[s] = padded_id("unit", s / cfg.sections_per_unit, n_units);
  }
  std::vector<std::string> problem_ids(cfg.n_problems);
  std::vector<int> section_of_problem(cfg.n_problems);
  for (int p = 0; p < cfg.n_problems; ++p) {
    problem_ids[p] = padded_id("prob", p, cfg.n_problems);
    section_of_problem[p] = p / cfg.problems_per_section;
  }

  // Archetype skill profiles: a third of the KCs strong, a third middling, a
  // third weak, shuffled per archetype so archetypes disagree about which is which.
  Rng profile_rng(mix_seed(cfg.seed, 0xA1));
  oracle.archetype_kc_mastery.assign(cfg.n_archetypes, std::vector<double>(cfg.n_kcs, 0.0));
  for (int a = 0; a < cfg.n_archetypes; ++a) {
    std::vector<int> order(cfg.n_kcs);
    for (int k = 0; k < cfg.n_kcs; ++k) order[k] = k;
    profile_rng.shuffle(order);
    for (int rank = 0; rank < cfg.n_kcs; ++rank) {
      const int k = order[rank];
      double m;
      if (rank * 3 < cfg.n_kcs) {
        m = profile_rng.uniform(0.92, 1.0);
      } else if (rank * 3 < 2 * cfg.n_kcs) {
        m = profile_rng.uniform(0.35, 0.72);
      } else {
        m = profile_rng.uniform(0.0, 0.08);
      }
      oracle.archetype_kc_mastery[a][k] = cfg.flat_mastery >= 0.0 ? cfg.flat_mastery : m;
    }
  }

  // Skewed archetype sizes: weight of archetype a is skew^a, or one majority
  // archetype with the remaining mass split evenly.
  std::vector<double> cum_weight(cfg.n_archetypes);
  double total = 0.0;
  for (int a = 0; a < cfg.n_archetypes; ++a) {
    if (cfg.majority_share > 0.0 && cfg.n_archetypes > 1) {
      total += a == 0 ? cfg.majority_share
                      : (1.0 - cfg.majority_share) / (cfg.n_archetypes - 1);
    } else {
      total += std::pow(cfg.archetype_skew, a);
    }
    cum_weight[a] = total;
  }
  std::vector<std::string> student_ids(cfg.n_students);
  std::vector<int> archetype_of_student(cfg.n_students);
  for (int s = 0; s < cfg.n_students; ++s) {
    student_ids[s] = padded_id("stu", s, cfg.n_students);
    const double q = (s + 0.5) / cfg.n_students * total;
    int a = 0;
    while (a + 1 < cfg.n_archetypes && q > cum_weight[a]) ++a;
    archetype_of_student[s] = a;
  }
  // Guarantee every archetype has at least one student.
  for (int a = 0; a < cfg.n_archetypes; ++a) {
    if (std::count(archetype_of_student.begin(), archetype_of_student.end(), a) == 0) {
      archetype_of_student[cfg.n_students - 1 - a] = a;
    }
  }
  for (int s = 0; s < cfg.n_students; ++s) {
    oracle.student_archetype[student_ids[s]] = archetype_of_student[s];
  }

  // Section strategy templates, distinct within a section.
  for (int s = 0; s < n_sections; ++s) {
    Rng trng(mix_seed(cfg.seed, 0xB000 + s));
    std::set<std::vector<std::string>> seen;
    std::vector<std::vector<std::string>> templates;
    for (int t = 0; t < cfg.strategies_per_section; ++t) {
      std::vector<std::string> kcs;
      for (int attempt = 0; attempt < 64; ++attempt) {
        const int len = 3 + static_cast<int>(trng.index(10));  // lengths 3..12
        kcs.clear();
        for (int i = 0; i < len; ++i) kcs.push_back(kc_ids[trng.index(kc_ids.size())]);
        if (seen.insert(kcs).second) break;
      }
      templates.push_back(kcs);
    }
    oracle.section_templates[section_ids[s]] = templates;
  }

  // Unit participation: every student works all problems of their chosen units.
  const int units_per_student =
      std::max(1, static_cast<int>(std::lround(cfg.unit_participation * n_units)));

  std::vector<TransactionRecord> records;
  for (int si = 0; si < cfg.n_students; ++si) {
    Rng urng(mix_seed(cfg.seed, mix_seed(0xC1, si)));
    std::vector<int> units(n_units);
    for (int u = 0; u < n_units; ++u) units[u] = u;
    urng.shuffle(units);
    units.resize(units_per_student);
    std::sort(units.begin(), units.end());
    const int archetype = archetype_of_student[si];
    for (int p = 0; p < cfg.n_problems; ++p) {
      const int sec = section_of_problem[p];
      if (std::find(units.begin(), units.end(), sec / cfg.sections_per_unit) == units.end())
        continue;
      const auto& templates = oracle.section_templates[section_ids[sec]];
      const auto& kcs = templates[archetype % static_cast<int>(templates.size())];
      Rng crng(mix_seed(cfg.seed, mix_seed(0xD000 + si, p)));
      for (std::size_t step = 0; step < kcs.size(); ++step) {
        int kc_index = 0;
        for (int k = 0; k < cfg.n_kcs; ++k)
          if (kc_ids[k] == kcs[step]) kc_index = k;
        int cfa = crng.bernoulli(oracle.archetype_kc_mastery[archetype][kc_index]) ? 1 : 0;
        if (crng.bernoulli(cfg.mastery_noise)) cfa = 1 - cfa;
        TransactionRecord r;
        r.student_id = student_ids[si];
        r.problem_id = problem_ids[p];
        r.unit_id = unit_of_section[sec];
        r.section_id = section_ids[sec];
        r.step_index = static_cast<int>(step);
        r.kc_id = kcs[step];
        r.cfa = cfa;
        records.push_back(std::move(r));
      }
    }
  }

  return {consolidate(records), std::move(oracle)};
}

}  // namespace stratpred::corpus
