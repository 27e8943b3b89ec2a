#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stratpred/corpus.hpp"

namespace stratpred::corpus {

struct SyntheticWorldConfig {
  int n_students = 100;
  int n_problems = 60;
  int n_kcs = 12;
  int n_archetypes = 3;
  int strategies_per_section = 3;
  double mastery_noise = 0.1;
  std::uint64_t seed = 1;

  // World-shape knobs beyond the core counts.
  int problems_per_section = 10;
  int sections_per_unit = 3;
  double unit_participation = 0.5;  // fraction of units each student works through
  double archetype_skew = 0.5;      // population ratio between consecutive archetypes; 1 = even
  double majority_share = -1.0;     // > 0: archetype 0 takes this share, the rest split evenly
  double flat_mastery = -1.0;       // >= 0: every archetype-KC mastery is this value
};

// Ground truth for a generated world. Each trace's archetype is the archetype
// of its student; its template id is template_of(section, archetype).
struct OracleLabels {
  std::map<std::string, int> student_archetype;
  // [archetype][kc index] success probability; kc index matches kc id order.
  std::vector<std::vector<double>> archetype_kc_mastery;
  std::vector<std::string> kc_ids;
  // section -> templates owned by the section (KC sequences).
  std::map<std::string, std::vector<std::vector<std::string>>> section_templates;

  int archetype_of(const std::string& student) const;
  int template_of(const std::string& section, int archetype) const;
  const std::vector<std::string>& template_kcs(const std::string& section, int archetype) const;
  double mastery_of(int archetype, const std::string& kc) const;
};

// Deterministic world: students get archetype skill profiles, each section owns
// strategy templates of lengths 3-12, and a student follows the template
// matching their archetype with per-step CFA drawn from their per-KC mastery
// (flipped with probability mastery_noise).
std::pair<Corpus, OracleLabels> generate_synthetic(const SyntheticWorldConfig& config);

}  // namespace stratpred::corpus
