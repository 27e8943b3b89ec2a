#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "stratpred/corpus.hpp"
#include "stratpred/synthetic.hpp"

using namespace stratpred;
using corpus::ColumnMapping;
using corpus::Corpus;
using corpus::ParseReport;
using corpus::SyntheticWorldConfig;
using corpus::TransactionRecord;

namespace {

const char* kHeader =
    "Anon Student Id\tProblem Name\tLevel (Unit)\tLevel (Section)\tStep Index\tKC "
    "(Default)\tFirst Attempt\n";

std::vector<TransactionRecord> parse(const std::string& body, ParseReport* report = nullptr) {
  std::istringstream in(std::string(kHeader) + body);
  return corpus::parse_transactions(in, ColumnMapping{}, report);
}

}  // namespace

TEST_CASE("parses valid rows in file order") {
  const auto records = parse(
      "s1\tp1\tu1\tsec1\t0\tkc-a\t1\n"
      "s1\tp1\tu1\tsec1\t1\tkc-b\tincorrect\n");
  REQUIRE(records.size() == 2);
  CHECK(records[0].kc_id == "kc-a");
  CHECK(records[0].cfa == 1);
  CHECK(records[1].kc_id == "kc-b");
  CHECK(records[1].cfa == 0);
}

TEST_CASE("non-binary cfa goes to the rejection report") {
  ParseReport report;
  const auto records = parse("s1\tp1\tu1\tsec1\t0\tkc-a\tx\n", &report);
  CHECK(records.empty());
  REQUIRE(report.rejected_rows.size() == 1);
  CHECK(report.rejected_rows[0].find("non-binary cfa") != std::string::npos);
}

TEST_CASE("header-only stream yields no records") {
  CHECK(parse("").empty());
}

TEST_CASE("rows missing kc or cfa are skipped and counted") {
  ParseReport report;
  const auto records = parse(
      "s1\tp1\tu1\tsec1\t0\t\t1\n"
      "s1\tp1\tu1\tsec1\t1\tkc-a\t\n"
      "s1\tp1\tu1\tsec1\t2\tkc-a\t1\n",
      &report);
  CHECK(records.size() == 1);
  CHECK(report.skipped_missing_kc == 1);
  CHECK(report.skipped_missing_cfa == 1);
}

TEST_CASE("malformed header names the missing columns") {
  std::istringstream in("Anon Student Id\tProblem Name\n");
  CHECK_THROWS_WITH_AS(corpus::parse_transactions(in, ColumnMapping{}, nullptr),
                       doctest::Contains("KC (Default)"), std::runtime_error);
}

TEST_CASE("custom column mapping is honored") {
  ColumnMapping cols;
  cols.student = "user";
  cols.problem = "task";
  cols.unit = "u";
  cols.section = "s";
  cols.step = "i";
  cols.kc = "skill";
  cols.cfa = "ok";
  std::istringstream in("user\ttask\tu\ts\ti\tskill\tok\nalice\tq1\tu0\ts0\t0\tadd\t1\n");
  const auto records = corpus::parse_transactions(in, cols, nullptr);
  REQUIRE(records.size() == 1);
  CHECK(records[0].student_id == "alice");
}

TEST_CASE("consolidate groups steps into one trace per pair") {
  const auto records = parse(
      "s1\tp1\tu1\tsec1\t2\tkc-c\t1\n"
      "s1\tp1\tu1\tsec1\t0\tkc-a\t0\n"
      "s1\tp1\tu1\tsec1\t1\tkc-b\t1\n");
  const Corpus c = corpus::consolidate(records);
  REQUIRE(c.traces.size() == 1);
  CHECK(c.traces[0].kcs == std::vector<std::string>{"kc-a", "kc-b", "kc-c"});
  CHECK(c.traces[0].cfas == std::vector<int>{0, 1, 1});
}

TEST_CASE("two students on one problem give two traces") {
  const auto records = parse(
      "s1\tp1\tu1\tsec1\t0\tkc-a\t1\n"
      "s2\tp1\tu1\tsec1\t0\tkc-a\t0\n");
  const Corpus c = corpus::consolidate(records);
  CHECK(c.traces.size() == 2);
  CHECK(c.students == std::vector<std::string>{"s1", "s2"});
}

TEST_CASE("duplicate step index is a hard error") {
  const auto records = parse(
      "s1\tp1\tu1\tsec1\t0\tkc-a\t1\n"
      "s1\tp1\tu1\tsec1\t0\tkc-b\t1\n");
  CHECK_THROWS_AS(corpus::consolidate(records), std::runtime_error);
}

TEST_CASE("a problem claimed by two sections is rejected") {
  const auto records = parse(
      "s1\tp1\tu1\tsec1\t0\tkc-a\t1\n"
      "s2\tp1\tu1\tsec2\t0\tkc-a\t1\n");
  CHECK_THROWS_AS(corpus::consolidate(records), std::runtime_error);
}

TEST_CASE("every trace kc is in the vocabulary and curriculum partitions problems") {
  SyntheticWorldConfig cfg;
  cfg.n_students = 20;
  cfg.n_problems = 18;
  cfg.n_kcs = 7;
  cfg.n_archetypes = 3;
  cfg.problems_per_section = 6;
  cfg.seed = 42;
  const auto [c, oracle] = corpus::generate_synthetic(cfg);
  std::set<std::string> vocab(c.kc_vocab.begin(), c.kc_vocab.end());
  for (const auto& t : c.traces) {
    for (const auto& kc : t.kcs) CHECK(vocab.count(kc) == 1);
  }
  std::set<std::string> seen;
  for (const auto& [section, problems] : c.curriculum.section_problems) {
    for (const auto& p : problems) {
      CHECK(seen.insert(p).second);  // each problem in exactly one section
      CHECK(c.curriculum.problem_section.at(p) == section);
    }
  }
  for (const auto& [section, unit] : c.curriculum.section_unit) {
    const auto& sections = c.curriculum.unit_sections.at(unit);
    CHECK(std::find(sections.begin(), sections.end(), section) != sections.end());
  }
}

TEST_CASE("transactions round-trip through parse and consolidate") {
  SyntheticWorldConfig cfg;
  cfg.n_students = 12;
  cfg.n_problems = 12;
  cfg.n_kcs = 5;
  cfg.n_archetypes = 2;
  cfg.problems_per_section = 4;
  cfg.seed = 7;
  const auto [c, oracle] = corpus::generate_synthetic(cfg);
  std::ostringstream os;
  corpus::write_transactions_tsv(os, corpus::to_transactions(c));
  std::istringstream in(os.str());
  const Corpus back = corpus::consolidate(corpus::parse_transactions(in, ColumnMapping{}, nullptr));
  CHECK(back == c);
}

TEST_CASE("snapshot round-trips a corpus including the curriculum") {
  SyntheticWorldConfig cfg;
  cfg.n_students = 8;
  cfg.n_problems = 9;
  cfg.n_kcs = 4;
  cfg.n_archetypes = 2;
  cfg.problems_per_section = 3;
  cfg.seed = 9;
  const auto [c, oracle] = corpus::generate_synthetic(cfg);
  std::ostringstream os;
  corpus::write_snapshot(os, c);
  std::istringstream in(os.str());
  CHECK(corpus::read_snapshot(in) == c);
}

TEST_CASE("zero noise and certain mastery give all-correct traces") {
  SyntheticWorldConfig cfg;
  cfg.n_students = 6;
  cfg.n_problems = 6;
  cfg.n_kcs = 3;
  cfg.n_archetypes = 1;
  cfg.mastery_noise = 0.0;
  cfg.flat_mastery = 1.0;
  cfg.problems_per_section = 3;
  cfg.seed = 3;
  const auto [c, oracle] = corpus::generate_synthetic(cfg);
  CHECK(!c.traces.empty());
  for (const auto& t : c.traces) {
    for (int cfa : t.cfas) CHECK(cfa == 1);
  }
}

TEST_CASE("same seed gives byte-identical corpora") {
  SyntheticWorldConfig cfg;
  cfg.n_students = 15;
  cfg.n_problems = 12;
  cfg.n_kcs = 6;
  cfg.n_archetypes = 3;
  cfg.seed = 77;
  const auto [c1, o1] = corpus::generate_synthetic(cfg);
  const auto [c2, o2] = corpus::generate_synthetic(cfg);
  CHECK(corpus::corpus_hash(c1) == corpus::corpus_hash(c2));
  CHECK(c1 == c2);
  SyntheticWorldConfig other = cfg;
  other.seed = 78;
  const auto [c3, o3] = corpus::generate_synthetic(other);
  CHECK(corpus::corpus_hash(c1) != corpus::corpus_hash(c3));
}

TEST_CASE("archetype template usage is exclusive and separable") {
  SyntheticWorldConfig cfg;
  cfg.n_students = 40;
  cfg.n_problems = 30;
  cfg.n_kcs = 10;
  cfg.n_archetypes = 4;
  cfg.strategies_per_section = 4;
  cfg.problems_per_section = 5;
  cfg.mastery_noise = 0.1;
  cfg.seed = 5;
  const auto [c, oracle] = corpus::generate_synthetic(cfg);
  CHECK(c.traces.size() > 0);
  // Every trace follows its student's archetype template for the section.
  for (const auto& t : c.traces) {
    const int archetype = oracle.archetype_of(t.student_id);
    CHECK(t.kcs == oracle.template_kcs(t.section_id, archetype));
  }
  // Templates are distinct within a section, so students of different
  // archetypes differ on any common section while same-archetype students
  // always agree.
  for (const auto& [section, templates] : oracle.section_templates) {
    std::set<std::vector<std::string>> unique(templates.begin(), templates.end());
    CHECK(unique.size() == templates.size());
  }
}

TEST_CASE("invalid synthetic configs are rejected") {
  SyntheticWorldConfig cfg;
  cfg.n_students = 2;
  cfg.n_archetypes = 3;
  CHECK_THROWS_AS(corpus::generate_synthetic(cfg), std::invalid_argument);
  SyntheticWorldConfig bad;
  bad.mastery_noise = 1.5;
  CHECK_THROWS_AS(corpus::generate_synthetic(bad), std::invalid_argument);
}

TEST_CASE("full participation attempts every problem") {
  SyntheticWorldConfig cfg;
  cfg.n_students = 10;
  cfg.n_problems = 30;
  cfg.n_kcs = 8;
  cfg.n_archetypes = 2;
  cfg.problems_per_section = 5;  // 6 sections
  cfg.sections_per_unit = 2;     // 3 units
  cfg.unit_participation = 1.0;
  cfg.seed = 13;
  const auto [c, oracle] = corpus::generate_synthetic(cfg);
  CHECK(c.traces.size() == static_cast<std::size_t>(cfg.n_students * cfg.n_problems));
}
