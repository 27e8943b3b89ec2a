#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace stratpred::corpus {

// One logged student step from a tutoring transaction export.
struct TransactionRecord {
  std::string student_id;
  std::string problem_id;
  std::string unit_id;
  std::string section_id;
  int step_index = 0;
  std::string kc_id;
  int cfa = 0;  // 1 = correct on first attempt
};

// One data instance: all steps of one (student, problem) pair, in step order.
struct StrategyTrace {
  std::string student_id;
  std::string problem_id;
  std::string section_id;
  std::vector<std::string> kcs;
  std::vector<int> cfas;

  bool operator==(const StrategyTrace&) const = default;
};

struct Curriculum {
  // unit -> sections and section -> problems, each list sorted lexicographically.
  std::map<std::string, std::vector<std::string>> unit_sections;
  std::map<std::string, std::vector<std::string>> section_problems;
  std::map<std::string, std::string> section_unit;
  std::map<std::string, std::string> problem_section;

  bool operator==(const Curriculum&) const = default;
};

struct Corpus {
  std::vector<StrategyTrace> traces;  // sorted by (student_id, problem_id)
  std::vector<std::string> kc_vocab;  // sorted unique
  std::vector<std::string> students;  // sorted unique
  std::vector<std::string> problems;  // sorted unique
  Curriculum curriculum;

  const StrategyTrace* find(const std::string& student, const std::string& problem) const;
  std::vector<const StrategyTrace*> traces_of_student(const std::string& student) const;

  bool operator==(const Corpus&) const = default;
};

// Column-name mapping for transaction TSV ingestion. Defaults match DataShop
// transaction exports.
struct ColumnMapping {
  std::string student = "Anon Student Id";
  std::string problem = "Problem Name";
  std::string unit = "Level (Unit)";
  std::string section = "Level (Section)";
  std::string step = "Step Index";
  std::string kc = "KC (Default)";
  std::string cfa = "First Attempt";
};

struct ParseReport {
  std::size_t accepted = 0;
  std::size_t skipped_missing_kc = 0;
  std::size_t skipped_missing_cfa = 0;
  std::vector<std::string> rejected_rows;  // one message per rejected row
};

// Reads a tab-separated stream with a header row. Rows missing the KC or CFA
// cell are skipped and counted; rows with a non-binary CFA value go to the
// rejection report. Throws on a malformed header, naming the missing columns.
std::vector<TransactionRecord> parse_transactions(std::istream& in, const ColumnMapping& columns,
                                                  ParseReport* report = nullptr);

// Builds one StrategyTrace per (student, problem), ordered by step index, plus
// vocabularies and the curriculum. Throws on duplicate (student, problem,
// step_index) and on a problem claimed by two sections.
Corpus consolidate(const std::vector<TransactionRecord>& records);

// Inverse of consolidate, used for round-trips and synthetic exports.
std::vector<TransactionRecord> to_transactions(const Corpus& corpus);

void write_transactions_tsv(std::ostream& out, const std::vector<TransactionRecord>& records,
                            const ColumnMapping& columns = {});

// Corpus snapshot: '#' comment lines capturing the curriculum, then one trace
// per line (student, problem, section, comma-joined KCs, comma-joined CFAs).
void write_snapshot(std::ostream& out, const Corpus& corpus);
Corpus read_snapshot(std::istream& in);

// Stable content hash for determinism checks.
std::uint64_t corpus_hash(const Corpus& corpus);

}  // namespace stratpred::corpus
