#include "stratpred/corpus.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stratpred::corpus {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

// DataShop writes "correct"/"incorrect"/"hint" in the first-attempt column;
// plain 0/1 is accepted as well.
std::optional<int> parse_cfa(const std::string& v) {
  if (v == "1" || v == "correct") return 1;
  if (v == "0" || v == "incorrect" || v == "hint") return 0;
  return std::nullopt;
}

void sort_unique(std::vector<std::string>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

const StrategyTrace* Corpus::find(const std::string& student, const std::string& problem) const {
  auto it = std::lower_bound(traces.begin(), traces.end(), std::make_pair(student, problem),
                             [](const StrategyTrace& t, const std::pair<std::string, std::string>& key) {
                               return std::tie(t.student_id, t.problem_id) <
                                      std::tie(key.first, key.second);
                             });
  if (it != traces.end() && it->student_id == student && it->problem_id == problem) return &*it;
  return nullptr;
}

std::vector<const StrategyTrace*> Corpus::traces_of_student(const std::string& student) const {
  std::vector<const StrategyTrace*> out;
  auto it = std::lower_bound(traces.begin(), traces.end(), student,
                             [](const StrategyTrace& t, const std::string& s) {
                               return t.student_id < s;
                             });
  for (; it != traces.end() && it->student_id == student; ++it) out.push_back(&*it);
  return out;
}

std::vector<TransactionRecord> parse_transactions(std::istream& in, const ColumnMapping& columns,
                                                  ParseReport* report) {
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("transaction stream is empty (no header row)");
  }
  const std::vector<std::string> header = split_tabs(strip_cr(line));
  auto col = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  };
  struct Col {
    const char* role;
    const std::string* name;
    int idx;
  };
  std::vector<Col> cols = {
      {"student", &columns.student, col(columns.student)},
      {"problem", &columns.problem, col(columns.problem)},
      {"unit", &columns.unit, col(columns.unit)},
      {"section", &columns.section, col(columns.section)},
      {"step", &columns.step, col(columns.step)},
      {"kc", &columns.kc, col(columns.kc)},
      {"cfa", &columns.cfa, col(columns.cfa)},
  };
  std::string missing;
  for (const Col& c : cols) {
    if (c.idx < 0) missing += (missing.empty() ? "" : ", ") + *c.name;
  }
  if (!missing.empty()) {
    throw std::runtime_error("transaction header is missing columns: " + missing);
  }

  ParseReport local;
  ParseReport& rep = report != nullptr ? *report : local;
  std::vector<TransactionRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_tabs(line);
    auto cell = [&](int idx) -> std::string {
      return idx < static_cast<int>(cells.size()) ? cells[idx] : std::string();
    };
    const std::string kc = cell(cols[5].idx);
    const std::string cfa_raw = cell(cols[6].idx);
    if (kc.empty()) {
      rep.skipped_missing_kc += 1;
      continue;
    }
    if (cfa_raw.empty()) {
      rep.skipped_missing_cfa += 1;
      continue;
    }
    const std::optional<int> cfa = parse_cfa(cfa_raw);
    if (!cfa.has_value()) {
      rep.rejected_rows.push_back("line " + std::to_string(line_no) + ": non-binary cfa value \"" +
                                  cfa_raw + "\"");
      continue;
    }
    TransactionRecord r;
    r.student_id = cell(cols[0].idx);
    r.problem_id = cell(cols[1].idx);
    r.unit_id = cell(cols[2].idx);
    r.section_id = cell(cols[3].idx);
    const std::string step_raw = cell(cols[4].idx);
    try {
      r.step_index = std::stoi(step_raw);
    } catch (const std::exception&) {
      rep.rejected_rows.push_back("line " + std::to_string(line_no) + ": bad step index \"" +
                                  step_raw + "\"");
      continue;
    }
    r.kc_id = kc;
    r.cfa = *cfa;
    records.push_back(std::move(r));
    rep.accepted += 1;
  }
  return records;
}

Corpus consolidate(const std::vector<TransactionRecord>& records) {
  // (student, problem) -> step_index -> record
  std::map<std::pair<std::string, std::string>, std::map<int, const TransactionRecord*>> groups;
  for (const TransactionRecord& r : records) {
    auto key = std::make_pair(r.student_id, r.problem_id);
    auto [it, inserted] = groups[key].emplace(r.step_index, &r);
    if (!inserted) {
      throw std::runtime_error("duplicate step index " + std::to_string(r.step_index) +
                               " for student \"" + r.student_id + "\" problem \"" + r.problem_id +
                               "\"");
    }
  }

  Corpus c;
  std::map<std::string, std::string> problem_section;
  std::map<std::string, std::string> section_unit;
  for (const auto& [key, steps] : groups) {
    StrategyTrace t;
    t.student_id = key.first;
    t.problem_id = key.second;
    for (const auto& [step, rec] : steps) {
      t.kcs.push_back(rec->kc_id);
      t.cfas.push_back(rec->cfa);
      if (t.section_id.empty()) {
        t.section_id = rec->section_id;
      } else if (t.section_id != rec->section_id) {
        throw std::runtime_error("student \"" + key.first + "\" problem \"" + key.second +
                                 "\" spans sections \"" + t.section_id + "\" and \"" +
                                 rec->section_id + "\"");
      }
      auto [pit, pinserted] = problem_section.emplace(key.second, rec->section_id);
      if (!pinserted && pit->second != rec->section_id) {
        throw std::runtime_error("problem \"" + key.second + "\" appears in sections \"" +
                                 pit->second + "\" and \"" + rec->section_id + "\"");
      }
      auto [sit, sinserted] = section_unit.emplace(rec->section_id, rec->unit_id);
      if (!sinserted && sit->second != rec->unit_id) {
        throw std::runtime_error("section \"" + rec->section_id + "\" appears in units \"" +
                                 sit->second + "\" and \"" + rec->unit_id + "\"");
      }
    }
    c.students.push_back(t.student_id);
    c.problems.push_back(t.problem_id);
    for (const std::string& kc : t.kcs) c.kc_vocab.push_back(kc);
    c.traces.push_back(std::move(t));
  }
  sort_unique(c.students);
  sort_unique(c.problems);
  sort_unique(c.kc_vocab);
  // groups was an ordered map, so traces are already sorted by (student, problem).

  c.curriculum.problem_section = problem_section;
  c.curriculum.section_unit = section_unit;
  for (const auto& [problem, section] : problem_section)
    c.curriculum.section_problems[section].push_back(problem);
  for (auto& [section, problems] : c.curriculum.section_problems) sort_unique(problems);
  for (const auto& [section, unit] : section_unit)
    c.curriculum.unit_sections[unit].push_back(section);
  for (auto& [unit, sections] : c.curriculum.unit_sections) sort_unique(sections);
  return c;
}

std::vector<TransactionRecord> to_transactions(const Corpus& corpus) {
  std::vector<TransactionRecord> out;
  for (const StrategyTrace& t : corpus.traces) {
    const auto uit = corpus.curriculum.section_unit.find(t.section_id);
    const std::string unit = uit != corpus.curriculum.section_unit.end() ? uit->second : "";
    for (std::size_t i = 0; i < t.kcs.size(); ++i) {
      TransactionRecord r;
      r.student_id = t.student_id;
      r.problem_id = t.problem_id;
      r.unit_id = unit;
      r.section_id = t.section_id;
      r.step_index = static_cast<int>(i);
      r.kc_id = t.kcs[i];
      r.cfa = t.cfas[i];
      out.push_back(std::move(r));
    }
  }
  return out;
}

void write_transactions_tsv(std::ostream& out, const std::vector<TransactionRecord>& records,
                            const ColumnMapping& columns) {
  out << columns.student << '\t' << columns.problem << '\t' << columns.unit << '\t'
      << columns.section << '\t' << columns.step << '\t' << columns.kc << '\t' << columns.cfa
      << '\n';
  for (const TransactionRecord& r : records) {
    out << r.student_id << '\t' << r.problem_id << '\t' << r.unit_id << '\t' << r.section_id
        << '\t' << r.step_index << '\t' << r.kc_id << '\t' << r.cfa << '\n';
  }
}

void write_snapshot(std::ostream& out, const Corpus& corpus) {
  for (const auto& [unit, sections] : corpus.curriculum.unit_sections) {
    out << "# unit\t" << unit;
    for (const std::string& s : sections) out << '\t' << s;
    out << '\n';
  }
  out << "# columns\tstudent\tproblem\tsection\tkcs\tcfas\n";
  for (const StrategyTrace& t : corpus.traces) {
    out << t.student_id << '\t' << t.problem_id << '\t' << t.section_id << '\t';
    for (std::size_t i = 0; i < t.kcs.size(); ++i) out << (i ? "," : "") << t.kcs[i];
    out << '\t';
    for (std::size_t i = 0; i < t.cfas.size(); ++i) out << (i ? "," : "") << t.cfas[i];
    out << '\n';
  }
}

Corpus read_snapshot(std::istream& in) {
  Corpus c;
  std::map<std::string, std::string> section_unit;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::vector<std::string> cells = split_tabs(line);
      if (cells.size() >= 3 && cells[0] == "# unit") {
        for (std::size_t i = 2; i < cells.size(); ++i) section_unit[cells[i]] = cells[1];
      }
      continue;
    }
    const std::vector<std::string> cells = split_tabs(line);
    if (cells.size() != 5) {
      throw std::runtime_error("corpus snapshot line " + std::to_string(line_no) +
                               ": expected 5 tab-separated fields");
    }
    StrategyTrace t;
    t.student_id = cells[0];
    t.problem_id = cells[1];
    t.section_id = cells[2];
    t.kcs = split_on(cells[3], ',');
    for (const std::string& v : split_on(cells[4], ',')) {
      if (v != "0" && v != "1") {
        throw std::runtime_error("corpus snapshot line " + std::to_string(line_no) +
                                 ": non-binary cfa \"" + v + "\"");
      }
      t.cfas.push_back(v == "1" ? 1 : 0);
    }
    if (t.kcs.size() != t.cfas.size() || t.kcs.empty()) {
      throw std::runtime_error("corpus snapshot line " + std::to_string(line_no) +
                               ": kc/cfa length mismatch");
    }
    c.students.push_back(t.student_id);
    c.problems.push_back(t.problem_id);
    for (const std::string& kc : t.kcs) c.kc_vocab.push_back(kc);
    c.curriculum.problem_section[t.problem_id] = t.section_id;
    c.traces.push_back(std::move(t));
  }
  std::sort(c.traces.begin(), c.traces.end(), [](const StrategyTrace& a, const StrategyTrace& b) {
    return std::tie(a.student_id, a.problem_id) < std::tie(b.student_id, b.problem_id);
  });
  sort_unique(c.students);
  sort_unique(c.problems);
  sort_unique(c.kc_vocab);
  for (const auto& [problem, section] : c.curriculum.problem_section) {
    c.curriculum.section_problems[section].push_back(problem);
    auto it = section_unit.find(section);
    c.curriculum.section_unit[section] = it != section_unit.end() ? it->second : "";
  }
  for (auto& [section, problems] : c.curriculum.section_problems) sort_unique(problems);
  for (const auto& [section, unit] : c.curriculum.section_unit)
    c.curriculum.unit_sections[unit].push_back(section);
  for (auto& [unit, sections] : c.curriculum.unit_sections) sort_unique(sections);
  return c;
}

std::uint64_t corpus_hash(const Corpus& corpus) {
  // FNV-1a over the snapshot serialization.
  std::ostringstream os;
  write_snapshot(os, corpus);
  const std::string s = os.str();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace stratpred::corpus
