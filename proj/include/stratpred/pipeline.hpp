#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "stratpred/clustering.hpp"
#include "stratpred/corpus.hpp"
#include "stratpred/embedding.hpp"
#include "stratpred/harness.hpp"
#include "stratpred/mastery.hpp"
#include "stratpred/predictor.hpp"
#include "stratpred/synthetic.hpp"

namespace stratpred::pipeline {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Minimal [section] key = value config file. Values: numbers, booleans,
// bare or quoted strings, comma-separated lists. '#' starts a comment.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text, const std::string& origin = "<config>");
  static ConfigFile parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  long long get_int(const std::string& section, const std::string& key, long long fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

  // Throws if any key was never read by a getter, naming section and field.
  void check_all_consumed() const;

  const std::string& text() const { return text_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
    mutable bool consumed = false;
  };
  std::string origin_;
  std::string text_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  bool paper_scale = false;

  bool has_world = true;
  corpus::SyntheticWorldConfig world;
  std::string ingest_input;  // external transactions file; empty = generated one
  corpus::ColumnMapping columns;

  mastery::MasteryModelConfig mastery;
  embedding::WalkConfig walk;
  clustering::RefinementConfig refine;
  predictor::PredictorConfig predictor;

  double test_fraction = 0.2;
  std::vector<double> budgets = {0.1};  // < 1: fraction of train; >= 1: count
  std::string method = "as";
  std::string ablation = "ssms";
  std::vector<std::string> baseline_methods = {"rs"};
  int runs = 3;
  int random_clusters = 8;

  static PipelineConfig defaults();
  static PipelineConfig from_file(const std::string& path, bool paper_scale_flag);

  std::uint64_t config_hash() const;
  std::string path(const std::string& artifact) const;
  std::size_t resolve_budget(double budget, std::size_t train_size) const;
};

// One pipeline stage. Each writes its artifact(s) plus a manifest line and
// returns 0 on success; errors propagate as exceptions.
int run_command(const PipelineConfig& config, const std::string& command);

// Names of the stages `pipeline` executes, in order.
const std::vector<std::string>& pipeline_stages();

}  // namespace stratpred::pipeline
