#include "stratpred/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "stratpred/artifact_io.hpp"
#include "stratpred/rng.hpp"

namespace stratpred::pipeline {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile f;
  f.origin_ = origin;
  f.text_ = text;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty section name");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (f.sections_[section].count(key) > 0) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key \"" + key +
                        "\" in [" + section + "]");
    }
    f.sections_[section][key] = Entry{value, line_no, false};
  }
  return f;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  return parse(io::read_file(path), path);
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto sit = sections_.find(section);
  return sit != sections_.end() && sit->second.count(key) > 0;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  auto sit = sections_.find(section);
  if (sit == sections_.end()) return fallback;
  auto kit = sit->second.find(key);
  if (kit == sit->second.end()) return fallback;
  kit->second.consumed = true;
  return kit->second.value;
}

long long ConfigFile::get_int(const std::string& section, const std::string& key,
                              long long fallback) const {
  const std::string v = get_string(section, key, "");
  if (v.empty()) return fallback;
  try {
    return std::stoll(v);
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": field [" + section + "] " + key + ": not an integer: " + v);
  }
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  const std::string v = get_string(section, key, "");
  if (v.empty()) return fallback;
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": field [" + section + "] " + key + ": not a number: " + v);
  }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  const std::string v = get_string(section, key, "");
  if (v.empty()) return fallback;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(origin_ + ": field [" + section + "] " + key + ": not a boolean: " + v);
}

std::vector<std::string> ConfigFile::get_list(const std::string& section,
                                              const std::string& key) const {
  const std::string v = get_string(section, key, "");
  std::vector<std::string> out;
  if (v.empty()) return out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void ConfigFile::check_all_consumed() const {
  for (const auto& [section, entries] : sections_) {
    for (const auto& [key, entry] : entries) {
      if (!entry.consumed) {
        throw ConfigError(origin_ + ":" + std::to_string(entry.line) + ": unknown field [" +
                          section + "] " + key);
      }
    }
  }
}

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig cfg;
  cfg.mastery.model_dim = 64;
  cfg.mastery.n_layers = 2;
  cfg.mastery.n_heads = 4;
  cfg.mastery.head_dim = 16;
  cfg.mastery.max_seq_len = 32;
  cfg.mastery.epochs = 6;
  cfg.walk.dim = 32;
  cfg.predictor = predictor::PredictorConfig::desk_scale();
  return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::string& path, bool paper_scale_flag) {
  const ConfigFile f = ConfigFile::parse_file(path);
  PipelineConfig cfg = defaults();
  cfg.paper_scale = paper_scale_flag || f.get_bool("run", "paper_scale", false);

  cfg.seed = static_cast<std::uint64_t>(f.get_int("run", "seed", 1));
  cfg.out_dir = f.get_string("run", "out_dir", "out");
  cfg.test_fraction = f.get_double("run", "test_fraction", 0.2);
  cfg.method = f.get_string("run", "method", "as");
  cfg.ablation = f.get_string("run", "ablation", "ssms");
  cfg.runs = static_cast<int>(f.get_int("run", "runs", 3));
  cfg.random_clusters = static_cast<int>(f.get_int("run", "random_clusters", 8));
  if (f.has("run", "budget")) {
    cfg.budgets.clear();
    for (const std::string& b : f.get_list("run", "budget")) cfg.budgets.push_back(std::stod(b));
  }
  if (f.has("run", "baseline_methods")) {
    cfg.baseline_methods = f.get_list("run", "baseline_methods");
  }
  if (!harness::parse_method(cfg.method).has_value()) {
    throw ConfigError("field [run] method: unknown method \"" + cfg.method + "\"");
  }
  if (!harness::parse_ablation(cfg.ablation).has_value()) {
    throw ConfigError("field [run] ablation: unknown ablation \"" + cfg.ablation + "\"");
  }

  cfg.has_world = f.has("world", "students") || !f.has("ingest", "input");
  cfg.world.n_students = static_cast<int>(f.get_int("world", "students", 120));
  cfg.world.n_problems = static_cast<int>(f.get_int("world", "problems", 60));
  cfg.world.n_kcs = static_cast<int>(f.get_int("world", "kcs", 12));
  cfg.world.n_archetypes = static_cast<int>(f.get_int("world", "archetypes", 3));
  cfg.world.strategies_per_section =
      static_cast<int>(f.get_int("world", "strategies_per_section", cfg.world.n_archetypes));
  cfg.world.mastery_noise = f.get_double("world", "mastery_noise", 0.1);
  cfg.world.problems_per_section =
      static_cast<int>(f.get_int("world", "problems_per_section", 10));
  cfg.world.sections_per_unit = static_cast<int>(f.get_int("world", "sections_per_unit", 3));
  cfg.world.unit_participation = f.get_double("world", "unit_participation", 0.5);
  cfg.world.archetype_skew = f.get_double("world", "archetype_skew", 0.5);
  cfg.world.seed = static_cast<std::uint64_t>(f.get_int("world", "seed", static_cast<long long>(cfg.seed)));

  cfg.ingest_input = f.get_string("ingest", "input", "");
  cfg.columns.student = f.get_string("ingest", "col_student", cfg.columns.student);
  cfg.columns.problem = f.get_string("ingest", "col_problem", cfg.columns.problem);
  cfg.columns.unit = f.get_string("ingest", "col_unit", cfg.columns.unit);
  cfg.columns.section = f.get_string("ingest", "col_section", cfg.columns.section);
  cfg.columns.step = f.get_string("ingest", "col_step", cfg.columns.step);
  cfg.columns.kc = f.get_string("ingest", "col_kc", cfg.columns.kc);
  cfg.columns.cfa = f.get_string("ingest", "col_cfa", cfg.columns.cfa);

  if (cfg.paper_scale) {
    cfg.mastery = mastery::MasteryModelConfig::paper_scale();
    cfg.walk.dim = 300;
    cfg.refine = clustering::RefinementConfig{};
    cfg.predictor = predictor::PredictorConfig{};
  }
  cfg.mastery.model_dim = static_cast<int>(f.get_int("mastery", "dim", cfg.mastery.model_dim));
  cfg.mastery.n_layers = static_cast<int>(f.get_int("mastery", "layers", cfg.mastery.n_layers));
  cfg.mastery.n_heads = static_cast<int>(f.get_int("mastery", "heads", cfg.mastery.n_heads));
  cfg.mastery.head_dim = static_cast<int>(f.get_int("mastery", "head_dim", cfg.mastery.head_dim));
  cfg.mastery.max_seq_len =
      static_cast<int>(f.get_int("mastery", "max_seq_len", cfg.mastery.max_seq_len));
  cfg.mastery.dropout_rate = f.get_double("mastery", "dropout", cfg.mastery.dropout_rate);
  cfg.mastery.epochs = static_cast<int>(f.get_int("mastery", "epochs", cfg.mastery.epochs));
  cfg.mastery.batch_size =
      static_cast<int>(f.get_int("mastery", "batch_size", cfg.mastery.batch_size));
  cfg.mastery.learning_rate = f.get_double("mastery", "learning_rate", cfg.mastery.learning_rate);

  cfg.walk.dim = static_cast<int>(f.get_int("embedding", "dim", cfg.walk.dim));
  cfg.walk.n_walks = f.get_int("embedding", "walks", cfg.walk.n_walks);
  cfg.walk.window = static_cast<int>(f.get_int("embedding", "window", cfg.walk.window));
  cfg.walk.negatives = static_cast<int>(f.get_int("embedding", "negatives", cfg.walk.negatives));
  cfg.walk.sg_epochs = static_cast<int>(f.get_int("embedding", "epochs", cfg.walk.sg_epochs));
  cfg.walk.learning_rate = f.get_double("embedding", "learning_rate", cfg.walk.learning_rate);

  cfg.refine.lambda_local = f.get_double("cluster", "lambda_local", cfg.refine.lambda_local);
  cfg.refine.lambda_global0 = f.get_double("cluster", "lambda_global", cfg.refine.lambda_global0);
  cfg.refine.epsilon = f.get_double("cluster", "epsilon", cfg.refine.epsilon);
  cfg.refine.max_iterations =
      static_cast<int>(f.get_int("cluster", "max_iterations", cfg.refine.max_iterations));
  cfg.refine.pair_cap = static_cast<int>(f.get_int("cluster", "pair_cap", cfg.refine.pair_cap));

  cfg.predictor.latent_dim =
      static_cast<int>(f.get_int("predictor", "latent_dim", cfg.predictor.latent_dim));
  cfg.predictor.epochs = static_cast<int>(f.get_int("predictor", "epochs", cfg.predictor.epochs));
  cfg.predictor.batch_size =
      static_cast<int>(f.get_int("predictor", "batch_size", cfg.predictor.batch_size));
  cfg.predictor.learning_rate =
      f.get_double("predictor", "learning_rate", cfg.predictor.learning_rate);
  cfg.predictor.dropout = f.get_double("predictor", "dropout", cfg.predictor.dropout);
  cfg.predictor.max_decode_len =
      static_cast<int>(f.get_int("predictor", "max_decode_len", cfg.predictor.max_decode_len));

  f.check_all_consumed();
  return cfg;
}

namespace {

std::string canonical_config(const PipelineConfig& c) {
  std::ostringstream os;
  os << "seed=" << c.seed << ";paper=" << c.paper_scale << ";world=" << c.world.n_students << ","
     << c.world.n_problems << "," << c.world.n_kcs << "," << c.world.n_archetypes << ","
     << c.world.strategies_per_section << "," << c.world.mastery_noise << ","
     << c.world.problems_per_section << "," << c.world.sections_per_unit << ","
     << c.world.unit_participation << "," << c.world.archetype_skew << "," << c.world.seed
     << ";ingest=" << c.ingest_input << ";mastery=" << c.mastery.model_dim << ","
     << c.mastery.n_layers << "," << c.mastery.n_heads << "," << c.mastery.head_dim << ","
     << c.mastery.max_seq_len << "," << c.mastery.dropout_rate << "," << c.mastery.epochs << ","
     << c.mastery.batch_size << "," << c.mastery.learning_rate << ";walk=" << c.walk.dim << ","
     << c.walk.n_walks << "," << c.walk.window << "," << c.walk.negatives << ","
     << c.walk.sg_epochs << "," << c.walk.learning_rate << ";refine=" << c.refine.lambda_local
     << "," << c.refine.lambda_global0 << "," << c.refine.epsilon << ","
     << c.refine.max_iterations << "," << c.refine.pair_cap << ";pred=" << c.predictor.latent_dim
     << "," << c.predictor.epochs << "," << c.predictor.batch_size << ","
     << c.predictor.learning_rate << "," << c.predictor.dropout << ","
     << c.predictor.max_decode_len << ";exp=" << c.test_fraction << "," << c.method << ","
     << c.ablation << "," << c.runs << "," << c.random_clusters;
  for (double b : c.budgets) os << "," << b;
  for (const std::string& m : c.baseline_methods) os << "," << m;
  return os.str();
}

constexpr std::uint64_t kSplitSalt = 0x711;

struct StageContext {
  const PipelineConfig& cfg;
  std::string command;
  std::uint64_t hash;

  std::string header() const { return io::artifact_header(command, hash, cfg.seed); }
  std::string path(const std::string& name) const { return cfg.path(name); }
};

corpus::Corpus load_corpus(const StageContext& ctx) {
  io::require_artifact(ctx.path("corpus.tsv"), "ingest");
  std::ifstream in(ctx.path("corpus.tsv"));
  return corpus::read_snapshot(in);
}

embedding::EmbeddingSet load_embeddings_artifact(const StageContext& ctx) {
  io::require_artifact(ctx.path("embeddings.tsv"), "embed");
  std::ifstream in(ctx.path("embeddings.tsv"));
  return embedding::load_embeddings(in);
}

mastery::MasteryTable load_mastery_artifact(const StageContext& ctx) {
  io::require_artifact(ctx.path("mastery_table.tsv"), "train-mastery");
  std::ifstream in(ctx.path("mastery_table.tsv"));
  return mastery::load_mastery_table(in);
}

clustering::ClusterModel load_clusters_artifact(const StageContext& ctx) {
  io::require_artifact(ctx.path("clusters.tsv"), "cluster");
  std::ifstream in(ctx.path("clusters.tsv"));
  return clustering::load_cluster_model(in);
}

predictor::PredictorModel load_predictor_artifact(const StageContext& ctx) {
  io::require_artifact(ctx.path("predictor.ckpt"), "train-predictor");
  std::ifstream in(ctx.path("predictor.ckpt"), std::ios::binary);
  return predictor::PredictorModel::load(in);
}

nlohmann::ordered_json meta_json(const StageContext& ctx) {
  return {{"command", ctx.command},
          {"config", io::hex64(ctx.hash)},
          {"seed", ctx.cfg.seed}};
}

void stage_gen_data(const StageContext& ctx) {
  auto [generated, oracle] = corpus::generate_synthetic(ctx.cfg.world);
  std::ostringstream tx;
  tx << ctx.header();
  corpus::write_transactions_tsv(tx, corpus::to_transactions(generated));
  io::write_file(ctx.path("transactions.tsv"), tx.str());

  std::ostringstream oz;
  oz << ctx.header();
  for (const auto& [student, archetype] : oracle.student_archetype) {
    oz << "student\t" << student << '\t' << archetype << '\n';
  }
  for (const auto& [section, templates] : oracle.section_templates) {
    for (std::size_t i = 0; i < templates.size(); ++i) {
      oz << "template\t" << section << '\t' << i << '\t';
      for (std::size_t k = 0; k < templates[i].size(); ++k)
        oz << (k ? "," : "") << templates[i][k];
      oz << '\n';
    }
  }
  char buf[64];
  for (std::size_t a = 0; a < oracle.archetype_kc_mastery.size(); ++a) {
    for (std::size_t k = 0; k < oracle.kc_ids.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", oracle.archetype_kc_mastery[a][k]);
      oz << "mastery\t" << a << '\t' << oracle.kc_ids[k] << '\t' << buf << '\n';
    }
  }
  io::write_file(ctx.path("oracle_labels.tsv"), oz.str());
}

void stage_ingest(const StageContext& ctx) {
  std::string input = ctx.cfg.ingest_input;
  if (input.empty()) {
    input = ctx.path("transactions.tsv");
    io::require_artifact(input, "gen-data");
  } else {
    io::require_artifact(input, "gen-data");
  }
  std::ifstream in(input);
  // Artifact headers of generated files are comments; real exports start with
  // the header row directly.
  while (in.peek() == '#') {
    std::string skip;
    std::getline(in, skip);
  }
  corpus::ParseReport report;
  const auto records = corpus::parse_transactions(in, ctx.cfg.columns, &report);
  const corpus::Corpus consolidated = corpus::consolidate(records);
  std::ostringstream os;
  os << ctx.header();
  os << "# parse\taccepted=" << report.accepted << "\tskipped_kc=" << report.skipped_missing_kc
     << "\tskipped_cfa=" << report.skipped_missing_cfa
     << "\trejected=" << report.rejected_rows.size() << '\n';
  corpus::write_snapshot(os, consolidated);
  io::write_file(ctx.path("corpus.tsv"), os.str());
  std::cout << "ingested " << consolidated.traces.size() << " traces ("
            << report.rejected_rows.size() << " rejected rows)\n";
}

void stage_train_mastery(const StageContext& ctx) {
  const corpus::Corpus full = load_corpus(ctx);
  auto [train, test] = harness::split_corpus(full, ctx.cfg.test_fraction,
                                             mix_seed(ctx.cfg.seed, kSplitSalt));
  const auto pairs = mastery::build_training_set(train);
  std::vector<double> history;
  const auto model =
      mastery::train_cfa_model(pairs, ctx.cfg.mastery, mix_seed(ctx.cfg.seed, 0x3A), &history);
  {
    std::ofstream out(ctx.path("mastery_model.ckpt"), std::ios::binary);
    model.save(out, {"stratpred command=" + ctx.command + " config=" + io::hex64(ctx.hash) +
                     " seed=" + std::to_string(ctx.cfg.seed)});
  }
  const auto table = mastery::compute_alpha(model, train);
  std::ostringstream os;
  os << ctx.header();
  mastery::save_mastery_table(os, table);
  io::write_file(ctx.path("mastery_table.tsv"), os.str());
}

void stage_embed(const StageContext& ctx) {
  const corpus::Corpus full = load_corpus(ctx);
  auto [train, test] = harness::split_corpus(full, ctx.cfg.test_fraction,
                                             mix_seed(ctx.cfg.seed, kSplitSalt));
  mastery::MasteryTable table;
  const mastery::MasteryTable* table_ptr = nullptr;
  if (ctx.cfg.ablation == "ssms") {
    table = load_mastery_artifact(ctx);
    table_ptr = &table;
  }
  embedding::WalkConfig walk = ctx.cfg.walk;
  walk.seed = mix_seed(ctx.cfg.seed, 0x3B);
  const auto embeddings = embedding::generate_embeddings(train, table_ptr, walk);
  std::ostringstream os;
  os << ctx.header();
  embedding::save_embeddings(os, embeddings);
  io::write_file(ctx.path("embeddings.tsv"), os.str());
}

void stage_cluster(const StageContext& ctx) {
  const corpus::Corpus full = load_corpus(ctx);
  auto [train, test] = harness::split_corpus(full, ctx.cfg.test_fraction,
                                             mix_seed(ctx.cfg.seed, kSplitSalt));
  clustering::ClusterModel model;
  if (ctx.cfg.ablation == "ns") {
    model =
        harness::make_random_clusters(train, ctx.cfg.random_clusters, mix_seed(ctx.cfg.seed, 0x3C));
  } else {
    const auto embeddings = load_embeddings_artifact(ctx);
    clustering::RefinementConfig refine = ctx.cfg.refine;
    refine.seed = mix_seed(ctx.cfg.seed, 0x3C);
    model = clustering::coarse_to_fine(train, embeddings, refine);
  }
  std::ostringstream os;
  os << ctx.header();
  clustering::save_cluster_model(os, model);
  io::write_file(ctx.path("clusters.tsv"), os.str());
}

void stage_train_predictor(const StageContext& ctx) {
  const corpus::Corpus full = load_corpus(ctx);
  auto [train, test] = harness::split_corpus(full, ctx.cfg.test_fraction,
                                             mix_seed(ctx.cfg.seed, kSplitSalt));
  const auto embeddings = load_embeddings_artifact(ctx);
  const auto method = harness::parse_method(ctx.cfg.method);
  clustering::ClusterModel clusters;
  const clustering::ClusterModel* clusters_ptr = nullptr;
  if (*method == harness::SamplingMethod::ClusterRoundRobin ||
      *method == harness::SamplingMethod::RandomClusters) {
    clusters = load_clusters_artifact(ctx);
    clusters_ptr = &clusters;
  }
  const std::size_t budget =
      ctx.cfg.resolve_budget(ctx.cfg.budgets.at(0), train.traces.size());
  const auto samples = harness::sample_training_set(train, *method, budget, clusters_ptr,
                                                    mix_seed(ctx.cfg.seed, 0x5A));
  std::vector<double> history;
  const auto model = predictor::train_predictor(samples, embeddings, ctx.cfg.predictor,
                                                mix_seed(ctx.cfg.seed, 0x5B), &history);
  std::ofstream out(ctx.path("predictor.ckpt"), std::ios::binary);
  model.save(out, {"stratpred command=" + ctx.command + " config=" + io::hex64(ctx.hash) +
                   " seed=" + std::to_string(ctx.cfg.seed)});
}

void stage_predict(const StageContext& ctx) {
  const corpus::Corpus full = load_corpus(ctx);
  auto [train, test] = harness::split_corpus(full, ctx.cfg.test_fraction,
                                             mix_seed(ctx.cfg.seed, kSplitSalt));
  const auto embeddings = load_embeddings_artifact(ctx);
  const auto model = load_predictor_artifact(ctx);
  std::ostringstream os;
  os << ctx.header();
  os << "# columns\tstudent\tproblem\tpredicted_kcs\tactual_kcs\n";
  for (const auto& t : test.traces) {
    if (embeddings.find(embedding::NodeKind::Student, t.student_id) == nullptr ||
        embeddings.find(embedding::NodeKind::Problem, t.problem_id) == nullptr) {
      continue;
    }
    const auto pred = predictor::predict(model, t.student_id, t.problem_id, embeddings);
    os << t.student_id << '\t' << t.problem_id << '\t';
    for (std::size_t i = 0; i < pred.kcs.size(); ++i) os << (i ? "," : "") << pred.kcs[i];
    os << '\t';
    for (std::size_t i = 0; i < t.kcs.size(); ++i) os << (i ? "," : "") << t.kcs[i];
    os << '\n';
  }
  io::write_file(ctx.path("predictions.tsv"), os.str());
}

nlohmann::ordered_json evaluate_json(const StageContext& ctx) {
  const corpus::Corpus full = load_corpus(ctx);
  auto [train, test] = harness::split_corpus(full, ctx.cfg.test_fraction,
                                             mix_seed(ctx.cfg.seed, kSplitSalt));
  const auto embeddings = load_embeddings_artifact(ctx);
  const auto model = load_predictor_artifact(ctx);
  double sum = 0.0;
  std::size_t evaluated = 0, skipped = 0;
  for (const auto& t : test.traces) {
    if (embeddings.find(embedding::NodeKind::Student, t.student_id) == nullptr ||
        embeddings.find(embedding::NodeKind::Problem, t.problem_id) == nullptr) {
      ++skipped;
      continue;
    }
    const auto pred = predictor::predict(model, t.student_id, t.problem_id, embeddings);
    sum += predictor::step_accuracy(pred.kcs, t.kcs);
    ++evaluated;
  }
  nlohmann::ordered_json doc;
  doc["meta"] = meta_json(ctx);
  doc["mean_step_accuracy"] = evaluated > 0 ? sum / evaluated : 0.0;
  doc["evaluated_traces"] = evaluated;
  doc["skipped_traces"] = skipped;
  doc["train_size"] = train.traces.size();
  doc["test_size"] = test.traces.size();
  return doc;
}

void stage_evaluate(const StageContext& ctx) {
  const nlohmann::ordered_json doc = evaluate_json(ctx);
  io::write_file(ctx.path("evaluation.json"), doc.dump(2) + "\n");
  std::ostringstream csv;
  csv << ctx.header();
  csv << "mean_step_accuracy,evaluated_traces,skipped_traces,train_size,test_size\n";
  csv << doc["mean_step_accuracy"].dump() << ',' << doc["evaluated_traces"] << ','
      << doc["skipped_traces"] << ',' << doc["train_size"] << ',' << doc["test_size"] << "\n";
  io::write_file(ctx.path("evaluation.csv"), csv.str());
}

void stage_fairness(const StageContext& ctx) {
  const corpus::Corpus full = load_corpus(ctx);
  auto [train, test] = harness::split_corpus(full, ctx.cfg.test_fraction,
                                             mix_seed(ctx.cfg.seed, kSplitSalt));
  const auto embeddings = load_embeddings_artifact(ctx);
  const auto model = load_predictor_artifact(ctx);
  const auto report = harness::fairness_report(model, test, embeddings);
  std::ostringstream js;
  harness::write_fairness_json(js, report);
  nlohmann::ordered_json doc = nlohmann::ordered_json::parse(js.str());
  nlohmann::ordered_json wrapped;
  wrapped["meta"] = meta_json(ctx);
  for (auto& [k, v] : doc.items()) wrapped[k] = v;
  io::write_file(ctx.path("fairness.json"), wrapped.dump(2) + "\n");
  std::ostringstream csv;
  csv << ctx.header();
  harness::write_fairness_csv(csv, report);
  io::write_file(ctx.path("fairness.csv"), csv.str());
}

void stage_ablate(const StageContext& ctx) {
  const corpus::Corpus full = load_corpus(ctx);
  auto [train, test] = harness::split_corpus(full, ctx.cfg.test_fraction,
                                             mix_seed(ctx.cfg.seed, kSplitSalt));
  harness::ExperimentConfigs configs;
  configs.mastery = ctx.cfg.mastery;
  configs.walk = ctx.cfg.walk;
  configs.refine = ctx.cfg.refine;
  configs.predictor = ctx.cfg.predictor;
  configs.test_fraction = ctx.cfg.test_fraction;
  configs.n_runs = ctx.cfg.runs;
  configs.random_clusters = ctx.cfg.random_clusters;
  std::vector<std::size_t> budgets;
  for (double b : ctx.cfg.budgets) budgets.push_back(ctx.cfg.resolve_budget(b, train.traces.size()));

  harness::SweepResult all;
  const auto primary = *harness::parse_method(ctx.cfg.method);
  for (const harness::Ablation ab :
       {harness::Ablation::NoSymmetry, harness::Ablation::Symmetry,
        harness::Ablation::SymmetryMastery}) {
    const auto result = harness::run_experiment(full, primary, budgets, ab, configs, ctx.cfg.seed);
    all.cells.insert(all.cells.end(), result.cells.begin(), result.cells.end());
  }
  for (const std::string& name : ctx.cfg.baseline_methods) {
    const auto m = harness::parse_method(name);
    if (!m.has_value()) throw ConfigError("unknown baseline method \"" + name + "\"");
    if (*m == primary) continue;
    const auto result = harness::run_experiment(full, *m, budgets,
                                                harness::Ablation::SymmetryMastery, configs,
                                                ctx.cfg.seed);
    all.cells.insert(all.cells.end(), result.cells.begin(), result.cells.end());
  }
  std::ostringstream js;
  harness::write_sweep_json(js, all);
  nlohmann::ordered_json doc = nlohmann::ordered_json::parse(js.str());
  nlohmann::ordered_json wrapped;
  wrapped["meta"] = meta_json(ctx);
  for (auto& [k, v] : doc.items()) wrapped[k] = v;
  io::write_file(ctx.path("sweep.json"), wrapped.dump(2) + "\n");
  std::ostringstream csv;
  csv << ctx.header();
  harness::write_sweep_csv(csv, all);
  io::write_file(ctx.path("sweep.csv"), csv.str());
}

void stage_report(const StageContext& ctx) {
  nlohmann::ordered_json doc;
  doc["meta"] = meta_json(ctx);
  doc["evaluation"] = nlohmann::ordered_json::parse(io::read_file(ctx.path("evaluation.json")));
  doc["fairness"] = nlohmann::ordered_json::parse(io::read_file(ctx.path("fairness.json")));
  io::write_file(ctx.path("report.json"), doc.dump(2) + "\n");
}

}  // namespace

std::uint64_t PipelineConfig::config_hash() const { return io::fnv1a(canonical_config(*this)); }

std::string PipelineConfig::path(const std::string& artifact) const {
  return out_dir + "/" + artifact;
}

std::size_t PipelineConfig::resolve_budget(double budget, std::size_t train_size) const {
  std::size_t n;
  if (budget < 1.0) {
    n = static_cast<std::size_t>(std::lround(budget * static_cast<double>(train_size)));
  } else {
    n = static_cast<std::size_t>(std::lround(budget));
  }
  return std::clamp<std::size_t>(n, 1, train_size);
}

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages = {
      "gen-data", "ingest", "train-mastery", "embed",
      "cluster",  "train-predictor", "evaluate", "fairness"};
  return stages;
}

int run_command(const PipelineConfig& config, const std::string& command) {
  StageContext ctx{config, command, config.config_hash()};
  const auto start = std::chrono::steady_clock::now();

  if (command == "pipeline") {
    for (const std::string& stage : pipeline_stages()) {
      if (stage == "gen-data" && !config.has_world && !config.ingest_input.empty()) continue;
      if (stage == "train-mastery" && config.ablation != "ssms") continue;
      run_command(config, stage);
    }
    stage_report(ctx);
  } else if (command == "gen-data") {
    stage_gen_data(ctx);
  } else if (command == "ingest") {
    stage_ingest(ctx);
  } else if (command == "train-mastery") {
    stage_train_mastery(ctx);
  } else if (command == "embed") {
    stage_embed(ctx);
  } else if (command == "cluster") {
    stage_cluster(ctx);
  } else if (command == "train-predictor") {
    stage_train_predictor(ctx);
  } else if (command == "predict") {
    stage_predict(ctx);
  } else if (command == "evaluate") {
    stage_evaluate(ctx);
  } else if (command == "fairness") {
    stage_fairness(ctx);
  } else if (command == "ablate") {
    stage_ablate(ctx);
  } else {
    throw std::invalid_argument("unknown command: " + command);
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  io::append_manifest_line(config.path("run_manifest.tsv"), command, ctx.hash, config.seed, wall);
  return 0;
}

}  // namespace stratpred::pipeline
