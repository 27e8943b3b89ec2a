#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "stratpred/pipeline.hpp"

namespace {

const char* kCommands[] = {"gen-data",       "ingest",   "train-mastery", "embed",
                           "cluster",        "train-predictor", "predict", "evaluate",
                           "fairness",       "ablate",   "pipeline"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"strategy prediction pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string method;
  std::string ablation;
  double budget = -1.0;
  long long seed = -1;
  bool paper_scale = false;

  std::vector<CLI::App*> subs;
  for (const char* name : kCommands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "pipeline config file");
    sub->add_option("--seed", seed, "override the run seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--budget", budget,
                    "training budget (fraction of train if < 1, else a count)");
    sub->add_option("--method", method, "sampling method")
        ->check(CLI::IsMember({"as", "gs", "rs", "ns"}));
    sub->add_option("--ablation", ablation, "representation ablation")
        ->check(CLI::IsMember({"ns", "ss", "ssms"}));
    sub->add_flag("--paper-scale", paper_scale, "use published-scale model settings");
    subs.push_back(sub);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    stratpred::pipeline::PipelineConfig cfg =
        config_path.empty()
            ? stratpred::pipeline::PipelineConfig::defaults()
            : stratpred::pipeline::PipelineConfig::from_file(config_path, paper_scale);
    if (config_path.empty() && paper_scale) {
      cfg.mastery = stratpred::mastery::MasteryModelConfig::paper_scale();
      cfg.walk.dim = 300;
      cfg.predictor = stratpred::predictor::PredictorConfig{};
      cfg.paper_scale = true;
    }
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (const char* env = std::getenv("STRATPRED_REPORTS_DIR"); env != nullptr && *env != '\0') {
      cfg.out_dir = env;
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!method.empty()) cfg.method = method;
    if (!ablation.empty()) cfg.ablation = ablation;
    if (budget > 0.0) cfg.budgets = {budget};

    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (subs[i]->parsed()) {
        return stratpred::pipeline::run_command(cfg, kCommands[i]);
      }
    }
    std::cerr << "error: no command given\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
