#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stratpred/corpus.hpp"
#include "stratpred/tensor.hpp"

namespace stratpred::mastery {

struct MasteryModelConfig {
  int model_dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int head_dim = 16;  // model_dim must equal n_heads * head_dim
  int max_seq_len = 32;
  double dropout_rate = 0.1;
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-3;

  // Published-scale settings for the same architecture.
  static MasteryModelConfig paper_scale();
  void validate() const;
};

// One supervised example: a worked problem's KC sequence and its step outcomes.
struct TrainingPair {
  std::string student_id;
  std::string problem_id;
  std::vector<std::string> kcs;
  std::vector<int> cfas;
};

// For each student and each unit they completed (at least one trace in every
// section of the unit), picks the lexicographically first worked problem of
// each section in that unit.
std::vector<TrainingPair> build_training_set(const corpus::Corpus& corpus);

// Step-level probe of a trained model: the final-layer encoder-decoder
// attention per decoded step (averaged over heads) and the thresholded CFA
// predictions.
struct AttentionSnapshot {
  std::vector<std::vector<double>> attention;  // [decode step][encoder position]
  std::vector<double> cfa_prob;
  std::vector<int> predicted_cfa;  // prob >= 0.5 -> 1
};

// Encoder-decoder attention model over KC sequences predicting per-step CFA.
class MasteryModel {
 public:
  MasteryModel() = default;
  MasteryModel(MasteryModelConfig config, std::vector<std::string> kc_vocab, std::uint64_t seed);

  const MasteryModelConfig& config() const { return config_; }
  const std::vector<std::string>& kc_vocab() const { return kc_vocab_; }

  // Greedy decode; deterministic. Throws on an empty sequence or one longer
  // than max_seq_len.
  AttentionSnapshot attend(const std::vector<std::string>& kcs) const;

  // Teacher-forced training loss for one pair, recorded on the given tape.
  // Dropout is applied only when dropout_rng is non-null.
  tensor::Tape::NodeId loss_on_tape(tensor::Tape& tape, const TrainingPair& pair,
                                    Rng* dropout_rng);

  tensor::ParamStore& params() { return params_; }
  const tensor::ParamStore& params() const { return params_; }

  void save(std::ostream& out, const std::vector<std::string>& header_lines) const;
  static MasteryModel load(std::istream& in);

 private:
  struct Forward;
  void run_forward(tensor::Tape& tape, const std::vector<std::string>& kcs,
                   const std::vector<int>& decoder_inputs, Rng* dropout_rng, Forward& fwd) const;
  int kc_index(const std::string& kc) const;

  MasteryModelConfig config_;
  std::vector<std::string> kc_vocab_;
  std::map<std::string, int> kc_index_;
  // Mutable so attend() can reuse the parameter store on a const model; the
  // inference path never writes gradients.
  mutable tensor::ParamStore params_;
};

// Trains with per-step binary cross-entropy and Adam. loss_history, when
// given, receives the mean training loss per epoch.
MasteryModel train_cfa_model(const std::vector<TrainingPair>& pairs,
                             const MasteryModelConfig& config, std::uint64_t seed,
                             std::vector<double>* loss_history = nullptr);

// Attention-derived skill estimates.
struct MasteryTable {
  // (student, problem, kc) -> alpha in [0,1]
  std::map<std::tuple<std::string, std::string, std::string>, double> alpha;
  // (student, kc) -> mean alpha over that student's problems using the kc
  std::map<std::pair<std::string, std::string>, double> student_kc_mean;

  std::optional<double> lookup(const std::string& student, const std::string& problem,
                               const std::string& kc) const;
  std::optional<double> student_mean(const std::string& student, const std::string& kc) const;
};

// Splits each step's attention mass on positions holding a KC between the
// steps predicted correct (numerator) and predicted incorrect; alpha is the
// correct share. Exposed separately so a fixed snapshot can be scored.
void accumulate_alpha(const corpus::StrategyTrace& trace, const AttentionSnapshot& snapshot,
                      std::map<std::tuple<std::string, std::string, std::string>, double>& num,
                      std::map<std::tuple<std::string, std::string, std::string>, double>& den);

MasteryTable compute_alpha(const MasteryModel& model, const corpus::Corpus& corpus);

// Same, restricted to the given students (they must exist in the corpus).
MasteryTable compute_alpha(const MasteryModel& model, const corpus::Corpus& corpus,
                           const std::vector<std::string>& students);

void save_mastery_table(std::ostream& out, const MasteryTable& table);
MasteryTable load_mastery_table(std::istream& in);

}  // namespace stratpred::mastery
