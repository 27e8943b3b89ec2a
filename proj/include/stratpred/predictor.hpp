#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "stratpred/corpus.hpp"
#include "stratpred/embedding.hpp"
#include "stratpred/tensor.hpp"

namespace stratpred::predictor {

struct PredictorConfig {
  int latent_dim = 200;
  int epochs = 60;
  int batch_size = 30;
  double learning_rate = 0.01;
  double dropout = 0.1;
  int max_decode_len = 0;  // 0: longest training strategy + 1

  static PredictorConfig desk_scale();
  void validate() const;
};

struct StrategyPrediction {
  std::vector<std::string> kcs;                  // stop symbol stripped
  std::vector<std::vector<double>> step_probs;   // over kc_vocab + stop, rows sum to 1
};

// One-to-many recurrent decoder: the concatenated student and problem vectors
// are fed at step 0, later steps run on the hidden state alone, and each step
// emits a distribution over the KC vocabulary plus a stop symbol.
class PredictorModel {
 public:
  PredictorModel() = default;
  PredictorModel(PredictorConfig config, std::vector<std::string> kc_vocab, int embed_dim,
                 std::uint64_t seed);

  const PredictorConfig& config() const { return config_; }
  const std::vector<std::string>& kc_vocab() const { return kc_vocab_; }
  int embed_dim() const { return embed_dim_; }
  int stop_index() const { return static_cast<int>(kc_vocab_.size()); }
  int max_decode_len() const { return config_.max_decode_len; }

  tensor::Tape::NodeId loss_on_tape(tensor::Tape& tape, const std::vector<double>& input,
                                    const std::vector<int>& target_tokens, Rng* dropout_rng);

  StrategyPrediction decode(const std::vector<double>& input) const;

  tensor::ParamStore& params() { return params_; }
  const tensor::ParamStore& params() const { return params_; }

  void save(std::ostream& out, const std::vector<std::string>& header_lines) const;
  static PredictorModel load(std::istream& in);

 private:
  PredictorConfig config_;
  std::vector<std::string> kc_vocab_;
  std::map<std::string, int> kc_index_;
  int embed_dim_ = 0;
  mutable tensor::ParamStore params_;

  friend PredictorModel train_predictor(const std::vector<const corpus::StrategyTrace*>&,
                                        const embedding::EmbeddingSet&, const PredictorConfig&,
                                        std::uint64_t, std::vector<double>*);
};

// Trains on the sampled traces with categorical cross-entropy and Adam.
// Throws if a sampled student or problem has no embedding, naming the node.
PredictorModel train_predictor(const std::vector<const corpus::StrategyTrace*>& samples,
                               const embedding::EmbeddingSet& embeddings,
                               const PredictorConfig& config, std::uint64_t seed,
                               std::vector<double>* loss_history = nullptr);

// Greedy argmax decoding until stop or max_decode_len; deterministic.
StrategyPrediction predict(const PredictorModel& model, const std::string& student,
                           const std::string& problem,
                           const embedding::EmbeddingSet& embeddings);

// Positionwise match count over max(len) positions; 1.0 when both are empty.
double step_accuracy(const std::vector<std::string>& predicted,
                     const std::vector<std::string>& actual);

}  // namespace stratpred::predictor
