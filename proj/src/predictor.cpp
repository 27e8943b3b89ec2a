#include "stratpred/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "stratpred/rng.hpp"

namespace stratpred::predictor {

using tensor::Matrix;
using tensor::Tape;

PredictorConfig PredictorConfig::desk_scale() {
  PredictorConfig c;
  c.latent_dim = 64;
  c.epochs = 30;
  return c;
}

void PredictorConfig::validate() const {
  if (latent_dim < 1 || epochs < 1 || batch_size < 1 || learning_rate <= 0.0) {
    throw std::invalid_argument("predictor config values must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("predictor dropout must be in [0,1)");
  }
}

namespace {

const char* kGateNames[4] = {"i", "f", "o", "g"};

}  // namespace

PredictorModel::PredictorModel(PredictorConfig config, std::vector<std::string> kc_vocab,
                               int embed_dim, std::uint64_t seed)
    : config_(config), kc_vocab_(std::move(kc_vocab)), embed_dim_(embed_dim) {
  config_.validate();
  std::sort(kc_vocab_.begin(), kc_vocab_.end());
  kc_vocab_.erase(std::unique(kc_vocab_.begin(), kc_vocab_.end()), kc_vocab_.end());
  for (std::size_t i = 0; i < kc_vocab_.size(); ++i) kc_index_[kc_vocab_[i]] = static_cast<int>(i);
  Rng rng(mix_seed(seed, 0x15F));
  const int in_dim = 2 * embed_dim_;
  const int latent = config_.latent_dim;
  const int out_dim = static_cast<int>(kc_vocab_.size()) + 1;
  auto init = [&](const std::string& name, int rows, int cols) {
    const double s = std::sqrt(1.0 / rows);
    params_.create_uniform(name, rows, cols, -s, s, rng);
  };
  for (const char* gate : kGateNames) {
    init(std::string("in.w_") + gate, in_dim, latent);
    init(std::string("rec.u_") + gate, latent, latent);
    params_.create(std::string("b_") + gate, 1, latent);
  }
  init("out.w", latent, out_dim);
  params_.create("out.b", 1, out_dim);
}

Tape::NodeId PredictorModel::loss_on_tape(Tape& tape, const std::vector<double>& input,
                                          const std::vector<int>& target_tokens,
                                          Rng* dropout_rng) {
  if (target_tokens.empty()) throw std::invalid_argument("empty target sequence");
  const int latent = config_.latent_dim;
  const int out_dim = static_cast<int>(kc_vocab_.size()) + 1;
  Matrix x(1, static_cast<int>(input.size()));
  x.data = input;
  const Tape::NodeId x0 = tape.constant(std::move(x));

  Tape::NodeId h = -1;
  Tape::NodeId c = -1;
  Tape::NodeId total = -1;
  for (std::size_t t = 0; t < target_tokens.size(); ++t) {
    auto gate = [&](int gi) {
      Tape::NodeId pre = tape.param(params_, std::string("b_") + kGateNames[gi]);
      if (t == 0) {
        // The concatenated student/problem vector is fed only at step 0.
        pre = tape.add(tape.matmul(x0, tape.param(params_, std::string("in.w_") + kGateNames[gi])),
                       pre);
      }
      if (h >= 0) {
        pre = tape.add(tape.matmul(h, tape.param(params_, std::string("rec.u_") + kGateNames[gi])),
                       pre);
      }
      return pre;
    };
    const Tape::NodeId i_g = tape.sigmoid(gate(0));
    const Tape::NodeId f_g = tape.sigmoid(gate(1));
    const Tape::NodeId o_g = tape.sigmoid(gate(2));
    const Tape::NodeId g_g = tape.tanh_op(gate(3));
    Tape::NodeId c_new = tape.hadamard(i_g, g_g);
    if (c >= 0) c_new = tape.add(tape.hadamard(f_g, c), c_new);
    c = c_new;
    h = tape.hadamard(o_g, tape.tanh_op(c));
    Tape::NodeId h_out = h;
    if (dropout_rng != nullptr && config_.dropout > 0.0) {
      h_out = tape.dropout(h_out, config_.dropout, *dropout_rng);
    }
    const Tape::NodeId logits = tape.add_rowvec(tape.matmul(h_out, tape.param(params_, "out.w")),
                                                tape.param(params_, "out.b"));
    Matrix target(1, out_dim);
    target.at(0, target_tokens[t]) = 1.0;
    const Tape::NodeId step_loss = tape.cross_entropy(logits, target);
    total = total < 0 ? step_loss : tape.add(total, step_loss);
    (void)latent;
  }
  return tape.scale(total, 1.0 / static_cast<double>(target_tokens.size()));
}

StrategyPrediction PredictorModel::decode(const std::vector<double>& input) const {
  const int latent = config_.latent_dim;
  const int out_dim = static_cast<int>(kc_vocab_.size()) + 1;
  Matrix h(1, latent), c(1, latent);
  Matrix x(1, static_cast<int>(input.size()));
  x.data = input;

  StrategyPrediction out;
  for (int t = 0; t < config_.max_decode_len; ++t) {
    Matrix gates[4];
    for (int gi = 0; gi < 4; ++gi) {
      Matrix pre = params_.slot(std::string("b_") + kGateNames[gi]).value;
      if (t == 0) {
        const Matrix xs = tensor::matmul(x, params_.slot(std::string("in.w_") + kGateNames[gi]).value);
        for (int j = 0; j < latent; ++j) pre.at(0, j) += xs.at(0, j);
      } else {
        const Matrix hs = tensor::matmul(h, params_.slot(std::string("rec.u_") + kGateNames[gi]).value);
        for (int j = 0; j < latent; ++j) pre.at(0, j) += hs.at(0, j);
      }
      gates[gi] = std::move(pre);
    }
    for (int j = 0; j < latent; ++j) {
      const double ig = 1.0 / (1.0 + std::exp(-gates[0].at(0, j)));
      const double fg = 1.0 / (1.0 + std::exp(-gates[1].at(0, j)));
      const double og = 1.0 / (1.0 + std::exp(-gates[2].at(0, j)));
      const double gg = std::tanh(gates[3].at(0, j));
      c.at(0, j) = (t == 0 ? 0.0 : fg * c.at(0, j)) + ig * gg;
      h.at(0, j) = og * std::tanh(c.at(0, j));
    }
    Matrix logits = tensor::matmul(h, params_.slot("out.w").value);
    for (int j = 0; j < out_dim; ++j) logits.at(0, j) += params_.slot("out.b").value.at(0, j);
    tensor::row_softmax_inplace(logits);
    int best = 0;
    for (int j = 1; j < out_dim; ++j)
      if (logits.at(0, j) > logits.at(0, best)) best = j;
    out.step_probs.push_back(logits.data);
    if (best == stop_index()) break;
    out.kcs.push_back(kc_vocab_[best]);
  }
  return out;
}

PredictorModel train_predictor(const std::vector<const corpus::StrategyTrace*>& samples,
                               const embedding::EmbeddingSet& embeddings,
                               const PredictorConfig& config, std::uint64_t seed,
                               std::vector<double>* loss_history) {
  if (samples.empty()) throw std::invalid_argument("train_predictor requires samples");
  config.validate();
  std::vector<std::string> vocab;
  std::size_t longest = 0;
  for (const auto* t : samples) {
    longest = std::max(longest, t->kcs.size());
    for (const std::string& kc : t->kcs) vocab.push_back(kc);
  }
  PredictorConfig cfg = config;
  if (cfg.max_decode_len == 0) cfg.max_decode_len = static_cast<int>(longest) + 1;
  if (cfg.max_decode_len < static_cast<int>(longest) + 1) {
    throw std::invalid_argument("max_decode_len must be at least longest strategy + 1");
  }

  // Inputs: concatenated student and problem embeddings, checked up front.
  std::vector<std::vector<double>> inputs;
  inputs.reserve(samples.size());
  for (const auto* t : samples) {
    const std::vector<double>* s = embeddings.find(embedding::NodeKind::Student, t->student_id);
    if (s == nullptr) throw std::runtime_error("no embedding for student \"" + t->student_id + "\"");
    const std::vector<double>* p = embeddings.find(embedding::NodeKind::Problem, t->problem_id);
    if (p == nullptr) throw std::runtime_error("no embedding for problem \"" + t->problem_id + "\"");
    std::vector<double> in(*s);
    in.insert(in.end(), p->begin(), p->end());
    inputs.push_back(std::move(in));
  }

  PredictorModel model(cfg, vocab, embeddings.dim, seed);
  std::vector<std::vector<int>> targets;
  targets.reserve(samples.size());
  for (const auto* t : samples) {
    std::vector<int> tok;
    tok.reserve(t->kcs.size() + 1);
    for (const std::string& kc : t->kcs) tok.push_back(model.kc_index_.at(kc));
    tok.push_back(model.stop_index());
    targets.push_back(std::move(tok));
  }

  Rng order_rng(mix_seed(seed, 0x0E));
  Rng dropout_rng(mix_seed(seed, 0xE0));
  tensor::AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Tape tape;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_fill = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      tape.reset();
      const Tape::NodeId loss = model.loss_on_tape(
          tape, inputs[order[i]], targets[order[i]], cfg.dropout > 0 ? &dropout_rng : nullptr);
      epoch_loss += tape.value(loss).data[0];
      tape.backward(loss);
      ++batch_fill;
      if (batch_fill == static_cast<std::size_t>(cfg.batch_size) || i + 1 == order.size()) {
        for (const std::string& name : model.params().names()) {
          Matrix& g = model.params().slot(name).grad;
          for (double& v : g.data) v /= static_cast<double>(batch_fill);
        }
        adam_step(model.params(), adam);
        batch_fill = 0;
      }
    }
    if (loss_history != nullptr) loss_history->push_back(epoch_loss / samples.size());
  }
  return model;
}

StrategyPrediction predict(const PredictorModel& model, const std::string& student,
                           const std::string& problem,
                           const embedding::EmbeddingSet& embeddings) {
  const std::vector<double>* s = embeddings.find(embedding::NodeKind::Student, student);
  if (s == nullptr) throw std::runtime_error("no embedding for student \"" + student + "\"");
  const std::vector<double>* p = embeddings.find(embedding::NodeKind::Problem, problem);
  if (p == nullptr) throw std::runtime_error("no embedding for problem \"" + problem + "\"");
  std::vector<double> in(*s);
  in.insert(in.end(), p->begin(), p->end());
  return model.decode(in);
}

double step_accuracy(const std::vector<std::string>& predicted,
                     const std::vector<std::string>& actual) {
  if (predicted.empty() && actual.empty()) return 1.0;
  const std::size_t overlap = std::min(predicted.size(), actual.size());
  std::size_t matches = 0;
  for (std::size_t i = 0; i < overlap; ++i)
    if (predicted[i] == actual[i]) ++matches;
  return static_cast<double>(matches) / static_cast<double>(std::max(predicted.size(), actual.size()));
}

void PredictorModel::save(std::ostream& out, const std::vector<std::string>& header_lines) const {
  std::vector<std::string> headers = header_lines;
  std::ostringstream cfg;
  cfg << "config " << config_.latent_dim << " " << config_.epochs << " " << config_.batch_size
      << " " << config_.learning_rate << " " << config_.dropout << " " << config_.max_decode_len
      << " " << embed_dim_;
  headers.push_back(cfg.str());
  std::ostringstream voc;
  voc << "vocab";
  for (const std::string& kc : kc_vocab_) voc << '\t' << kc;
  headers.push_back(voc.str());
  save_params(params_, out, headers);
}

PredictorModel PredictorModel::load(std::istream& in) {
  tensor::ParamStore store;
  const std::vector<std::string> headers = load_params(store, in);
  PredictorConfig cfg;
  std::vector<std::string> vocab;
  int embed_dim = 0;
  for (const std::string& h : headers) {
    if (h.rfind("config ", 0) == 0) {
      std::istringstream cs(h.substr(7));
      cs >> cfg.latent_dim >> cfg.epochs >> cfg.batch_size >> cfg.learning_rate >> cfg.dropout >>
          cfg.max_decode_len >> embed_dim;
    } else if (h.rfind("vocab", 0) == 0) {
      std::istringstream vs(h);
      std::string cell;
      std::getline(vs, cell, '\t');
      while (std::getline(vs, cell, '\t')) vocab.push_back(cell);
    }
  }
  PredictorModel model(cfg, vocab, embed_dim, 0);
  for (const std::string& name : model.params_.names()) {
    model.params_.slot(name).value = store.slot(name).value;
  }
  return model;
}

}  // namespace stratpred::predictor
