#include "stratpred/mastery.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "stratpred/rng.hpp"
#include "stratpred/symmetry.hpp"

namespace stratpred::mastery {

using tensor::Matrix;
using tensor::Tape;

MasteryModelConfig MasteryModelConfig::paper_scale() {
  MasteryModelConfig c;
  c.model_dim = 512;
  c.n_layers = 6;
  c.n_heads = 8;
  c.head_dim = 64;
  c.max_seq_len = 150;
  c.dropout_rate = 0.1;
  return c;
}

void MasteryModelConfig::validate() const {
  if (model_dim != n_heads * head_dim) {
    throw std::invalid_argument("model_dim must equal n_heads * head_dim");
  }
  if (model_dim < 1 || n_layers < 1 || n_heads < 1 || head_dim < 1 || max_seq_len < 1 ||
      epochs < 1 || batch_size < 1) {
    throw std::invalid_argument("mastery config counts must be >= 1");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("dropout_rate must be in [0,1)");
  }
}

std::vector<TrainingPair> build_training_set(const corpus::Corpus& corpus) {
  std::vector<TrainingPair> pairs;
  for (const std::string& student : corpus.students) {
    const auto traces = corpus.traces_of_student(student);
    std::set<std::string> worked_sections;
    for (const auto* t : traces) worked_sections.insert(t->section_id);
    // A unit counts once the student worked in it; each worked section of the
    // unit contributes its first problem by id.
    for (const auto& [unit, sections] : corpus.curriculum.unit_sections) {
      for (const std::string& sec : sections) {
        if (worked_sections.count(sec) == 0) continue;
        const corpus::StrategyTrace* chosen = nullptr;
        for (const auto* t : traces) {
          if (t->section_id == sec && (chosen == nullptr || t->problem_id < chosen->problem_id)) {
            chosen = t;
          }
        }
        if (chosen != nullptr) {
          pairs.push_back({chosen->student_id, chosen->problem_id, chosen->kcs, chosen->cfas});
        }
      }
    }
  }
  return pairs;
}

namespace {

constexpr int kTokenStart = 0;
constexpr int kTokenCfa0 = 1;
constexpr int kTokenCfa1 = 2;

Matrix one_hot_rows(const std::vector<int>& indices, int width) {
  Matrix m(static_cast<int>(indices.size()), width);
  for (std::size_t i = 0; i < indices.size(); ++i) m.at(static_cast<int>(i), indices[i]) = 1.0;
  return m;
}

Matrix causal_mask(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m.at(i, j) = -1e9;
  return m;
}

Matrix position_rows(int len, int dim) {
  Matrix m(len, dim);
  for (int t = 0; t < len; ++t) {
    const std::vector<double> row = symmetry::positional_encoding(t, dim);
    for (int k = 0; k < dim; ++k) m.at(t, k) = row[k];
  }
  return m;
}

}  // namespace

struct MasteryModel::Forward {
  Tape::NodeId encoder_out = -1;
  Tape::NodeId logits = -1;
  std::vector<Tape::NodeId> final_cross_attention;  // one node per head
};

MasteryModel::MasteryModel(MasteryModelConfig config, std::vector<std::string> kc_vocab,
                           std::uint64_t seed)
    : config_(config), kc_vocab_(std::move(kc_vocab)) {
  config_.validate();
  std::sort(kc_vocab_.begin(), kc_vocab_.end());
  kc_vocab_.erase(std::unique(kc_vocab_.begin(), kc_vocab_.end()), kc_vocab_.end());
  for (std::size_t i = 0; i < kc_vocab_.size(); ++i) {
    kc_index_[kc_vocab_[i]] = static_cast<int>(i) + 1;  // 0 is the unknown-KC row
  }
  Rng rng(mix_seed(seed, 0x3E2A));
  const int d = config_.model_dim;
  const int dk = config_.head_dim;
  const int ffn = 2 * d;
  auto init = [&](const std::string& name, int rows, int cols) {
    const double s = std::sqrt(1.0 / rows);
    params_.create_uniform(name, rows, cols, -s, s, rng);
  };
  init("kc_embed", static_cast<int>(kc_vocab_.size()) + 1, d);
  init("dec_embed", 3, d);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string el = "enc" + std::to_string(l);
    for (int h = 0; h < config_.n_heads; ++h) {
      const std::string eh = el + ".h" + std::to_string(h);
      init(eh + ".wq", d, dk);
      init(eh + ".wk", d, dk);
      init(eh + ".wv", d, dk);
      init(eh + ".wo", dk, d);
    }
    init(el + ".ffn.w1", d, ffn);
    params_.create(el + ".ffn.b1", 1, ffn);
    init(el + ".ffn.w2", ffn, d);
    params_.create(el + ".ffn.b2", 1, d);
    const std::string dl = "dec" + std::to_string(l);
    for (int h = 0; h < config_.n_heads; ++h) {
      for (const char* block : {".self.h", ".cross.h"}) {
        const std::string dh = dl + block + std::to_string(h);
        init(dh + ".wq", d, dk);
        init(dh + ".wk", d, dk);
        init(dh + ".wv", d, dk);
        init(dh + ".wo", dk, d);
      }
    }
    init(dl + ".ffn.w1", d, ffn);
    params_.create(dl + ".ffn.b1", 1, ffn);
    init(dl + ".ffn.w2", ffn, d);
    params_.create(dl + ".ffn.b2", 1, d);
  }
  init("out.w", d, 1);
  params_.create("out.b", 1, 1);
}

int MasteryModel::kc_index(const std::string& kc) const {
  auto it = kc_index_.find(kc);
  return it != kc_index_.end() ? it->second : 0;
}

void MasteryModel::run_forward(Tape& tape, const std::vector<std::string>& kcs,
                               const std::vector<int>& decoder_inputs, Rng* dropout_rng,
                               Forward& fwd) const {
  const int enc_len = static_cast<int>(kcs.size());
  const int dec_len = static_cast<int>(decoder_inputs.size());
  if (enc_len == 0) throw std::invalid_argument("attend: empty kc sequence");
  if (enc_len > config_.max_seq_len || dec_len > config_.max_seq_len) {
    throw std::runtime_error("sequence length " + std::to_string(enc_len) +
                             " exceeds max_seq_len " + std::to_string(config_.max_seq_len) +
                             "; raise max_seq_len or truncate traces");
  }
  const int d = config_.model_dim;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(config_.head_dim));
  tensor::ParamStore& params = params_;
  const double rate = config_.dropout_rate;
  auto maybe_dropout = [&](Tape::NodeId x) {
    return (dropout_rng != nullptr && rate > 0.0) ? tape.dropout(x, rate, *dropout_rng) : x;
  };

  auto attention_block = [&](const std::string& prefix, Tape::NodeId queries_in,
                             Tape::NodeId keys_in, const Matrix* mask,
                             std::vector<Tape::NodeId>* attn_out) {
    Tape::NodeId sum = -1;
    for (int h = 0; h < config_.n_heads; ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h);
      Tape::NodeId q = tape.matmul(queries_in, tape.param(params, hp + ".wq"));
      Tape::NodeId k = tape.matmul(keys_in, tape.param(params, hp + ".wk"));
      Tape::NodeId v = tape.matmul(keys_in, tape.param(params, hp + ".wv"));
      Tape::NodeId scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_dk);
      if (mask != nullptr) scores = tape.add(scores, tape.constant(*mask));
      Tape::NodeId attn = tape.row_softmax(scores);
      if (attn_out != nullptr) attn_out->push_back(attn);
      Tape::NodeId head = tape.matmul(tape.matmul(attn, v), tape.param(params, hp + ".wo"));
      sum = sum < 0 ? head : tape.add(sum, head);
    }
    return sum;
  };
  auto ffn_block = [&](const std::string& prefix, Tape::NodeId x) {
    Tape::NodeId h1 = tape.relu(tape.add_rowvec(tape.matmul(x, tape.param(params, prefix + ".w1")),
                                                tape.param(params, prefix + ".b1")));
    return tape.add_rowvec(tape.matmul(h1, tape.param(params, prefix + ".w2")),
                           tape.param(params, prefix + ".b2"));
  };

  // Encoder.
  Tape::NodeId x = fwd.encoder_out;
  if (x < 0) {
    std::vector<int> kc_rows(kcs.size());
    for (std::size_t i = 0; i < kcs.size(); ++i) kc_rows[i] = kc_index(kcs[i]);
    x = tape.add(tape.matmul(tape.constant(one_hot_rows(kc_rows, params_.slot("kc_embed").value.rows)),
                             tape.param(params, "kc_embed")),
                 tape.constant(position_rows(enc_len, d)));
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string el = "enc" + std::to_string(l);
      Tape::NodeId attn = attention_block(el, x, x, nullptr, nullptr);
      x = tape.layer_norm(tape.add(x, maybe_dropout(attn)));
      x = tape.layer_norm(tape.add(x, maybe_dropout(ffn_block(el + ".ffn", x))));
    }
    fwd.encoder_out = x;
  }
  if (dec_len == 0) return;

  // Decoder, teacher-forced on decoder_inputs.
  Tape::NodeId y = tape.add(
      tape.matmul(tape.constant(one_hot_rows(decoder_inputs, 3)), tape.param(params, "dec_embed")),
      tape.constant(position_rows(dec_len, d)));
  const Matrix mask = causal_mask(dec_len);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string dl = "dec" + std::to_string(l);
    const bool last = l == config_.n_layers - 1;
    Tape::NodeId self_attn = attention_block(dl + ".self", y, y, &mask, nullptr);
    y = tape.layer_norm(tape.add(y, maybe_dropout(self_attn)));
    std::vector<Tape::NodeId> cross_nodes;
    Tape::NodeId cross = attention_block(dl + ".cross", y, fwd.encoder_out, nullptr,
                                         last ? &cross_nodes : nullptr);
    if (last) fwd.final_cross_attention = cross_nodes;
    y = tape.layer_norm(tape.add(y, maybe_dropout(cross)));
    y = tape.layer_norm(tape.add(y, maybe_dropout(ffn_block(dl + ".ffn", y))));
  }
  fwd.logits = tape.add_rowvec(tape.matmul(y, tape.param(params, "out.w")),
                               tape.param(params, "out.b"));
}

Tape::NodeId MasteryModel::loss_on_tape(Tape& tape, const TrainingPair& pair, Rng* dropout_rng) {
  if (pair.kcs.empty() || pair.kcs.size() != pair.cfas.size()) {
    throw std::invalid_argument("training pair needs equal nonempty kc/cfa sequences");
  }
  std::vector<int> tokens(pair.kcs.size());
  tokens[0] = kTokenStart;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    tokens[t] = pair.cfas[t - 1] == 1 ? kTokenCfa1 : kTokenCfa0;
  }
  Forward fwd;
  run_forward(tape, pair.kcs, tokens, dropout_rng, fwd);
  Matrix targets(static_cast<int>(pair.cfas.size()), 1);
  for (std::size_t i = 0; i < pair.cfas.size(); ++i) targets.at(static_cast<int>(i), 0) = pair.cfas[i];
  return tape.binary_cross_entropy(fwd.logits, targets);
}

AttentionSnapshot MasteryModel::attend(const std::vector<std::string>& kcs) const {
  if (kcs.empty()) throw std::invalid_argument("attend: empty kc sequence");
  const int len = static_cast<int>(kcs.size());

  // The encoder does not depend on decoder tokens; run it once.
  Tape enc_tape;
  Forward enc_fwd;
  run_forward(enc_tape, kcs, {}, nullptr, enc_fwd);
  const Matrix encoder_out = enc_tape.value(enc_fwd.encoder_out);

  // Greedy decode: attention is causal, so each pass extends the token prefix
  // and the final full-length pass reproduces every earlier position.
  std::vector<int> tokens = {kTokenStart};
  AttentionSnapshot snap;
  for (int t = 0; t < len; ++t) {
    Tape tape;
    Forward fwd;
    fwd.encoder_out = tape.constant(encoder_out);
    run_forward(tape, kcs, tokens, nullptr, fwd);
    const Matrix& logits = tape.value(fwd.logits);
    const double prob = 1.0 / (1.0 + std::exp(-logits.at(t, 0)));
    const int bit = prob >= 0.5 ? 1 : 0;
    if (t + 1 < len) {
      tokens.push_back(bit == 1 ? kTokenCfa1 : kTokenCfa0);
    } else {
      // Final pass: collect probabilities and head-averaged cross attention.
      for (int i = 0; i < len; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits.at(i, 0)));
        snap.cfa_prob.push_back(p);
        snap.predicted_cfa.push_back(p >= 0.5 ? 1 : 0);
      }
      snap.attention.assign(len, std::vector<double>(len, 0.0));
      for (Tape::NodeId node : fwd.final_cross_attention) {
        const Matrix& a = tape.value(node);
        for (int i = 0; i < len; ++i)
          for (int j = 0; j < len; ++j) snap.attention[i][j] += a.at(i, j);
      }
      const double inv_heads = 1.0 / config_.n_heads;
      for (auto& row : snap.attention)
        for (double& v : row) v *= inv_heads;
    }
  }
  return snap;
}

MasteryModel train_cfa_model(const std::vector<TrainingPair>& pairs,
                             const MasteryModelConfig& config, std::uint64_t seed,
                             std::vector<double>* loss_history) {
  if (pairs.empty()) throw std::invalid_argument("train_cfa_model requires training pairs");
  config.validate();
  for (const TrainingPair& p : pairs) {
    if (static_cast<int>(p.kcs.size()) > config.max_seq_len) {
      throw std::runtime_error("training sequence length " + std::to_string(p.kcs.size()) +
                               " exceeds max_seq_len " + std::to_string(config.max_seq_len) +
                               "; raise max_seq_len or truncate traces");
    }
  }
  std::vector<std::string> vocab;
  for (const TrainingPair& p : pairs)
    for (const std::string& kc : p.kcs) vocab.push_back(kc);
  MasteryModel model(config, vocab, seed);

  Rng order_rng(mix_seed(seed, 0x0D));
  Rng dropout_rng(mix_seed(seed, 0xD0));
  tensor::AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Tape tape;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_fill = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      tape.reset();
      const Tape::NodeId loss = model.loss_on_tape(tape, pairs[order[i]],
                                                   config.dropout_rate > 0 ? &dropout_rng : nullptr);
      epoch_loss += tape.value(loss).data[0];
      tape.backward(loss);
      ++batch_fill;
      if (batch_fill == static_cast<std::size_t>(config.batch_size) || i + 1 == order.size()) {
        // Average the accumulated gradients over the minibatch.
        for (const std::string& name : model.params().names()) {
          Matrix& g = model.params().slot(name).grad;
          for (double& v : g.data) v /= static_cast<double>(batch_fill);
        }
        adam_step(model.params(), adam);
        batch_fill = 0;
      }
    }
    if (loss_history != nullptr) loss_history->push_back(epoch_loss / pairs.size());
  }
  return model;
}

std::optional<double> MasteryTable::lookup(const std::string& student, const std::string& problem,
                                           const std::string& kc) const {
  auto it = alpha.find(std::make_tuple(student, problem, kc));
  if (it == alpha.end()) return std::nullopt;
  return it->second;
}

std::optional<double> MasteryTable::student_mean(const std::string& student,
                                                 const std::string& kc) const {
  auto it = student_kc_mean.find(std::make_pair(student, kc));
  if (it == student_kc_mean.end()) return std::nullopt;
  return it->second;
}

void accumulate_alpha(const corpus::StrategyTrace& trace, const AttentionSnapshot& snapshot,
                      std::map<std::tuple<std::string, std::string, std::string>, double>& num,
                      std::map<std::tuple<std::string, std::string, std::string>, double>& den) {
  const std::size_t len = trace.kcs.size();
  if (snapshot.attention.size() != len || snapshot.predicted_cfa.size() != len) {
    throw std::invalid_argument("snapshot does not match trace length");
  }
  for (std::size_t i = 0; i < len; ++i) {
    auto& bucket = snapshot.predicted_cfa[i] == 1 ? num : den;
    for (std::size_t j = 0; j < len; ++j) {
      bucket[std::make_tuple(trace.student_id, trace.problem_id, trace.kcs[j])] +=
          snapshot.attention[i][j];
    }
  }
}

namespace {

MasteryTable alpha_over_traces(const MasteryModel& model, const corpus::Corpus& corpus,
                               const std::set<std::string>* student_filter) {
  std::map<std::tuple<std::string, std::string, std::string>, double> num, den;
  // Snapshots depend only on the KC sequence; traces sharing one are cached.
  std::map<std::vector<std::string>, AttentionSnapshot> cache;
  for (const corpus::StrategyTrace& trace : corpus.traces) {
    if (student_filter != nullptr && student_filter->count(trace.student_id) == 0) continue;
    auto it = cache.find(trace.kcs);
    if (it == cache.end()) it = cache.emplace(trace.kcs, model.attend(trace.kcs)).first;
    accumulate_alpha(trace, it->second, num, den);
  }
  MasteryTable table;
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> aggregate;
  for (const auto& [key, n] : num) {
    const auto dit = den.find(key);
    const double d = dit != den.end() ? dit->second : 0.0;
    table.alpha[key] = n / (n + d);
  }
  for (const auto& [key, d] : den) {
    if (num.count(key) == 0) table.alpha[key] = 0.0;
  }
  for (const auto& [key, a] : table.alpha) {
    auto& agg = aggregate[{std::get<0>(key), std::get<2>(key)}];
    agg.first += a;
    agg.second += 1;
  }
  for (const auto& [key, agg] : aggregate) {
    table.student_kc_mean[key] = agg.first / agg.second;
  }
  return table;
}

}  // namespace

MasteryTable compute_alpha(const MasteryModel& model, const corpus::Corpus& corpus) {
  return alpha_over_traces(model, corpus, nullptr);
}

MasteryTable compute_alpha(const MasteryModel& model, const corpus::Corpus& corpus,
                           const std::vector<std::string>& students) {
  const std::set<std::string> filter(students.begin(), students.end());
  return alpha_over_traces(model, corpus, &filter);
}

void save_mastery_table(std::ostream& out, const MasteryTable& table) {
  out << "# columns\tstudent\tproblem\tkc\talpha\n";
  char buf[64];
  for (const auto& [key, a] : table.alpha) {
    std::snprintf(buf, sizeof(buf), "%.17g", a);
    out << std::get<0>(key) << '\t' << std::get<1>(key) << '\t' << std::get<2>(key) << '\t' << buf
        << '\n';
  }
}

MasteryTable load_mastery_table(std::istream& in) {
  MasteryTable table;
  std::string line;
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> aggregate;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string student, problem, kc, value;
    if (!std::getline(ls, student, '\t') || !std::getline(ls, problem, '\t') ||
        !std::getline(ls, kc, '\t') || !std::getline(ls, value, '\t')) {
      throw std::runtime_error("malformed mastery table line: " + line);
    }
    const double a = std::stod(value);
    table.alpha[{student, problem, kc}] = a;
    auto& agg = aggregate[{student, kc}];
    agg.first += a;
    agg.second += 1;
  }
  for (const auto& [key, agg] : aggregate) table.student_kc_mean[key] = agg.first / agg.second;
  return table;
}

void MasteryModel::save(std::ostream& out, const std::vector<std::string>& header_lines) const {
  std::vector<std::string> headers = header_lines;
  std::ostringstream cfg;
  cfg << "config " << config_.model_dim << " " << config_.n_layers << " " << config_.n_heads << " "
      << config_.head_dim << " " << config_.max_seq_len << " " << config_.dropout_rate << " "
      << config_.epochs << " " << config_.batch_size << " " << config_.learning_rate;
  headers.push_back(cfg.str());
  std::ostringstream voc;
  voc << "vocab";
  for (const std::string& kc : kc_vocab_) voc << '\t' << kc;
  headers.push_back(voc.str());
  save_params(params_, out, headers);
}

MasteryModel MasteryModel::load(std::istream& in) {
  tensor::ParamStore store;
  const std::vector<std::string> headers = load_params(store, in);
  MasteryModelConfig cfg;
  std::vector<std::string> vocab;
  for (const std::string& h : headers) {
    if (h.rfind("config ", 0) == 0) {
      std::istringstream cs(h.substr(7));
      cs >> cfg.model_dim >> cfg.n_layers >> cfg.n_heads >> cfg.head_dim >> cfg.max_seq_len >>
          cfg.dropout_rate >> cfg.epochs >> cfg.batch_size >> cfg.learning_rate;
    } else if (h.rfind("vocab", 0) == 0) {
      std::istringstream vs(h);
      std::string cell;
      std::getline(vs, cell, '\t');
      while (std::getline(vs, cell, '\t')) vocab.push_back(cell);
    }
  }
  MasteryModel model(cfg, vocab, 0);
  for (const std::string& name : model.params_.names()) {
    model.params_.slot(name).value = store.slot(name).value;
  }
  return model;
}

}  // namespace stratpred::mastery
