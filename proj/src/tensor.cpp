#include "stratpred/tensor.hpp"
#include <memory>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace stratpred::tensor {

Matrix Matrix::full(int r, int c, double v) {
  Matrix m(r, c);
  std::fill(m.data.begin(), m.data.end(), v);
  return m;
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::uniform_random(int r, int c, double lo, double hi, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

void check_finite(const Matrix& m, const std::string& what) {
  for (double v : m.data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("non-finite value in " + what);
    }
  }
}

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
  }
}

}  // namespace

Matrix& ParamStore::create(const std::string& name, int rows, int cols) {
  require(!has(name), "parameter already exists: " + name);
  Slot s;
  s.value = Matrix(rows, cols);
  s.grad = Matrix(rows, cols);
  s.adam_m = Matrix(rows, cols);
  s.adam_v = Matrix(rows, cols);
  order_.push_back(name);
  return slots_.emplace(name, std::move(s)).first->second.value;
}

Matrix& ParamStore::create_uniform(const std::string& name, int rows, int cols, double lo,
                                   double hi, Rng& rng) {
  Matrix& m = create(name, rows, cols);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

ParamStore::Slot& ParamStore::slot(const std::string& name) {
  auto it = slots_.find(name);
  require(it != slots_.end(), "unknown parameter: " + name);
  return it->second;
}

const ParamStore::Slot& ParamStore::slot(const std::string& name) const {
  auto it = slots_.find(name);
  require(it != slots_.end(), "unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& name : order_) {
    Matrix& g = slots_[name].grad;
    std::fill(g.data.begin(), g.data.end(), 0.0);
  }
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  store.step_count += 1;
  const double t = static_cast<double>(store.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (const std::string& name : store.names()) {
    ParamStore::Slot& s = store.slot(name);
    const std::size_t n = s.value.data.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = s.grad.data[i];
      s.adam_m.data[i] = cfg.beta1 * s.adam_m.data[i] + (1.0 - cfg.beta1) * g;
      s.adam_v.data[i] = cfg.beta2 * s.adam_v.data[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = s.adam_m.data[i] / bc1;
      const double vhat = s.adam_v.data[i] / bc2;
      s.value.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
      s.grad.data[i] = 0.0;
    }
  }
}

void save_params(const ParamStore& store, std::ostream& out,
                 const std::vector<std::string>& header_lines) {
  for (const std::string& h : header_lines) out << "# " << h << "\n";
  for (const std::string& name : store.names()) {
    const Matrix& m = store.slot(name).value;
    out << "@" << name << " " << m.rows << " " << m.cols << "\n";
    // Little-endian float64 payload; this code targets little-endian hosts.
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    out << "\n";
  }
}

std::vector<std::string> load_params(ParamStore& store, std::istream& in) {
  std::vector<std::string> headers;
  std::string line;
  while (in.peek() == '#') {
    std::getline(in, line);
    headers.push_back(line.size() > 2 ? line.substr(2) : std::string());
  }
  while (in.peek() == '@') {
    std::getline(in, line);
    std::istringstream hs(line.substr(1));
    std::string name;
    int rows = 0, cols = 0;
    hs >> name >> rows >> cols;
    require(!name.empty() && rows > 0 && cols > 0, "malformed checkpoint section: " + line);
    Matrix& m = store.has(name) ? store.slot(name).value : store.create(name, rows, cols);
    require(m.rows == rows && m.cols == cols, "checkpoint shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    require(in.good(), "truncated checkpoint payload for " + name);
    in.get();  // trailing newline
    check_finite(m, "checkpoint parameter " + name);
  }
  return headers;
}

// ---------------------------------------------------------------------------
// Tape

Tape::NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

const Matrix& Tape::value(NodeId id) const {
  require(id >= 0 && id < static_cast<NodeId>(nodes_.size()), "invalid tape node id");
  return nodes_[id].value;
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
}

Matrix& Tape::grad(NodeId id) {
  Matrix& g = grads_[id];
  if (g.empty()) g = Matrix(nodes_[id].value.rows, nodes_[id].value.cols);
  return g;
}

void Tape::accum(NodeId id, const Matrix& g) {
  if (id < 0) return;
  Matrix& dst = grad(id);
  require_same_shape(dst, g, "gradient accumulate");
  const std::size_t n = dst.data.size();
  for (std::size_t i = 0; i < n; ++i) dst.data[i] += g.data[i];
}

Tape::NodeId Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Tape::NodeId Tape::param(ParamStore& store, const std::string& name) {
  Node n;
  n.value = store.slot(name).value;
  n.pstore = &store;
  n.pname = name;
  return push(std::move(n));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows,
          "matmul: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  Matrix out(a.rows, b.cols);
  const int m = a.rows, k = a.cols, n = b.cols;
  for (int i = 0; i < m; ++i) {
    const double* arow = &a.data[static_cast<std::size_t>(i) * k];
    double* orow = &out.data[static_cast<std::size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = &b.data[static_cast<std::size_t>(p) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Matrix transposed(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
  return out;
}

void row_softmax_inplace(Matrix& m) {
  for (int i = 0; i < m.rows; ++i) {
    double* row = &m.data[static_cast<std::size_t>(i) * m.cols];
    double mx = row[0];
    for (int j = 1; j < m.cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < m.cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < m.cols; ++j) row[j] /= sum;
  }
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  Node n;
  n.value = stratpred::tensor::matmul(A, B);
  n.in0 = a;
  n.in1 = b;
  n.back = [a, b](Tape& t, const Matrix& up) {
    t.accum(a, stratpred::tensor::matmul(up, transposed(t.value(b))));
    t.accum(b, stratpred::tensor::matmul(transposed(t.value(a)), up));
  };
  return push(std::move(n));
}

Tape::NodeId Tape::transpose(NodeId a) {
  Node n;
  n.value = transposed(value(a));
  n.in0 = a;
  n.back = [a](Tape& t, const Matrix& up) { t.accum(a, transposed(up)); };
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require_same_shape(A, B, "add");
  Node n;
  n.value = A;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += B.data[i];
  n.in0 = a;
  n.in1 = b;
  n.back = [a, b](Tape& t, const Matrix& up) {
    t.accum(a, up);
    t.accum(b, up);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::add_rowvec(NodeId a, NodeId row) {
  const Matrix& A = value(a);
  const Matrix& R = value(row);
  require(R.rows == 1 && R.cols == A.cols,
          "add_rowvec: shape mismatch " + shape_str(A) + " vs " + shape_str(R));
  Node n;
  n.value = A;
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) n.value.at(i, j) += R.at(0, j);
  n.in0 = a;
  n.in1 = row;
  n.back = [a, row](Tape& t, const Matrix& up) {
    t.accum(a, up);
    Matrix rg(1, up.cols);
    for (int i = 0; i < up.rows; ++i)
      for (int j = 0; j < up.cols; ++j) rg.at(0, j) += up.at(i, j);
    t.accum(row, rg);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::hadamard(NodeId a, NodeId b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require_same_shape(A, B, "hadamard");
  Node n;
  n.value = A;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= B.data[i];
  n.in0 = a;
  n.in1 = b;
  n.back = [a, b](Tape& t, const Matrix& up) {
    Matrix ga = up, gb = up;
    const Matrix& A2 = t.value(a);
    const Matrix& B2 = t.value(b);
    for (std::size_t i = 0; i < up.data.size(); ++i) {
      ga.data[i] *= B2.data[i];
      gb.data[i] *= A2.data[i];
    }
    t.accum(a, ga);
    t.accum(b, gb);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  Node n;
  n.value = value(a);
  for (double& v : n.value.data) v *= c;
  n.in0 = a;
  n.back = [a, c](Tape& t, const Matrix& up) {
    Matrix g = up;
    for (double& v : g.data) v *= c;
    t.accum(a, g);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::relu(NodeId a) {
  Node n;
  n.value = value(a);
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  n.in0 = a;
  n.back = [a](Tape& t, const Matrix& up) {
    Matrix g = up;
    const Matrix& X = t.value(a);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (X.data[i] <= 0.0) g.data[i] = 0.0;
    t.accum(a, g);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::sigmoid(NodeId a) {
  Node n;
  n.value = value(a);
  for (double& v : n.value.data) v = 1.0 / (1.0 + std::exp(-v));
  n.in0 = a;
  NodeId self = static_cast<NodeId>(nodes_.size());
  n.back = [a, self](Tape& t, const Matrix& up) {
    Matrix g = up;
    const Matrix& Y = t.value(self);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= Y.data[i] * (1.0 - Y.data[i]);
    t.accum(a, g);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::tanh_op(NodeId a) {
  Node n;
  n.value = value(a);
  for (double& v : n.value.data) v = std::tanh(v);
  n.in0 = a;
  NodeId self = static_cast<NodeId>(nodes_.size());
  n.back = [a, self](Tape& t, const Matrix& up) {
    Matrix g = up;
    const Matrix& Y = t.value(self);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= 1.0 - Y.data[i] * Y.data[i];
    t.accum(a, g);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::row_softmax(NodeId a) {
  Node n;
  n.value = value(a);
  row_softmax_inplace(n.value);
  check_finite(n.value, "row_softmax output");
  n.in0 = a;
  NodeId self = static_cast<NodeId>(nodes_.size());
  n.back = [a, self](Tape& t, const Matrix& up) {
    const Matrix& Y = t.value(self);
    Matrix g(up.rows, up.cols);
    for (int i = 0; i < up.rows; ++i) {
      double dot = 0.0;
      for (int j = 0; j < up.cols; ++j) dot += up.at(i, j) * Y.at(i, j);
      for (int j = 0; j < up.cols; ++j) g.at(i, j) = Y.at(i, j) * (up.at(i, j) - dot);
    }
    t.accum(a, g);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::layer_norm(NodeId a) {
  const Matrix& X = value(a);
  constexpr double kEps = 1e-5;
  Node n;
  n.value = Matrix(X.rows, X.cols);
  std::vector<double> inv_std(X.rows);
  for (int i = 0; i < X.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < X.cols; ++j) mean += X.at(i, j);
    mean /= X.cols;
    double var = 0.0;
    for (int j = 0; j < X.cols; ++j) {
      const double d = X.at(i, j) - mean;
      var += d * d;
    }
    var /= X.cols;
    inv_std[i] = 1.0 / std::sqrt(var + kEps);
    for (int j = 0; j < X.cols; ++j) n.value.at(i, j) = (X.at(i, j) - mean) * inv_std[i];
  }
  check_finite(n.value, "layer_norm output");
  n.in0 = a;
  NodeId self = static_cast<NodeId>(nodes_.size());
  n.back = [a, self, inv_std](Tape& t, const Matrix& up) {
    const Matrix& Y = t.value(self);
    Matrix g(up.rows, up.cols);
    const int c = up.cols;
    for (int i = 0; i < up.rows; ++i) {
      double sum_up = 0.0, sum_upy = 0.0;
      for (int j = 0; j < c; ++j) {
        sum_up += up.at(i, j);
        sum_upy += up.at(i, j) * Y.at(i, j);
      }
      for (int j = 0; j < c; ++j) {
        g.at(i, j) = inv_std[i] * (up.at(i, j) - sum_up / c - Y.at(i, j) * sum_upy / c);
      }
    }
    t.accum(a, g);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::dropout(NodeId a, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0,1)");
  const Matrix& X = value(a);
  Node n;
  n.value = X;
  auto mask = std::make_shared<std::vector<double>>(X.data.size());
  const double keep = 1.0 - rate;
  for (std::size_t i = 0; i < X.data.size(); ++i) {
    (*mask)[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    n.value.data[i] *= (*mask)[i];
  }
  n.in0 = a;
  n.back = [a, mask](Tape& t, const Matrix& up) {
    Matrix g = up;
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= (*mask)[i];
    t.accum(a, g);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::concat_cols(NodeId a, NodeId b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.rows == B.rows,
          "concat_cols: row mismatch " + shape_str(A) + " vs " + shape_str(B));
  Node n;
  n.value = Matrix(A.rows, A.cols + B.cols);
  for (int i = 0; i < A.rows; ++i) {
    for (int j = 0; j < A.cols; ++j) n.value.at(i, j) = A.at(i, j);
    for (int j = 0; j < B.cols; ++j) n.value.at(i, A.cols + j) = B.at(i, j);
  }
  n.in0 = a;
  n.in1 = b;
  const int ac = A.cols, bc = B.cols;
  n.back = [a, b, ac, bc](Tape& t, const Matrix& up) {
    Matrix ga(up.rows, ac), gb(up.rows, bc);
    for (int i = 0; i < up.rows; ++i) {
      for (int j = 0; j < ac; ++j) ga.at(i, j) = up.at(i, j);
      for (int j = 0; j < bc; ++j) gb.at(i, j) = up.at(i, ac + j);
    }
    t.accum(a, ga);
    t.accum(b, gb);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::sum(NodeId a) {
  const Matrix& X = value(a);
  Node n;
  n.value = Matrix(1, 1);
  for (double v : X.data) n.value.data[0] += v;
  n.in0 = a;
  n.back = [a](Tape& t, const Matrix& up) {
    const Matrix& X2 = t.value(a);
    Matrix g = Matrix::full(X2.rows, X2.cols, up.data[0]);
    t.accum(a, g);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::cross_entropy(NodeId logits, const Matrix& one_hot_targets) {
  const Matrix& Z = value(logits);
  require_same_shape(Z, one_hot_targets, "cross_entropy");
  Matrix probs = Z;
  row_softmax_inplace(probs);
  Node n;
  n.value = Matrix(1, 1);
  double loss = 0.0;
  for (int i = 0; i < Z.rows; ++i) {
    for (int j = 0; j < Z.cols; ++j) {
      if (one_hot_targets.at(i, j) != 0.0) {
        loss -= one_hot_targets.at(i, j) * std::log(std::max(probs.at(i, j), 1e-300));
      }
    }
  }
  n.value.data[0] = loss / Z.rows;
  check_finite(n.value, "cross_entropy output");
  n.in0 = logits;
  auto cached = std::make_shared<Matrix>(std::move(probs));
  auto targets = std::make_shared<Matrix>(one_hot_targets);
  n.back = [logits, cached, targets](Tape& t, const Matrix& up) {
    const double s = up.data[0] / cached->rows;
    Matrix g(cached->rows, cached->cols);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      g.data[i] = s * (cached->data[i] - targets->data[i]);
    t.accum(logits, g);
  };
  return push(std::move(n));
}

Tape::NodeId Tape::binary_cross_entropy(NodeId logits, const Matrix& targets) {
  const Matrix& Z = value(logits);
  require_same_shape(Z, targets, "binary_cross_entropy");
  Node n;
  n.value = Matrix(1, 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < Z.data.size(); ++i) {
    const double z = Z.data[i];
    const double t = targets.data[i];
    loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  const double count = static_cast<double>(Z.data.size());
  n.value.data[0] = loss / count;
  check_finite(n.value, "binary_cross_entropy output");
  n.in0 = logits;
  auto tcopy = std::make_shared<Matrix>(targets);
  n.back = [logits, tcopy, count](Tape& t, const Matrix& up) {
    const Matrix& Z2 = t.value(logits);
    Matrix g(Z2.rows, Z2.cols);
    const double s = up.data[0] / count;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-Z2.data[i]));
      g.data[i] = s * (p - tcopy->data[i]);
    }
    t.accum(logits, g);
  };
  return push(std::move(n));
}

void Tape::backward(NodeId loss) {
  require(!nodes_.empty(), "backward before any forward pass was recorded");
  require(loss >= 0 && loss < static_cast<NodeId>(nodes_.size()), "invalid loss node id");
  require(nodes_[loss].value.rows == 1 && nodes_[loss].value.cols == 1,
          "backward requires a scalar loss node");
  grads_.assign(nodes_.size(), Matrix());
  grads_[loss] = Matrix::full(1, 1, 1.0);
  for (NodeId id = loss; id >= 0; --id) {
    if (grads_[id].empty()) continue;
    Node& node = nodes_[id];
    if (node.back) node.back(*this, grads_[id]);
    if (node.pstore != nullptr) {
      Matrix& pg = node.pstore->slot(node.pname).grad;
      const Matrix& g = grads_[id];
      for (std::size_t i = 0; i < pg.data.size(); ++i) pg.data[i] += g.data[i];
    }
  }
}

}  // namespace stratpred::tensor
