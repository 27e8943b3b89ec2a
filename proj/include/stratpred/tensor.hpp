#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "stratpred/rng.hpp"

namespace stratpred::tensor {

// Dense row-major matrix of doubles. The whole pipeline runs in 64-bit floats.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  static Matrix zeros(int r, int c) { return Matrix(r, c); }
  static Matrix full(int r, int c, double v);
  static Matrix identity(int n);
  static Matrix uniform_random(int r, int c, double lo, double hi, Rng& rng);

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool empty() const { return data.empty(); }
};

bool operator==(const Matrix& a, const Matrix& b);

// Throws std::runtime_error if any entry is NaN/Inf.
void check_finite(const Matrix& m, const std::string& what);

std::string shape_str(const Matrix& m);

// Named parameters with matching gradient accumulators and Adam moment
// buffers. Confined to one training thread.
class ParamStore {
 public:
  struct Slot {
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;
  };

  Matrix& create(const std::string& name, int rows, int cols);
  Matrix& create_uniform(const std::string& name, int rows, int cols, double lo, double hi,
                         Rng& rng);

  bool has(const std::string& name) const { return slots_.count(name) > 0; }
  Slot& slot(const std::string& name);
  const Slot& slot(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }

  void zero_grads();

  long long step_count = 0;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Slot> slots_;
};

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam update with bias correction; clears gradients afterwards.
void adam_step(ParamStore& store, const AdamConfig& cfg);

// Checkpoint format: optional '#' header lines, then per parameter a section
//   @<name> <rows> <cols>\n
// followed by rows*cols little-endian float64 payload and a newline.
void save_params(const ParamStore& store, std::ostream& out,
                 const std::vector<std::string>& header_lines);
std::vector<std::string> load_params(ParamStore& store, std::istream& in);

// Reverse-mode autodiff over a recorded operation tape. Values are computed
// eagerly; backward() walks the tape in reverse. A tape is confined to one
// thread and reset between samples.
class Tape {
 public:
  using NodeId = int;

  NodeId constant(Matrix value);
  NodeId param(ParamStore& store, const std::string& name);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  // Adds a 1 x cols row vector to every row of a.
  NodeId add_rowvec(NodeId a, NodeId row);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh_op(NodeId a);
  NodeId row_softmax(NodeId a);
  // Row-wise normalization (x - mean) / sqrt(var + 1e-5), no affine part.
  NodeId layer_norm(NodeId a);
  NodeId dropout(NodeId a, double rate, Rng& rng);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId sum(NodeId a);
  // Mean over rows of -log softmax(logits) at the one-hot target of each row.
  NodeId cross_entropy(NodeId logits, const Matrix& one_hot_targets);
  // Mean elementwise binary cross-entropy of sigmoid(logits) vs targets in {0,1}.
  NodeId binary_cross_entropy(NodeId logits, const Matrix& targets);

  const Matrix& value(NodeId id) const;
  int size() const { return static_cast<int>(nodes_.size()); }

  // Populates parameter gradients for every param node reachable from loss.
  // loss must be a 1x1 node. Throws if the tape is empty or id is invalid.
  void backward(NodeId loss);

  void reset();

 private:
  struct Node {
    Matrix value;
    NodeId in0 = -1;
    NodeId in1 = -1;
    // Receives upstream gradient; writes into input gradient buffers.
    std::function<void(Tape&, const Matrix&)> back;
    ParamStore* pstore = nullptr;
    std::string pname;
  };

  NodeId push(Node n);
  void accum(NodeId id, const Matrix& g);
  Matrix& grad(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
};

// Plain (non-tape) helpers shared by inference paths.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transposed(const Matrix& m);
void row_softmax_inplace(Matrix& m);

}  // namespace stratpred::tensor
