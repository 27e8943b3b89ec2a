#include <doctest.h>

#include <cmath>
#include <sstream>

#include "stratpred/rng.hpp"
#include "stratpred/tensor.hpp"
#include "test_util.hpp"

using namespace stratpred;
using tensor::Matrix;
using tensor::ParamStore;
using tensor::Tape;

TEST_CASE("row_softmax of an all-zeros row is uniform") {
  Tape tape;
  const auto y = tape.row_softmax(tape.constant(Matrix::zeros(1, 4)));
  for (int j = 0; j < 4; ++j) CHECK(tape.value(y).at(0, j) == doctest::Approx(0.25));
}

TEST_CASE("matmul with the identity is the identity map") {
  Rng rng(7);
  const Matrix a = Matrix::uniform_random(3, 5, -2.0, 2.0, rng);
  const Matrix out = tensor::matmul(Matrix::identity(3), a);
  CHECK(out == a);
}

TEST_CASE("cross entropy of uniform two-class logits is ln 2") {
  Tape tape;
  Matrix target(1, 2);
  target.at(0, 0) = 1.0;
  const auto loss = tape.cross_entropy(tape.constant(Matrix::zeros(1, 2)), target);
  CHECK(tape.value(loss).data[0] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("cross entropy is non-negative and softmax rows sum to one") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    const int rows = 1 + static_cast<int>(rng.index(4));
    const int cols = 2 + static_cast<int>(rng.index(5));
    const auto logits = tape.constant(Matrix::uniform_random(rows, cols, -3.0, 3.0, rng));
    const auto soft = tape.row_softmax(logits);
    for (int i = 0; i < rows; ++i) {
      double sum = 0.0;
      for (int j = 0; j < cols; ++j) {
        const double v = tape.value(soft).at(i, j);
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    Matrix target(rows, cols);
    for (int i = 0; i < rows; ++i) target.at(i, static_cast<int>(rng.index(cols))) = 1.0;
    const auto loss = tape.cross_entropy(logits, target);
    CHECK(tape.value(loss).data[0] >= 0.0);
  }
}

TEST_CASE("shape mismatch names both shapes") {
  Tape tape;
  const auto a = tape.constant(Matrix::zeros(2, 3));
  const auto b = tape.constant(Matrix::zeros(2, 3));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("2x3"), std::invalid_argument);
}

TEST_CASE("gradient of sum is all ones") {
  ParamStore store;
  Rng rng(3);
  store.create_uniform("x", 2, 3, -1.0, 1.0, rng);
  Tape tape;
  const auto loss = tape.sum(tape.param(store, "x"));
  tape.backward(loss);
  for (double g : store.slot("x").grad.data) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("gradient of sum of squares is 2x") {
  ParamStore store;
  Rng rng(4);
  const Matrix& x = store.create_uniform("x", 3, 2, -1.0, 1.0, rng);
  Tape tape;
  const auto xs = tape.param(store, "x");
  const auto loss = tape.sum(tape.hadamard(xs, xs));
  tape.backward(loss);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    CHECK(store.slot("x").grad.data[i] == doctest::Approx(2.0 * x.data[i]));
  }
}

TEST_CASE("backward before forward is an error") {
  Tape tape;
  CHECK_THROWS_AS(tape.backward(0), std::invalid_argument);
}

TEST_CASE("three-layer composition matches finite differences") {
  ParamStore store;
  Rng rng(5);
  store.create_uniform("w1", 4, 6, -0.8, 0.8, rng);
  store.create_uniform("b1", 1, 6, -0.2, 0.2, rng);
  store.create_uniform("w2", 6, 5, -0.8, 0.8, rng);
  store.create_uniform("w3", 5, 3, -0.8, 0.8, rng);
  const Matrix input = Matrix::uniform_random(2, 4, -1.0, 1.0, rng);
  Matrix target(2, 3);
  target.at(0, 1) = 1.0;
  target.at(1, 2) = 1.0;

  auto forward = [&](Tape& tape) {
    const auto h1 = tape.tanh_op(
        tape.add_rowvec(tape.matmul(tape.constant(input), tape.param(store, "w1")),
                        tape.param(store, "b1")));
    const auto h2 = tape.relu(tape.matmul(h1, tape.param(store, "w2")));
    const auto h3 = tape.layer_norm(tape.sigmoid(tape.matmul(h2, tape.param(store, "w3"))));
    return tape.cross_entropy(tape.scale(h3, 1.7), target);
  };
  const auto result = test_util::finite_difference_check(
      store,
      [&] {
        Tape tape;
        return tape.value(forward(tape)).data[0];
      },
      [&] {
        Tape tape;
        tape.backward(forward(tape));
      });
  CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("every differentiable op passes finite differences on random shapes") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    ParamStore store;
    const int r = 1 + static_cast<int>(rng.index(3));
    const int k = 2 + static_cast<int>(rng.index(3));
    const int c = 2 + static_cast<int>(rng.index(3));
    store.create_uniform("a", r, k, -1.0, 1.0, rng);
    store.create_uniform("b", k, c, -1.0, 1.0, rng);
    store.create_uniform("c", r, c, -1.0, 1.0, rng);
    store.create_uniform("row", 1, c, -1.0, 1.0, rng);
    Matrix bce_target(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) bce_target.at(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;

    const int variant = trial % 5;
    auto forward = [&](Tape& tape) -> Tape::NodeId {
      const auto a = tape.param(store, "a");
      const auto b = tape.param(store, "b");
      const auto cc = tape.param(store, "c");
      const auto prod = tape.matmul(a, b);
      switch (variant) {
        case 0:
          return tape.sum(tape.row_softmax(tape.add(prod, cc)));
        case 1:
          return tape.sum(tape.tanh_op(tape.add_rowvec(prod, tape.param(store, "row"))));
        case 2:
          return tape.binary_cross_entropy(tape.add(prod, cc), bce_target);
        case 3:
          return tape.sum(tape.sigmoid(tape.hadamard(tape.add(prod, cc), cc)));
        default:
          return tape.sum(tape.layer_norm(tape.concat_cols(prod, tape.matmul(cc, tape.transpose(b)))));
      }
    };
    const auto result = test_util::finite_difference_check(
        store,
        [&] {
          Tape tape;
          return tape.value(forward(tape)).data[0];
        },
        [&] {
          Tape tape;
          tape.backward(forward(tape));
        });
    CAPTURE(trial);
    CAPTURE(result.worst);
    CHECK(result.max_rel_err < 1e-4);
  }
}

TEST_CASE("adam leaves parameters unchanged on zero gradient") {
  ParamStore store;
  Rng rng(9);
  store.create_uniform("w", 2, 2, -1.0, 1.0, rng);
  const Matrix before = store.slot("w").value;
  adam_step(store, {});
  CHECK(store.slot("w").value == before);
}

TEST_CASE("first adam step with constant gradient moves by about lr") {
  ParamStore store;
  Rng rng(10);
  store.create_uniform("w", 1, 4, -1.0, 1.0, rng);
  const Matrix before = store.slot("w").value;
  for (double& g : store.slot("w").grad.data) g = 0.37;
  tensor::AdamConfig cfg;
  cfg.learning_rate = 0.01;
  adam_step(store, cfg);
  // Bias-corrected first step: lr * g / (|g| + eps) = lr up to eps rounding.
  for (int j = 0; j < 4; ++j) {
    const double delta = before.at(0, j) - store.slot("w").value.at(0, j);
    CHECK(delta == doctest::Approx(cfg.learning_rate).epsilon(1e-5));
  }
  for (double g : store.slot("w").grad.data) CHECK(g == 0.0);
}

TEST_CASE("identical stores and gradients stay identical after adam") {
  auto make = [] {
    ParamStore store;
    Rng rng(12);
    store.create_uniform("w", 3, 3, -1.0, 1.0, rng);
    for (std::size_t i = 0; i < store.slot("w").grad.data.size(); ++i) {
      store.slot("w").grad.data[i] = 0.1 * static_cast<double>(i);
    }
    return store;
  };
  ParamStore a = make();
  ParamStore b = make();
  adam_step(a, {});
  adam_step(b, {});
  CHECK(a.slot("w").value == b.slot("w").value);
}

TEST_CASE("checkpoints round-trip parameters") {
  ParamStore store;
  Rng rng(13);
  store.create_uniform("alpha", 2, 3, -1.0, 1.0, rng);
  store.create_uniform("beta", 4, 1, -1.0, 1.0, rng);
  std::stringstream buf;
  save_params(store, buf, {"first header", "second header"});
  ParamStore loaded;
  const auto headers = load_params(loaded, buf);
  REQUIRE(headers.size() == 2);
  CHECK(headers[0] == "first header");
  CHECK(loaded.slot("alpha").value == store.slot("alpha").value);
  CHECK(loaded.slot("beta").value == store.slot("beta").value);
}

TEST_CASE("non-finite inputs are rejected") {
  Matrix m(1, 2);
  m.at(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(tensor::check_finite(m, "test"), std::runtime_error);
}

TEST_CASE("dropout scales kept entries and zeroes the rest") {
  Rng rng(21);
  Tape tape;
  const auto x = tape.constant(Matrix::full(10, 10, 1.0));
  const auto y = tape.dropout(x, 0.4, rng);
  int kept = 0;
  for (double v : tape.value(y).data) {
    if (v != 0.0) {
      CHECK(v == doctest::Approx(1.0 / 0.6));
      ++kept;
    }
  }
  CHECK(kept > 30);
  CHECK(kept < 90);
}
