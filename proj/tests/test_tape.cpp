#include <doctest.h>

#include <cmath>
#include <vector>

#include "promptot/errors.hpp"
#include "promptot/rng.hpp"
#include "promptot/tape.hpp"

using namespace promptot;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t({r, c});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.gaussian();
  return t;
}

// independent triple-loop product oracle
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out.at(i, j) += a.at(i, k) * b.at(k, j);
  return out;
}

}  // namespace

TEST_CASE("matmul identity and orthogonal cases") {
  GradTape tape;
  Var eye = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  Var b = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  const Tensor& prod = tape.value(matmul(eye, b));
  CHECK(prod.at(0, 0) == 1);
  CHECK(prod.at(0, 1) == 2);
  CHECK(prod.at(1, 0) == 3);
  CHECK(prod.at(1, 1) == 4);

  Var row = tape.constant(Tensor::from_rows({{1, 0}}));
  Var col = tape.constant(Tensor({2, 1}, {0, 5}));
  CHECK(tape.value(matmul(row, col)).item() == 0.0);
}

TEST_CASE("matmul matches the triple-loop oracle to 1e-12") {
  Rng rng(3);
  GradTape tape;
  Tensor a = random_tensor(3, 3, rng);
  Tensor b = random_tensor(3, 3, rng);
  const Tensor& got = tape.value(matmul(tape.constant(a), tape.constant(b)));
  Tensor want = matmul_oracle(a, b);
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner extents") {
  GradTape tape;
  Var a = tape.constant(Tensor::zeros(2, 3));
  Var b = tape.constant(Tensor::zeros(2, 3));
  CHECK_THROWS_AS(matmul(a, b), InvalidInputError);
}

TEST_CASE("softmax_rows trivial and oracle rows") {
  GradTape tape;
  const Tensor& sym = tape.value(softmax_rows(tape.constant(Tensor::from_rows({{0, 0}}))));
  CHECK(sym.at(0, 0) == doctest::Approx(0.5).epsilon(1e-14));

  const Tensor& dom = tape.value(softmax_rows(tape.constant(Tensor::from_rows({{1000, 0}}))));
  CHECK(std::abs(dom.at(0, 0) - 1.0) <= 1e-12);
  CHECK(std::abs(dom.at(0, 1) - 0.0) <= 1e-12);

  // frozen from the direct exp/sum oracle
  const Tensor& row = tape.value(softmax_rows(tape.constant(Tensor::from_rows({{1, 2, 3}}))));
  CHECK(row.at(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(row.at(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(row.at(0, 2) == doctest::Approx(0.6652409557748219).epsilon(1e-12));
}

TEST_CASE("softmax_rows rows sum to one for any finite input") {
  Rng rng(17);
  GradTape tape;
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor(1 + rng.below(5), 1 + rng.below(6), rng, 100.0);
    const Tensor& y = tape.value(softmax_rows(tape.constant(x)));
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) sum += y.at(i, j);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("layer_norm handles degenerate and exact rows") {
  GradTape tape;
  const Tensor& flat = tape.value(layer_norm(tape.constant(Tensor::from_rows({{7, 7, 7}}))));
  CHECK(flat.at(0, 0) == 0.0);
  CHECK(flat.at(0, 2) == 0.0);

  // already zero-mean unit-variance, damped only by eps
  const Tensor& pm = tape.value(layer_norm(tape.constant(Tensor::from_rows({{1, -1}}))));
  CHECK(pm.at(0, 0) == doctest::Approx(0.9999950000374997).epsilon(1e-14));
  CHECK(pm.at(0, 1) == doctest::Approx(-0.9999950000374997).epsilon(1e-14));

  // frozen from the (x - mu)/sqrt(var + eps) oracle
  const Tensor& y = tape.value(layer_norm(tape.constant(Tensor::from_rows({{0, 2, 4}}))));
  CHECK(y.at(0, 0) == doctest::Approx(-1.2247425750014138).epsilon(1e-13));
  CHECK(y.at(0, 1) == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(y.at(0, 2) == doctest::Approx(1.2247425750014138).epsilon(1e-13));
}

TEST_CASE("layer_norm row means vanish for any input") {
  Rng rng(23);
  GradTape tape;
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor(1 + rng.below(4), 2 + rng.below(6), rng, 50.0);
    const Tensor& y = tape.value(layer_norm(tape.constant(x)));
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) mean += y.at(i, j);
      mean /= static_cast<double>(y.cols());
      CHECK(std::abs(mean) <= 1e-10);
    }
  }
}

TEST_CASE("leaky_relu values") {
  GradTape tape;
  const Tensor& y =
      tape.value(leaky_relu(tape.constant(Tensor::from_rows({{3, -1, -2, 0, 2}})), 0.2));
  CHECK(y[0] == 3.0);
  CHECK(y[1] == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(y[2] == doctest::Approx(-0.4).epsilon(1e-15));
  CHECK(y[3] == 0.0);
  CHECK(y[4] == 2.0);
  CHECK_THROWS_AS(leaky_relu(tape.constant(Tensor::scalar(1.0)), 1.5), InvalidInputError);
}

TEST_CASE("backward of a linear map gives A^T 1") {
  Rng rng(5);
  Tensor a = random_tensor(3, 4, rng);
  GradTape tape;
  Var x = tape.parameter(random_tensor(4, 1, rng));
  Var loss = sum_all(matmul(tape.constant(a), x));
  auto grads = tape.backward(loss);
  REQUIRE(grads.size() == 1);
  for (std::size_t k = 0; k < 4; ++k) {
    double want = 0.0;
    for (std::size_t i = 0; i < 3; ++i) want += a.at(i, k);
    CHECK(grads[0][k] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("backward of half squared norm is the vector itself") {
  Rng rng(7);
  Tensor x0 = random_tensor(1, 6, rng);
  GradTape tape;
  Var x = tape.parameter(x0);
  Var loss = affine(sum_all(hadamard(x, x)), 0.5, 0.0);
  auto grads = tape.backward(loss);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(grads[0][i] == doctest::Approx(x0[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects non-scalar losses") {
  GradTape tape;
  Var x = tape.parameter(Tensor::zeros(2, 2));
  Var y = affine(x, 2.0, 0.0);
  CHECK_THROWS_AS(tape.backward(y), InvalidInputError);
}

TEST_CASE("backward is linear over summed losses") {
  Rng rng(9);
  Tensor x0 = random_tensor(2, 3, rng);
  auto grad_of = [&](int which) {
    GradTape tape;
    Var x = tape.parameter(x0);
    Var l1 = sum_all(hadamard(x, x));
    Var l2 = mean_all(tanh_activation(x));
    Var loss = which == 0 ? l1 : which == 1 ? l2 : add(l1, l2);
    return tape.backward(loss)[0];
  };
  Tensor g1 = grad_of(0), g2 = grad_of(1), gsum = grad_of(2);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(std::abs(gsum[i] - (g1[i] + g2[i])) <= 1e-12);
  }
}

TEST_CASE("forward ops are bit deterministic") {
  Rng rng(13);
  Tensor a = random_tensor(4, 4, rng), b = random_tensor(4, 4, rng);
  auto run = [&]() {
    GradTape tape;
    Var y = layer_norm(softmax_rows(matmul(tape.constant(a), tape.constant(b))));
    return tape.value(y);
  };
  Tensor first = run(), second = run();
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("check_gradients: quadratic form at 1e-9") {
  Rng rng(19);
  Tensor q = random_tensor(4, 4, rng);
  Tensor x0 = random_tensor(4, 1, rng);
  std::vector<Tensor*> params = {&x0};
  auto build = [&](GradTape& tape) {
    Var x = tape.parameter(x0);
    return sum_all(hadamard(x, matmul(tape.constant(q), x)));
  };
  auto report = check_gradients(build, params, 1e-5, 1e-9);
  CHECK(report.passed);
  CHECK(report.max_rel_error <= 1e-9);
}

TEST_CASE("check_gradients: softmax composed with dot product at 1e-6") {
  Rng rng(29);
  Tensor x0 = random_tensor(2, 5, rng);
  Tensor w = random_tensor(5, 1, rng);
  std::vector<Tensor*> params = {&x0};
  auto build = [&](GradTape& tape) {
    Var x = tape.parameter(x0);
    return sum_all(matmul(softmax_rows(x), tape.constant(w)));
  };
  auto report = check_gradients(build, params, 1e-5, 1e-6);
  CHECK(report.passed);
}

TEST_CASE("check_gradients flags non-finite regions with the offending parameter") {
  Tensor x0({1, 1}, {5e-6});  // perturbing by 1e-5 crosses into log of a negative
  std::vector<Tensor*> params = {&x0};
  auto build = [&](GradTape& tape) { return sum_all(log_elem(tape.parameter(x0))); };
  auto report = check_gradients(build, params, 1e-5, 1e-6);
  CHECK(!report.passed);
  CHECK(report.offending_param == 0);
  CHECK(!report.message.empty());
}

TEST_CASE("check_gradients covers every primitive") {
  Rng rng(31);
  Tensor x0 = random_tensor(3, 4, rng);
  Tensor y0 = random_tensor(3, 4, rng);
  Tensor s0 = random_tensor(3, 1, rng);
  std::vector<Tensor*> params = {&x0, &y0, &s0};
  auto build = [&](GradTape& tape) {
    Var x = tape.parameter(x0);
    Var y = tape.parameter(y0);
    Var s = tape.parameter(s0);
    Var a = sub(hadamard(x, y), affine(x, 0.3, 0.1));
    Var b = rowscale(tanh_activation(a), s);
    Var c = matmul(transpose(b), row_l2_normalize(y));           // 4x4
    Var d = gather_rows(c, {0, 2, 2, 3});                        // 4x4
    Var e = vstack(std::vector<Var>{d, reshape(mean_rows(c), {1, 4})});
    Var first_col = matmul(e, tape.constant(Tensor({4, 1}, {1, 0, 0, 0})));
    Var f = scatter_weighted_sum(e, {0, 1, 2, 3, 4}, {0, 0, 1, 2, 1},
                                 segment_softmax(first_col, {0, 2, 5}), 3);
    Var g = log_elem(clamp_min(f, 0.05));
    return add(mean_all(g), pick(c, 1, 1));
  };
  auto report = check_gradients(build, params, 1e-6, 1e-6);
  INFO(report.message);
  CHECK(report.passed);
}
