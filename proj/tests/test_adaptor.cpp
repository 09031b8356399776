#include <doctest.h>

#include <cmath>
#include <vector>

#include "promptot/adaptor.hpp"
#include "promptot/errors.hpp"
#include "promptot/rng.hpp"

using namespace promptot;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
  return t;
}

// random rotation by Gram-Schmidt on gaussian rows
Tensor random_rotation(std::size_t n, Rng& rng) {
  Tensor q = Tensor::zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.gaussian();
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += v[k] * q.at(j, k);
      for (std::size_t k = 0; k < n; ++k) v[k] -= dot * q.at(j, k);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < n; ++k) q.at(i, k) = v[k] / norm;
  }
  return q;
}

PairedDataset rotation_pairs(std::size_t n, std::size_t raw_dim, Rng& rng) {
  const Tensor rot = random_rotation(raw_dim, rng);
  PairedDataset data;
  data.image_raw = random_tensor(n, raw_dim, rng);
  data.text_raw = Tensor::zeros(n, raw_dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < raw_dim; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < raw_dim; ++c) acc += rot.at(r, c) * data.image_raw.at(i, c);
      data.text_raw.at(i, r) = acc;
    }
  }
  return data;
}

}  // namespace

TEST_CASE("single-pair batch has zero loss") {
  Rng rng(167);
  Tensor x = random_tensor(1, 6, rng);
  CHECK(contrastive_loss(x, x, ContrastiveConfig{1.0, 1}) == doctest::Approx(0.0));
}

TEST_CASE("identical rows on both sides give log B") {
  const std::size_t b = 8;
  Tensor x = Tensor::zeros(b, 4);
  for (std::size_t i = 0; i < b; ++i) {
    x.at(i, 0) = 1.0;
    x.at(i, 2) = -0.5;
  }
  CHECK(contrastive_loss(x, x, ContrastiveConfig{0.07, b}) ==
        doctest::Approx(std::log(static_cast<double>(b))).epsilon(1e-12));
}

TEST_CASE("orthogonal negatives at tau=1 give the frozen per-row value") {
  Tensor x = Tensor::from_rows({{1, 0}, {0, 1}});
  // positives aligned, negatives orthogonal: per-row loss is -log(e / (e + 1))
  CHECK(contrastive_loss(x, x, ContrastiveConfig{1.0, 2}) ==
        doctest::Approx(0.3132616875182228).epsilon(1e-12));
}

TEST_CASE("zero-norm rows are rejected") {
  Tensor x = Tensor::from_rows({{1, 0}, {0, 0}});
  Tensor t = Tensor::from_rows({{1, 0}, {0, 1}});
  CHECK_THROWS_AS(contrastive_loss(x, t, ContrastiveConfig{1.0, 2}), InvalidInputError);
}

TEST_CASE("loss is nonnegative and invariant to a common permutation") {
  Rng rng(173);
  const std::size_t b = 6, d = 5;
  Tensor x = random_tensor(b, d, rng);
  Tensor t = random_tensor(b, d, rng);
  const double base = contrastive_loss(x, t, ContrastiveConfig{0.2, b});
  CHECK(base >= 0.0);
  std::vector<std::size_t> perm = {3, 0, 4, 1, 5, 2};
  Tensor xp = Tensor::zeros(b, d), tp = Tensor::zeros(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      xp.at(perm[i], k) = x.at(i, k);
      tp.at(perm[i], k) = t.at(i, k);
    }
  }
  CHECK(contrastive_loss(xp, tp, ContrastiveConfig{0.2, b}) ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("only the adaptor weights are gradient roots") {
  Rng rng(179);
  GradTape tape;
  Var w1 = tape.parameter(random_tensor(8, 6, rng));
  Var w2 = tape.parameter(random_tensor(4, 8, rng));
  Var tw1 = tape.parameter(random_tensor(8, 5, rng));
  Var tw2 = tape.parameter(random_tensor(4, 8, rng));
  Var xi = tape.constant(random_tensor(3, 6, rng));  // frozen stub output
  Var ti = tape.constant(random_tensor(3, 5, rng));
  Var loss = contrastive_loss_var(AdaptorStack::apply_var(xi, w1, w2),
                                  AdaptorStack::apply_var(ti, tw1, tw2),
                                  ContrastiveConfig{0.1, 3});
  CHECK(tape.num_params() == 4);
  auto grads = tape.backward(loss);
  REQUIRE(grads.size() == 4);
  for (const Tensor& g : grads) {
    double norm = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) norm += std::abs(g[i]);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("rotation-paired pretraining reaches held-out retrieval 0.95") {
  Rng rng(181);
  const std::size_t raw = 40;
  PairedDataset all = rotation_pairs(512 + 64, raw, rng);
  PairedDataset train, held;
  train.image_raw = Tensor::zeros(512, raw);
  train.text_raw = Tensor::zeros(512, raw);
  held.image_raw = Tensor::zeros(64, raw);
  held.text_raw = Tensor::zeros(64, raw);
  for (std::size_t i = 0; i < 512; ++i) {
    for (std::size_t k = 0; k < raw; ++k) {
      train.image_raw.at(i, k) = all.image_raw.at(i, k);
      train.text_raw.at(i, k) = all.text_raw.at(i, k);
    }
  }
  for (std::size_t i = 0; i < 64; ++i) {
    for (std::size_t k = 0; k < raw; ++k) {
      held.image_raw.at(i, k) = all.image_raw.at(512 + i, k);
      held.text_raw.at(i, k) = all.text_raw.at(512 + i, k);
    }
  }
  const StubEncoder image_enc = StubEncoder::init(raw, 48, 2024);
  const StubEncoder text_enc = StubEncoder::init(raw, 24, 4048);
  auto result = pretrain_adaptors(train, image_enc, text_enc, ContrastiveConfig{0.07, 64}, 50,
                                  99, 32);
  CHECK(result.loss_per_epoch.front() > result.loss_per_epoch.back());
  CHECK(retrieval_top1(result.adaptors, image_enc, text_enc, held) >= 0.95);
}

TEST_CASE("zero learning rate leaves the adaptors bit-identical") {
  Rng rng(191);
  PairedDataset data = rotation_pairs(128, 16, rng);
  const StubEncoder image_enc = StubEncoder::init(16, 12, 7);
  const StubEncoder text_enc = StubEncoder::init(16, 10, 8);
  auto trained = pretrain_adaptors(data, image_enc, text_enc, ContrastiveConfig{0.07, 32}, 3,
                                   55, 8, 0.0);
  // re-derive the untouched initialization
  Rng init_rng(55);
  AdaptorStack image0 = AdaptorStack::init(12, 16, 8, init_rng);
  AdaptorStack text0 = AdaptorStack::init(10, 16, 8, init_rng);
  for (std::size_t i = 0; i < image0.w1.size(); ++i) {
    CHECK(trained.adaptors.image.w1[i] == image0.w1[i]);
  }
  for (std::size_t i = 0; i < text0.w2.size(); ++i) {
    CHECK(trained.adaptors.text.w2[i] == text0.w2[i]);
  }
}

TEST_CASE("mismatched pairs train to chance level log B") {
  Rng rng(193);
  const std::size_t raw = 24;
  const std::size_t n = 2048;  // large enough that the pairing cannot be memorized
  PairedDataset data = rotation_pairs(n, raw, rng);
  // break the pairing with a seeded shuffle of the text side
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  Tensor shuffled = data.text_raw;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < raw; ++k) shuffled.at(i, k) = data.text_raw.at(perm[i], k);
  }
  data.text_raw = shuffled;
  const StubEncoder image_enc = StubEncoder::init(raw, 20, 31);
  const StubEncoder text_enc = StubEncoder::init(raw, 18, 37);
  const ContrastiveConfig cfg{0.07, 64};
  auto result = pretrain_adaptors(data, image_enc, text_enc, cfg, 30, 77, 16);
  const double chance = std::log(64.0);
  CHECK(std::abs(result.loss_per_epoch.back() - chance) <= 0.05 * chance);
}

TEST_CASE("pretraining requires at least one full batch") {
  Rng rng(197);
  PairedDataset tiny = rotation_pairs(8, 10, rng);
  const StubEncoder enc = StubEncoder::init(10, 8, 1);
  CHECK_THROWS_AS(pretrain_adaptors(tiny, enc, enc, ContrastiveConfig{0.07, 16}, 1, 1, 4),
                  InvalidInputError);
}
