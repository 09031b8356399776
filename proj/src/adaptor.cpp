#include "promptot/adaptor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "promptot/errors.hpp"
#include "promptot/optim.hpp"

namespace promptot {

StubEncoder StubEncoder::init(std::size_t raw_dim, std::size_t out_dim, std::uint64_t seed) {
  Rng rng(seed);
  StubEncoder enc;
  enc.weight = Tensor({out_dim, raw_dim});
  for (std::size_t i = 0; i < enc.weight.size(); ++i) enc.weight[i] = rng.gaussian();
  return enc;
}

Tensor StubEncoder::encode(const Tensor& raw) const {
  if (raw.rank() != 2 || raw.cols() != weight.cols()) {
    throw InvalidInputError("StubEncoder: input " + raw.shape_str() + " does not match raw dim " +
                            std::to_string(weight.cols()));
  }
  const std::size_t n = raw.rows(), out = weight.rows(), in = weight.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor res = Tensor::zeros(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < in; ++j) acc += weight.at(o, j) * raw.at(i, j);
      res.at(i, o) = std::tanh(acc * scale);
    }
  }
  return res;
}

AdaptorStack AdaptorStack::init(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                                Rng& rng) {
  auto uniform = [&](std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
  };
  AdaptorStack s;
  s.w1 = uniform(hidden, in_dim);
  s.w2 = uniform(out_dim, hidden);
  return s;
}

Tensor AdaptorStack::apply(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != in_dim()) {
    throw InvalidInputError("AdaptorStack: input " + x.shape_str() + " does not match in dim " +
                            std::to_string(in_dim()));
  }
  const std::size_t n = x.rows(), h = w1.rows(), out = w2.rows(), in = w1.cols();
  Tensor hidden = Tensor::zeros(n, h);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < h; ++a) {
      double acc = 0.0;
      for (std::size_t j = 0; j < in; ++j) acc += w1.at(a, j) * x.at(i, j);
      hidden.at(i, a) = std::tanh(acc);
    }
  }
  Tensor res = Tensor::zeros(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t a = 0; a < h; ++a) acc += w2.at(o, a) * hidden.at(i, a);
      res.at(i, o) = acc;
    }
  }
  return res;
}

Var AdaptorStack::apply_var(Var x, Var w1, Var w2) {
  return matmul(tanh_activation(matmul(x, transpose(w1))), transpose(w2));
}

Var contrastive_loss_var(Var image_emb, Var text_emb, const ContrastiveConfig& cfg) {
  if (!(cfg.tau > 0.0)) {
    throw InvalidInputError("contrastive_loss: tau must be positive");
  }
  GradTape& tape = *image_emb.tape;
  const Tensor& xv = tape.value(image_emb);
  const Tensor& tv = tape.value(text_emb);
  if (xv.rank() != 2 || !xv.same_shape(tv)) {
    throw InvalidInputError("contrastive_loss: batches must share shape, got " +
                            xv.shape_str() + " vs " + tv.shape_str());
  }
  const std::size_t b = xv.rows();
  if (b < 1) throw InvalidInputError("contrastive_loss: empty batch");
  Var sim = matmul(row_l2_normalize(image_emb), transpose(row_l2_normalize(text_emb)));
  Var probs = softmax_rows(affine(sim, 1.0 / cfg.tau, 0.0));
  std::vector<Var> row_losses;
  row_losses.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    row_losses.push_back(
        affine(log_elem(clamp_min(pick(probs, i, i), 1e-300)), -1.0, 0.0));
  }
  return mean_all(vstack(row_losses));
}

double contrastive_loss(const Tensor& image_emb, const Tensor& text_emb,
                        const ContrastiveConfig& cfg) {
  GradTape tape;
  Var loss = contrastive_loss_var(tape.constant(image_emb), tape.constant(text_emb), cfg);
  return tape.value(loss).item();
}

namespace {

Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  Tensor out = Tensor::zeros(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(rows[i], j);
  }
  return out;
}

}  // namespace

PretrainResult pretrain_adaptors(const PairedDataset& data, const StubEncoder& image_enc,
                                 const StubEncoder& text_enc, const ContrastiveConfig& cfg,
                                 std::size_t epochs, std::uint64_t seed,
                                 std::size_t embed_dim, double learning_rate) {
  if (data.size() < cfg.batch_size) {
    throw InvalidInputError("pretrain_adaptors: dataset smaller than one batch");
  }
  const std::size_t d_v = image_enc.weight.rows();
  const std::size_t d_t = text_enc.weight.rows();
  Rng rng(seed);
  PretrainResult result;
  result.adaptors.image = AdaptorStack::init(d_v, 2 * embed_dim, embed_dim, rng);
  result.adaptors.text = AdaptorStack::init(d_t, 2 * embed_dim, embed_dim, rng);

  // encode once; the stubs are frozen so their outputs are training constants
  const Tensor image_feat = image_enc.encode(data.image_raw);
  const Tensor text_feat = text_enc.encode(data.text_raw);

  Adam opt(AdamConfig{learning_rate, 0.9, 0.999, 1e-8, 0.0});
  std::vector<Tensor*> params = {&result.adaptors.image.w1, &result.adaptors.image.w2,
                                 &result.adaptors.text.w1, &result.adaptors.text.w2};

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng epoch_rng = rng.fork(epoch + 1);
    std::vector<std::size_t> shuffled = order;
    epoch_rng.shuffle(shuffled);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + cfg.batch_size <= shuffled.size();
         start += cfg.batch_size) {
      std::vector<std::size_t> batch(shuffled.begin() + start,
                                     shuffled.begin() + start + cfg.batch_size);
      GradTape tape;
      Var iw1 = tape.parameter(result.adaptors.image.w1);
      Var iw2 = tape.parameter(result.adaptors.image.w2);
      Var tw1 = tape.parameter(result.adaptors.text.w1);
      Var tw2 = tape.parameter(result.adaptors.text.w2);
      Var xi = tape.constant(take_rows(image_feat, batch));
      Var ti = tape.constant(take_rows(text_feat, batch));
      Var loss = contrastive_loss_var(AdaptorStack::apply_var(xi, iw1, iw2),
                                      AdaptorStack::apply_var(ti, tw1, tw2), cfg);
      const double value = tape.value(loss).item();
      if (!std::isfinite(value)) {
        throw DivergenceError("pretrain_adaptors: non-finite loss at epoch " +
                              std::to_string(epoch));
      }
      epoch_loss += value;
      ++batches;
      auto grads = tape.backward(loss);
      opt.step(params, grads);
    }
    result.loss_per_epoch.push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
  }
  return result;
}

double retrieval_top1(const AdaptorParams& adaptors, const StubEncoder& image_enc,
                      const StubEncoder& text_enc, const PairedDataset& held_out) {
  const Tensor xe = adaptors.image.apply(image_enc.encode(held_out.image_raw));
  const Tensor te = adaptors.text.apply(text_enc.encode(held_out.text_raw));
  const std::size_t n = xe.rows(), d = xe.cols();
  auto norm_row = [&](const Tensor& t, std::size_t i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += t.at(i, j) * t.at(i, j);
    return std::sqrt(sq);
  };
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = -2.0;
    std::size_t best_j = 0;
    const double nx = norm_row(xe, i);
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += xe.at(i, k) * te.at(j, k);
      const double cosine = dot / (nx * norm_row(te, j));
      if (cosine > best) {
        best = cosine;
        best_j = j;
      }
    }
    hits += best_j == i ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace promptot
