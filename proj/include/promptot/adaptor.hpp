// Contrastive alignment stage: trainable two-layer adaptors over frozen stub
// encoders, trained with the image-anchored noise-contrastive objective.
#pragma once

#include <cstddef>
#include <vector>

#include "promptot/rng.hpp"
#include "promptot/tape.hpp"
#include "promptot/tensor.hpp"

namespace promptot {

/// Frozen random linear map plus tanh, standing in for a pretrained encoder.
/// Deterministic per seed; never registered on a tape.
struct StubEncoder {
  Tensor weight;  // out_dim x raw_dim

  static StubEncoder init(std::size_t raw_dim, std::size_t out_dim, std::uint64_t seed);
  /// tanh(W x / sqrt(raw_dim)) applied rowwise to a batch (rows = samples).
  Tensor encode(const Tensor& raw) const;
};

/// Bias-free two-layer perceptron per modality: x -> W2 tanh(W1 x).
struct AdaptorStack {
  Tensor w1;  // hidden x in_dim
  Tensor w2;  // out_dim x hidden

  static AdaptorStack init(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                           Rng& rng);
  std::size_t in_dim() const { return w1.cols(); }
  std::size_t out_dim() const { return w2.rows(); }
  /// Plain forward for frozen use.
  Tensor apply(const Tensor& x) const;
  /// Tape forward; w1/w2 must already be registered on x's tape.
  static Var apply_var(Var x, Var w1, Var w2);
};

/// Both modality adaptors; image maps d_v -> d, text maps d_t -> d.
struct AdaptorParams {
  AdaptorStack image;
  AdaptorStack text;
};

struct ContrastiveConfig {
  double tau = 0.07;
  std::size_t batch_size = 64;
};

/// Mean over rows of -log softmax_j(cos(x_i, t_j)/tau) at j = i, cosine on
/// unit-normalized rows. Rows are paired by index. Rejects zero rows.
Var contrastive_loss_var(Var image_emb, Var text_emb, const ContrastiveConfig& cfg);

/// Plain evaluation convenience.
double contrastive_loss(const Tensor& image_emb, const Tensor& text_emb,
                        const ContrastiveConfig& cfg);

/// Paired raw vectors for the alignment stage.
struct PairedDataset {
  Tensor image_raw;  // n x raw_dim
  Tensor text_raw;   // n x raw_dim
  std::size_t size() const { return image_raw.rows(); }
};

struct PretrainResult {
  AdaptorParams adaptors;
  std::vector<double> loss_per_epoch;
};

/// Adam updates on the adaptor weights only; stub encoder outputs enter the
/// tape as constants. Batches are drawn by seeded shuffle each epoch.
PretrainResult pretrain_adaptors(const PairedDataset& data, const StubEncoder& image_enc,
                                 const StubEncoder& text_enc, const ContrastiveConfig& cfg,
                                 std::size_t epochs, std::uint64_t seed,
                                 std::size_t embed_dim, double learning_rate = 1e-3);

/// Fraction of rows whose own pair wins the in-batch argmax over cosine
/// similarity of adapted embeddings.
double retrieval_top1(const AdaptorParams& adaptors, const StubEncoder& image_enc,
                      const StubEncoder& text_enc, const PairedDataset& held_out);

}  // namespace promptot
