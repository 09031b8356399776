// Learnable visual and textual prompts plus the attention that pools frozen
// patch features into prompt embeddings: patch-level pooling, group-level
// pooling over graph-aggregated features, and their interpolation.
#pragma once

#include <cstddef>
#include <vector>

#include "promptot/errors.hpp"
#include "promptot/rng.hpp"
#include "promptot/tape.hpp"
#include "promptot/tensor.hpp"

namespace promptot {

enum class Mag { kLow = 0, kHigh = 1 };
inline constexpr std::size_t kNumMags = 2;
const char* mag_name(Mag m);

/// One learnable prompt matrix (N_p x d) per (class, magnification) pair.
struct VisualPromptSet {
  std::size_t num_classes = 0;
  std::size_t num_prompts = 0;  // N_p
  std::size_t dim = 0;
  std::vector<Tensor> prompts;  // [class * kNumMags + mag]

  static VisualPromptSet init(std::size_t classes, std::size_t num_prompts, std::size_t dim,
                              Rng& rng);
  Tensor& at(std::size_t cls, Mag mag);
  const Tensor& at(std::size_t cls, Mag mag) const;
};

/// Per (class, magnification): M trainable token sequences of length K, each
/// token of width token_dim. The frozen context sequence stands in for LLM
/// output, is shared across magnifications of a class, and never trains.
struct TextPromptSet {
  std::size_t num_classes = 0;
  std::size_t num_sequences = 0;  // M
  std::size_t tokens_per_seq = 0;  // K
  std::size_t token_dim = 0;
  std::vector<Tensor> tokens;   // [ (class * kNumMags + mag) * M + m ], each K x token_dim
  std::vector<Tensor> context;  // [class], each context_len x token_dim, frozen

  static TextPromptSet init(std::size_t classes, std::size_t m, std::size_t k,
                            std::size_t context_len, std::size_t token_dim, Rng& rng);
  Tensor& token_seq(std::size_t cls, Mag mag, std::size_t m);
  const Tensor& token_seq(std::size_t cls, Mag mag, std::size_t m) const;
};

struct FusionConfig {
  double alpha = 0.2;  // weight of the group branch
};

/// Attention pooling of bag features into the prompt rows:
/// layer_norm(softmax(p H^T / sqrt(d)) H) + p. Keys and Values are the raw
/// features themselves. Rejects empty bags.
Var patch_prompting(Var visual_prompt, Var features);

/// Identical contract with group-level features (the GAT output).
Var group_prompting(Var visual_prompt, Var group_features);

/// (1 - alpha) * patch + alpha * group. The endpoints return the untouched
/// branch so alpha = 0 and alpha = 1 are bit-exact reductions.
Var fuse(Var patch_branch, Var group_branch, const FusionConfig& cfg);

/// Text encoder applied to prompt sequences. Tokens live in the encoder's
/// embedding space already; encoding mean-pools each sequence (trainable
/// tokens ++ frozen context) and sends it through the frozen adaptor map,
/// identity when `adaptor_w1/w2` are empty (raw configuration).
struct TextEncoder {
  Tensor adaptor_w1;  // hidden x token_dim, empty => identity
  Tensor adaptor_w2;  // d x hidden
  std::size_t output_dim = 0;

  bool is_identity() const { return adaptor_w1.size() == 0; }
};

/// Encodes the M sequences of (cls, mag) into an M x d matrix on the tape.
/// `token_vars` are the already-registered trainable token sequences, in
/// sequence order; the frozen context is added internally as a constant.
Var encode_text_prompts(GradTape& tape, const TextPromptSet& prompts, std::size_t cls,
                        Mag mag, const std::vector<Var>& token_vars,
                        const TextEncoder& encoder);

}  // namespace promptot
