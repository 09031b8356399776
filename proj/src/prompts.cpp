#include "promptot/prompts.hpp"

#include <cmath>
#include <string>

namespace promptot {

const char* mag_name(Mag m) { return m == Mag::kLow ? "low" : "high"; }

namespace {

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

VisualPromptSet VisualPromptSet::init(std::size_t classes, std::size_t num_prompts,
                                      std::size_t dim, Rng& rng) {
  if (classes < 1 || num_prompts < 1 || dim < 1) {
    throw InvalidInputError("VisualPromptSet: classes, N_p and dim must be positive");
  }
  VisualPromptSet set;
  set.num_classes = classes;
  set.num_prompts = num_prompts;
  set.dim = dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t m = 0; m < kNumMags; ++m) {
      set.prompts.push_back(uniform_tensor({num_prompts, dim}, bound, rng));
    }
  }
  return set;
}

Tensor& VisualPromptSet::at(std::size_t cls, Mag mag) {
  return prompts[cls * kNumMags + static_cast<std::size_t>(mag)];
}

const Tensor& VisualPromptSet::at(std::size_t cls, Mag mag) const {
  return prompts[cls * kNumMags + static_cast<std::size_t>(mag)];
}

TextPromptSet TextPromptSet::init(std::size_t classes, std::size_t m, std::size_t k,
                                  std::size_t context_len, std::size_t token_dim, Rng& rng) {
  if (classes < 1 || m < 1 || k < 1 || token_dim < 1) {
    throw InvalidInputError("TextPromptSet: classes, M, K and token_dim must be positive");
  }
  TextPromptSet set;
  set.num_classes = classes;
  set.num_sequences = m;
  set.tokens_per_seq = k;
  set.token_dim = token_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(token_dim));
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      for (std::size_t i = 0; i < m; ++i) {
        set.tokens.push_back(uniform_tensor({k, token_dim}, bound, rng));
      }
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    set.context.push_back(uniform_tensor({context_len, token_dim}, bound, rng));
  }
  return set;
}

Tensor& TextPromptSet::token_seq(std::size_t cls, Mag mag, std::size_t m) {
  return tokens[(cls * kNumMags + static_cast<std::size_t>(mag)) * num_sequences + m];
}

const Tensor& TextPromptSet::token_seq(std::size_t cls, Mag mag, std::size_t m) const {
  return tokens[(cls * kNumMags + static_cast<std::size_t>(mag)) * num_sequences + m];
}

namespace {

Var prompt_attention(Var prompt, Var features, const char* op) {
  GradTape& tape = *prompt.tape;
  const Tensor& pv = tape.value(prompt);
  const Tensor& fv = tape.value(features);
  if (fv.rank() != 2 || fv.rows() == 0) {
    throw InvalidInputError(std::string(op) + ": empty bag");
  }
  if (pv.rank() != 2 || pv.cols() != fv.cols()) {
    throw InvalidInputError(std::string(op) + ": prompt width " + pv.shape_str() +
                            " does not match features " + fv.shape_str());
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(pv.cols()));
  Var scores = affine(matmul(prompt, transpose(features)), inv_sqrt_d, 0.0);
  Var pooled = matmul(softmax_rows(scores), features);
  return add(layer_norm(pooled), prompt);
}

}  // namespace

Var patch_prompting(Var visual_prompt, Var features) {
  return prompt_attention(visual_prompt, features, "patch_prompting");
}

Var group_prompting(Var visual_prompt, Var group_features) {
  return prompt_attention(visual_prompt, group_features, "group_prompting");
}

Var fuse(Var patch_branch, Var group_branch, const FusionConfig& cfg) {
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) {
    throw ConfigError("fuse: alpha must lie in [0,1], got " + std::to_string(cfg.alpha));
  }
  GradTape& tape = *patch_branch.tape;
  if (!tape.value(patch_branch).same_shape(tape.value(group_branch))) {
    throw InvalidInputError("fuse: branch shapes differ, " +
                            tape.value(patch_branch).shape_str() + " vs " +
                            tape.value(group_branch).shape_str());
  }
  if (cfg.alpha == 0.0) return patch_branch;
  if (cfg.alpha == 1.0) return group_branch;
  return add(affine(patch_branch, 1.0 - cfg.alpha, 0.0), affine(group_branch, cfg.alpha, 0.0));
}

Var encode_text_prompts(GradTape& tape, const TextPromptSet& prompts, std::size_t cls,
                        Mag mag, const std::vector<Var>& token_vars,
                        const TextEncoder& encoder) {
  (void)mag;
  if (token_vars.size() != prompts.num_sequences) {
    throw InvalidInputError("encode_text_prompts: expected " +
                            std::to_string(prompts.num_sequences) + " token sequences, got " +
                            std::to_string(token_vars.size()));
  }
  const std::size_t want_dim =
      encoder.is_identity() ? prompts.token_dim : encoder.adaptor_w2.rows();
  if (encoder.output_dim != want_dim) {
    throw ConfigError("encode_text_prompts: encoder width " + std::to_string(want_dim) +
                      " does not match configured output dim " +
                      std::to_string(encoder.output_dim));
  }
  Var context = tape.constant(prompts.context[cls]);
  std::vector<Var> pooled;
  pooled.reserve(prompts.num_sequences);
  for (Var seq : token_vars) {
    Var joined = vstack(std::vector<Var>{seq, context});
    pooled.push_back(mean_rows(joined));
  }
  Var stacked = vstack(pooled);  // M x token_dim
  if (encoder.is_identity()) return stacked;
  Var w1 = tape.constant(encoder.adaptor_w1);
  Var w2 = tape.constant(encoder.adaptor_w2);
  Var hidden = tanh_activation(matmul(stacked, transpose(w1)));
  return matmul(hidden, transpose(w2));
}

}  // namespace promptot
