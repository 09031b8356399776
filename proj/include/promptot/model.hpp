// Full pipeline state and the per-slide forward pass: adapted features feed
// patch-level prompting and (graph -> attention -> group prompting), the two
// branches interpolate, and each class's fused prompts align against its text
// prompts through the OT (or cosine) head.
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "promptot/adaptor.hpp"
#include "promptot/classifier.hpp"
#include "promptot/gat.hpp"
#include "promptot/ot.hpp"
#include "promptot/prompts.hpp"
#include "promptot/synthetic.hpp"
#include "promptot/train_config.hpp"

namespace promptot {

struct ModelState {
  TrainConfig cfg;
  std::size_t classes = 0;
  std::size_t d_v = 0;       // dataset feature width
  std::size_t d = 0;         // embedding width after adaptation
  std::size_t token_dim = 0; // text token width
  VisualPromptSet visual;
  TextPromptSet text;
  GatParams gat;
  std::optional<AdaptorParams> adaptors;  // frozen during training
  std::size_t best_epoch = 0;

  /// Seeded init. With adaptors the widths come from the adaptor stacks;
  /// raw configuration uses d = token_dim = d_v.
  static ModelState init(const TrainConfig& cfg, std::size_t classes, std::size_t d_v,
                         std::uint64_t seed, std::optional<AdaptorParams> adaptors = {});

  /// Trainable tensors in their canonical (checkpoint and optimizer) order:
  /// visual prompts, text tokens, then the four attention-layer tensors.
  std::vector<Tensor*> trainable();
  std::vector<const Tensor*> trainable() const;

  /// Deep copy / restore of just the trainable tensors.
  std::vector<Tensor> snapshot_trainable() const;
  void restore_trainable(const std::vector<Tensor>& snap);
};

/// Records transport plans on first use and replays them afterwards; lets the
/// finite-difference oracle hold plans fixed, matching the envelope gradient.
struct PlanCache {
  std::vector<TransportPlan> plans;
  std::size_t cursor = 0;
};

struct ForwardOptions {
  bool trainable = false;    // register model tensors as tape roots
  bool patch_only = false;   // bypass the group branch entirely
  PlanCache* plan_cache = nullptr;
};

struct SlideForwardResult {
  std::vector<std::array<Var, kNumMags>> dist_vars;  // per class, per magnification
  ClassDistances distances;
};

/// Forward pass for one slide on the given tape. When opts.trainable the
/// parameter registration order matches ModelState::trainable().
SlideForwardResult forward_slide(GradTape& tape, const PatchBag& bag, const ModelState& model,
                                 const ForwardOptions& opts = {});

/// Distances -> probabilities -> metrics over a set of slides (no training).
MetricsReport evaluate_slides(const ModelState& model, const std::vector<PatchBag>& slides);

/// Probability vector for one slide (plain forward).
std::vector<double> predict_slide(const ModelState& model, const PatchBag& bag);

// --- checkpoint container bindings ---

void save_model(const ModelState& model, const std::filesystem::path& file);
ModelState load_model(const std::filesystem::path& file);

void save_adaptors(const AdaptorParams& adaptors, const std::filesystem::path& file);
AdaptorParams load_adaptors(const std::filesystem::path& file);

}  // namespace promptot
