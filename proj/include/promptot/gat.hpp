// Single-head graph-attention message passing. Attention logits use the
// additive form LeakyReLU(a_s . (Ws x_i) + a_t . (Wt x_j)) over the
// neighborhood of i plus i itself; the self message goes through Ws, neighbor
// messages through Wt.
#pragma once

#include "promptot/rng.hpp"
#include "promptot/spatial_graph.hpp"
#include "promptot/tape.hpp"
#include "promptot/tensor.hpp"

namespace promptot {

struct GatParams {
  Tensor self_weight;   // d x d, applied to the node being updated
  Tensor neigh_weight;  // d x d, applied to neighbors
  Tensor self_score;    // d
  Tensor neigh_score;   // d
  double slope = 0.2;   // LeakyReLU slope inside the logits

  /// Uniform init in [-1/sqrt(d), 1/sqrt(d)].
  static GatParams init(std::size_t d, Rng& rng, double slope = 0.2);

  /// Registers the four tensors on a tape. `trainable` selects parameter vs
  /// constant registration (evaluation reuses the same graph construction).
  struct OnTape {
    Var self_weight, neigh_weight, self_score, neigh_score;
  };
  OnTape put_on_tape(GradTape& tape, bool trainable) const;
};

/// One message-passing pass over the graph; output row i aggregates node i and
/// its neighbors with softmax attention. X must have graph.num_nodes() rows.
Var gat_forward(const SpatialGraph& graph, Var x, const GatParams::OnTape& params,
                double slope);

/// Convenience overload: registers params as constants on x's tape.
Var gat_forward(const SpatialGraph& graph, Var x, const GatParams& params);

}  // namespace promptot
