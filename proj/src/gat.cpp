#include "promptot/gat.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "promptot/errors.hpp"

namespace promptot {

GatParams GatParams::init(std::size_t d, Rng& rng, double slope) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  auto uniform_tensor = [&](std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
  };
  GatParams p;
  p.self_weight = uniform_tensor({d, d});
  p.neigh_weight = uniform_tensor({d, d});
  p.self_score = uniform_tensor({d});
  p.neigh_score = uniform_tensor({d});
  p.slope = slope;
  return p;
}

GatParams::OnTape GatParams::put_on_tape(GradTape& tape, bool trainable) const {
  auto put = [&](const Tensor& t) {
    return trainable ? tape.parameter(t) : tape.constant(t);
  };
  return OnTape{put(self_weight), put(neigh_weight), put(self_score), put(neigh_score)};
}

Var gat_forward(const SpatialGraph& graph, Var x, const GatParams::OnTape& params,
                double slope) {
  GradTape& tape = *x.tape;
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2 || xv.rows() != graph.num_nodes()) {
    throw InvalidInputError("gat_forward: features " + xv.shape_str() + " do not match " +
                            std::to_string(graph.num_nodes()) + " graph nodes");
  }
  const std::size_t n = graph.num_nodes();
  const std::size_t d = xv.cols();
  if (tape.value(params.self_weight).rows() != d ||
      tape.value(params.self_weight).cols() != d ||
      tape.value(params.neigh_weight).rows() != d ||
      tape.value(params.neigh_weight).cols() != d ||
      tape.value(params.self_score).size() != d ||
      tape.value(params.neigh_score).size() != d) {
    throw InvalidInputError("gat_forward: parameter widths do not match feature width " +
                            std::to_string(d));
  }

  // Edge list grouped by destination: self edge first, then neighbors
  // ascending. Segment s covers node s's softmax support N(i) + {i}.
  const auto neighbors = graph.neighbor_lists();
  std::vector<int> src, dst, offsets, self_pos;
  std::vector<int> nb_src, nb_dst;
  offsets.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    self_pos.push_back(static_cast<int>(src.size()));
    src.push_back(static_cast<int>(i));
    dst.push_back(static_cast<int>(i));
    for (int j : neighbors[i]) {
      src.push_back(j);
      dst.push_back(static_cast<int>(i));
      nb_src.push_back(j);
      nb_dst.push_back(static_cast<int>(i));
    }
    offsets.push_back(static_cast<int>(src.size()));
  }

  // Per-node score contributions: u_i = a_s . (Ws x_i), w_j = a_t . (Wt x_j).
  Var self_proj = matmul(x, transpose(params.self_weight));    // rows = Ws x_i
  Var neigh_proj = matmul(x, transpose(params.neigh_weight));  // rows = Wt x_j
  Var u = matmul(self_proj, reshape(params.self_score, {d, 1}));
  Var w = matmul(neigh_proj, reshape(params.neigh_score, {d, 1}));

  Var logits = leaky_relu(add(gather_rows(u, dst), gather_rows(w, src)), slope);
  Var alpha = segment_softmax(logits, offsets);

  // x'_i = alpha_ii (Ws x_i) + sum_j alpha_ij (Wt x_j)
  Var alpha_self = gather_rows(alpha, self_pos);
  Var out = rowscale(self_proj, alpha_self);
  if (!nb_src.empty()) {
    std::vector<int> nb_pos;
    nb_pos.reserve(nb_src.size());
    for (std::size_t e = 0; e < src.size(); ++e) {
      if (src[e] != dst[e]) nb_pos.push_back(static_cast<int>(e));
    }
    Var alpha_nb = gather_rows(alpha, nb_pos);
    out = add(out, scatter_weighted_sum(neigh_proj, nb_src, nb_dst, alpha_nb, n));
  }
  return out;
}

Var gat_forward(const SpatialGraph& graph, Var x, const GatParams& params) {
  auto on_tape = params.put_on_tape(*x.tape, false);
  return gat_forward(graph, x, on_tape, params.slope);
}

}  // namespace promptot
