// Reverse-mode differentiation over dense tensors. A GradTape owns an
// append-only node list; append order is the topological order, and backward
// visits each node exactly once in reverse. Forward ops are pure; one
// training step owns one tape and tapes are never shared across steps.
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "promptot/tensor.hpp"

namespace promptot {

class GradTape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  GradTape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Value that never receives gradient.
  Var constant(Tensor value);

  /// Trainable root. Roots are reported by backward() in registration order.
  Var parameter(Tensor value);

  const Tensor& value(Var v) const;
  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_params() const { return roots_.size(); }

  /// Gradient of a scalar loss with respect to every root parameter, in
  /// registration order. Non-root gradients are discarded.
  std::vector<Tensor> backward(Var loss);

  // --- recording interface used by the op functions ---
  using BackwardFn = std::function<void(GradTape&, int self)>;
  Var record(Tensor value, std::vector<int> inputs, BackwardFn fn, const char* op_name);

  /// Gradient accumulator for a node; allocated zero on first touch.
  Tensor& grad(int id);
  bool has_grad(int id) const { return !nodes_[id].grad.shape().empty(); }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }
  const char* op_name(int id) const { return nodes_[id].op_name; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty shape until touched by backward
    std::vector<int> inputs;
    BackwardFn backward_fn;
    const char* op_name = "leaf";
    bool requires_grad = false;
  };

  // deque keeps references returned by value()/grad() stable while ops append
  std::deque<Node> nodes_;
  std::vector<int> roots_;
};

// ----- primitive operations (forward value + recorded backward) -----

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
/// scale * x + shift, elementwise.
Var affine(Var a, double scale, double shift);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, std::vector<std::size_t> shape);
/// Rowwise softmax with per-row max subtraction.
Var softmax_rows(Var a);
/// Rowwise (x - mean) / sqrt(var + eps), population variance, no affine.
Var layer_norm(Var a, double eps = 1e-5);
Var leaky_relu(Var a, double slope);
Var tanh_activation(Var a);
Var log_elem(Var a);
Var clamp_min(Var a, double floor);
/// Rows scaled to unit Euclidean length; rejects zero rows.
Var row_l2_normalize(Var a);
Var sum_all(Var a);
Var mean_all(Var a);
/// Column means as a 1 x d row.
Var mean_rows(Var a);
Var vstack(std::span<const Var> parts);
/// Single entry as a 1x1 tensor.
Var pick(Var a, std::size_t r, std::size_t c);
/// out[e, :] = X[idx[e], :]
Var gather_rows(Var x, std::vector<int> idx);
/// Softmax over contiguous segments of a column vector. `offsets` has one
/// entry per segment boundary plus the total length.
Var segment_softmax(Var logits, std::vector<int> offsets);
/// out[i, :] = s[i] * X[i, :] with s a column vector.
Var rowscale(Var x, Var s);
/// out[dst[e], :] += w[e] * X[src[e], :]
Var scatter_weighted_sum(Var x, std::vector<int> src, std::vector<int> dst, Var w,
                         std::size_t out_rows);

// ----- gradient checking -----

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::vector<double> per_param_max_rel_error;
  int offending_param = -1;  // set when non-finite values are seen
  std::string message;
};

/// Compares tape gradients against central finite differences. `build_loss`
/// must register the tensors in `params`, in order, via tape.parameter() and
/// return a scalar node. Relative error uses max(1, |a|, |b|) in the
/// denominator.
GradCheckReport check_gradients(const std::function<Var(GradTape&)>& build_loss,
                                std::span<Tensor* const> params, double step,
                                double tol);

}  // namespace promptot
