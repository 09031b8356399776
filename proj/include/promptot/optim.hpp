// Adam with decoupled weight decay. With weight_decay = 0 a step is
// bit-identical to vanilla Adam.
#pragma once

#include <span>
#include <vector>

#include "promptot/tensor.hpp"

namespace promptot {

struct AdamConfig {
  double lr = 9e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  /// Applies one update in place. Parameter order must stay fixed across
  /// steps; moment buffers are allocated on first use.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long step_count_ = 0;
};

}  // namespace promptot
