#include "promptot/optim.hpp"

#include <cmath>
#include <string>

#include "promptot/errors.hpp"

namespace promptot {

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw InvalidInputError("Adam: " + std::to_string(params.size()) + " params vs " +
                            std::to_string(grads.size()) + " grads");
  }
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) {
    throw InvalidInputError("Adam: parameter count changed between steps");
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p];
    const Tensor& g = grads[p];
    if (!theta.same_shape(g)) {
      throw InvalidInputError("Adam: grad shape " + g.shape_str() + " vs param " +
                              theta.shape_str());
    }
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (cfg_.weight_decay != 0.0) {
        theta[i] -= cfg_.lr * cfg_.weight_decay * theta[i];
      }
    }
  }
}

}  // namespace promptot
