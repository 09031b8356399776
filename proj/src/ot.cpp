#include "promptot/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "promptot/errors.hpp"

namespace promptot {

namespace {

constexpr double kDenomFloor = 1e-300;

Tensor unit_rows(const Tensor& x, const char* side) {
  const std::size_t m = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += x.at(i, j) * x.at(i, j);
    const double norm = std::sqrt(sq);
    if (norm < 1e-150) {
      throw InvalidInputError(std::string("cost_matrix: zero row ") + std::to_string(i) +
                              " in " + side);
    }
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) / norm;
  }
  return out;
}

struct ScalingState {
  Tensor kernel;  // K = exp(-C/lambda), M x N
  Tensor a;       // length M
  Tensor b;       // length N
  int floor_hits = 0;
};

void check_scaling_finite(const Tensor& v, double lambda) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw DivergenceError(
          "sinkhorn: non-finite scaling vector (underflow at lambda=" +
          std::to_string(lambda) + "); increase lambda");
    }
  }
}

ScalingState init_scaling(const CostMatrix& cost, const SinkhornConfig& cfg) {
  if (!(cfg.lambda > 0.0)) {
    throw InvalidInputError("sinkhorn: lambda must be positive");
  }
  const std::size_t m = cost.rows(), n = cost.cols();
  ScalingState st;
  st.kernel = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      st.kernel.at(i, j) = std::exp(-cost.values.at(i, j) / cfg.lambda);
  st.a = Tensor({m});
  st.a.fill(1.0);
  st.b = Tensor({n});
  st.b.fill(1.0);
  return st;
}

// a = (mu / (K b))^pa  then  b = (nu / (K^T a))^pb ; pa = pb = 1 is balanced.
void scaling_pass(ScalingState& st, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                  double pa, double pb, double lambda) {
  const std::size_t m = st.kernel.rows(), n = st.kernel.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double kb = 0.0;
    for (std::size_t j = 0; j < n; ++j) kb += st.kernel.at(i, j) * st.b[j];
    if (kb < kDenomFloor) {
      kb = kDenomFloor;
      ++st.floor_hits;
    }
    const double ratio = mu.weights[i] / kb;
    st.a[i] = pa == 1.0 ? ratio : std::pow(ratio, pa);
  }
  check_scaling_finite(st.a, lambda);
  for (std::size_t j = 0; j < n; ++j) {
    double ka = 0.0;
    for (std::size_t i = 0; i < m; ++i) ka += st.kernel.at(i, j) * st.a[i];
    if (ka < kDenomFloor) {
      ka = kDenomFloor;
      ++st.floor_hits;
    }
    const double ratio = nu.weights[j] / ka;
    st.b[j] = pb == 1.0 ? ratio : std::pow(ratio, pb);
  }
  check_scaling_finite(st.b, lambda);
  if (st.floor_hits > 1) {
    throw DivergenceError("sinkhorn: scaling denominators collapsed more than once; "
                          "increase lambda");
  }
}

TransportPlan finish_plan(ScalingState&& st, const DiscreteMeasure& mu,
                          const DiscreteMeasure& nu, std::size_t iterations) {
  const std::size_t m = st.kernel.rows(), n = st.kernel.cols();
  TransportPlan plan;
  plan.coupling = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      plan.coupling.at(i, j) = st.a[i] * st.kernel.at(i, j) * st.b[j];
  plan.row_scaling = std::move(st.a);
  plan.col_scaling = std::move(st.b);
  plan.iterations_run = iterations;
  double viol = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double rs = 0.0;
    for (std::size_t j = 0; j < n; ++j) rs += plan.coupling.at(i, j);
    viol = std::max(viol, std::abs(rs - mu.weights[i]));
  }
  for (std::size_t j = 0; j < n; ++j) {
    double cs = 0.0;
    for (std::size_t i = 0; i < m; ++i) cs += plan.coupling.at(i, j);
    viol = std::max(viol, std::abs(cs - nu.weights[j]));
  }
  plan.marginal_violation = viol;
  return plan;
}

void check_measure_sizes(const CostMatrix& cost, const DiscreteMeasure& mu,
                         const DiscreteMeasure& nu) {
  if (mu.size() != cost.rows() || nu.size() != cost.cols()) {
    throw InvalidInputError("sinkhorn: marginal lengths " + std::to_string(mu.size()) + "/" +
                            std::to_string(nu.size()) + " do not match cost " +
                            cost.values.shape_str());
  }
}

}  // namespace

DiscreteMeasure DiscreteMeasure::uniform(std::size_t n) {
  if (n == 0) throw InvalidInputError("DiscreteMeasure: empty support");
  Tensor w({n});
  w.fill(1.0 / static_cast<double>(n));
  return DiscreteMeasure{std::move(w)};
}

DiscreteMeasure DiscreteMeasure::from_weights(Tensor w) {
  if (w.size() == 0) throw InvalidInputError("DiscreteMeasure: empty support");
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] < 0.0 || !std::isfinite(w[i])) {
      throw InvalidInputError("DiscreteMeasure: negative or non-finite weight at " +
                              std::to_string(i));
    }
    sum += w[i];
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw InvalidInputError("DiscreteMeasure: weights sum to " + std::to_string(sum) +
                            ", expected 1");
  }
  return DiscreteMeasure{std::move(w)};
}

double TransportPlan::mass() const {
  double s = 0.0;
  for (std::size_t i = 0; i < coupling.size(); ++i) s += coupling[i];
  return s;
}

CostMatrix cost_matrix(const Tensor& f, const Tensor& g) {
  if (f.rank() != 2 || g.rank() != 2 || f.cols() != g.cols()) {
    throw InvalidInputError("cost_matrix: embeddings must be rank-2 with equal width, got " +
                            f.shape_str() + " and " + g.shape_str());
  }
  const Tensor fu = unit_rows(f, "F");
  const Tensor gu = unit_rows(g, "G");
  const std::size_t m = fu.rows(), n = gu.rows(), d = fu.cols();
  CostMatrix cost;
  cost.values = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += fu.at(i, k) * gu.at(j, k);
      cost.values.at(i, j) = std::clamp(1.0 - dot, 0.0, 2.0);
    }
  }
  return cost;
}

Var cost_matrix_var(Var f, Var g) {
  // Clamping is omitted on the tape: unit rows keep 1 - f.g inside [0,2] up
  // to rounding, and a clamp would zero gradients at the boundary.
  Var fu = row_l2_normalize(f);
  Var gu = row_l2_normalize(g);
  Var sim = matmul(fu, transpose(gu));
  return affine(sim, -1.0, 1.0);
}

TransportPlan sinkhorn(const CostMatrix& cost, const DiscreteMeasure& mu,
                       const DiscreteMeasure& nu, const SinkhornConfig& cfg) {
  if (cfg.uot.has_value()) {
    throw InvalidInputError("sinkhorn: balanced solver called with uot config set");
  }
  check_measure_sizes(cost, mu, nu);
  ScalingState st = init_scaling(cost, cfg);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    scaling_pass(st, mu, nu, 1.0, 1.0, cfg.lambda);
  }
  return finish_plan(std::move(st), mu, nu, cfg.iterations);
}

TransportPlan unbalanced_sinkhorn(const CostMatrix& cost, const DiscreteMeasure& mu,
                                  const DiscreteMeasure& nu, const SinkhornConfig& cfg) {
  if (!cfg.uot.has_value()) {
    throw InvalidInputError("unbalanced_sinkhorn: cfg.uot must be set");
  }
  const auto [rho1, rho2] = *cfg.uot;
  if (!(rho1 > 0.0) || !(rho2 > 0.0)) {
    throw InvalidInputError("unbalanced_sinkhorn: rho1 and rho2 must be positive");
  }
  check_measure_sizes(cost, mu, nu);
  const double pa = rho1 / (rho1 + cfg.lambda);
  const double pb = rho2 / (rho2 + cfg.lambda);
  ScalingState st = init_scaling(cost, cfg);
  // Entropy is taken relative to mu (x) nu, so the kernel carries the marginal
  // weights; with zero cost the fixed point is exactly the product coupling
  // and total mass stays at one.
  for (std::size_t i = 0; i < mu.size(); ++i) {
    for (std::size_t j = 0; j < nu.size(); ++j) {
      st.kernel.at(i, j) *= mu.weights[i] * nu.weights[j];
    }
  }
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    scaling_pass(st, mu, nu, pa, pb, cfg.lambda);
  }
  return finish_plan(std::move(st), mu, nu, cfg.iterations);
}

double ot_distance(const TransportPlan& plan, const CostMatrix& cost) {
  if (!plan.coupling.same_shape(cost.values)) {
    throw InvalidInputError("ot_distance: plan " + plan.coupling.shape_str() +
                            " does not match cost " + cost.values.shape_str());
  }
  double d = 0.0;
  for (std::size_t i = 0; i < plan.coupling.size(); ++i) d += plan.coupling[i] * cost.values[i];
  return d;
}

Var ot_distance_var(Var cost, const TransportPlan& plan) {
  GradTape& t = *cost.tape;
  const Tensor& cv = t.value(cost);
  if (!plan.coupling.same_shape(cv)) {
    throw InvalidInputError("ot_distance: plan " + plan.coupling.shape_str() +
                            " does not match cost " + cv.shape_str());
  }
  double d = 0.0;
  for (std::size_t i = 0; i < cv.size(); ++i) d += plan.coupling[i] * cv[i];
  const int ic = cost.id;
  Tensor coupling = plan.coupling;
  return t.record(Tensor::scalar(d), {ic},
                  [ic, coupling = std::move(coupling)](GradTape& tp, int self) {
                    const double g = tp.grad(self)[0];
                    Tensor& dc = tp.grad(ic);
                    for (std::size_t i = 0; i < dc.size(); ++i) dc[i] += g * coupling[i];
                  },
                  "ot_distance");
}

double exact_ot_uniform(const CostMatrix& cost) {
  const std::size_t n = cost.rows();
  if (n != cost.cols()) {
    throw InvalidInputError("exact_ot_uniform: cost must be square, got " +
                            cost.values.shape_str());
  }
  if (n > 7) {
    throw InvalidInputError("exact_ot_uniform: n = " + std::to_string(n) +
                            " exceeds enumeration limit 7");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost.values.at(i, perm[i]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

}  // namespace promptot
