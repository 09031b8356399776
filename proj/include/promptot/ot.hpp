// Entropic optimal transport: cost matrix construction, fixed-iteration
// Sinkhorn scaling, the KL-relaxed unbalanced variant, and an exact
// enumeration oracle for small uniform problems.
#pragma once

#include <cstddef>
#include <optional>
#include <utility>

#include "promptot/tape.hpp"
#include "promptot/tensor.hpp"

namespace promptot {

/// Probability weights of a discrete measure. Construction always requires
/// normalized weights; the unbalanced solver relaxes how marginals are
/// enforced, not how measures are built.
struct DiscreteMeasure {
  Tensor weights;  // rank-1

  static DiscreteMeasure uniform(std::size_t n);
  /// Validates nonnegativity and unit total mass (tolerance 1e-12).
  static DiscreteMeasure from_weights(Tensor w);
  std::size_t size() const { return weights.size(); }
};

/// Cost between unit-normalized embedding rows: C_ij = 1 - f_i . g_j in [0,2].
struct CostMatrix {
  Tensor values;  // M x N
  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

struct TransportPlan {
  Tensor coupling;        // M x N, nonnegative
  Tensor row_scaling;     // a, length M
  Tensor col_scaling;     // b, length N
  std::size_t iterations_run = 0;
  double marginal_violation = 0.0;  // max-norm against the requested marginals
  double mass() const;
};

struct SinkhornConfig {
  double lambda = 0.1;
  std::size_t iterations = 100;
  /// Marginal relaxation strengths (rho1 rows, rho2 columns); set for UoT only.
  std::optional<std::pair<double, double>> uot;
};

/// C = 1 - normalize_rows(F) . normalize_rows(G)^T, entries clamped to [0,2].
/// Rejects zero rows, naming the offending row.
CostMatrix cost_matrix(const Tensor& f, const Tensor& g);

/// Tape variant used inside the training graph; same formula, differentiable
/// through both embedding matrices.
Var cost_matrix_var(Var f, Var g);

/// Balanced entropic OT: runs exactly cfg.iterations alternating updates
/// a = mu / (K b), b = nu / (K^T a) with K = exp(-C/lambda) and b0 = 1.
TransportPlan sinkhorn(const CostMatrix& cost, const DiscreteMeasure& mu,
                       const DiscreteMeasure& nu, const SinkhornConfig& cfg);

/// KL-relaxed scaling: the updates above raised to rho1/(rho1+lambda) and
/// rho2/(rho2+lambda) respectively; plan mass may differ from 1.
TransportPlan unbalanced_sinkhorn(const CostMatrix& cost, const DiscreteMeasure& mu,
                                  const DiscreteMeasure& nu, const SinkhornConfig& cfg);

/// Frobenius inner product of plan and cost.
double ot_distance(const TransportPlan& plan, const CostMatrix& cost);

/// Tape variant: the plan is treated as a constant, so gradient flows through
/// the cost matrix only.
Var ot_distance_var(Var cost, const TransportPlan& plan);

/// Exact optimum for uniform marginals on an n x n cost (n <= 7), by full
/// permutation enumeration: (1/n) min_sigma sum_i C[i, sigma(i)].
double exact_ot_uniform(const CostMatrix& cost);

}  // namespace promptot
