// Turns per-class, per-magnification alignment distances into class
// probabilities and the training loss, and scores predictions (AUC / F1 / ACC).
#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

#include "promptot/prompts.hpp"
#include "promptot/tape.hpp"

namespace promptot {

/// Alignment distance per class and magnification.
struct ClassDistances {
  std::vector<std::array<double, kNumMags>> d;  // [class][mag]
  std::size_t num_classes() const { return d.size(); }
};

/// Optional per-magnification contribution weights; both default to 1 so the
/// probability matches the plain two-term sum.
struct MagWeights {
  double low = 1.0;
  double high = 1.0;
};

/// P_c = exp(2 - sum_k d[c][k]) / sum_c' exp(2 - sum_k d[c'][k]).
std::vector<double> class_probabilities(const ClassDistances& dist,
                                        const MagWeights& weights = {});

/// Tape variant over scalar distance nodes; returns a 1 x C probability row.
Var class_probabilities_var(const std::vector<std::array<Var, kNumMags>>& dist,
                            const MagWeights& weights = {});

/// -log P_gt with P_gt floored at 1e-12.
double cross_entropy_loss(const std::vector<double>& probs, std::size_t ground_truth);

/// Tape variant taking the 1 x C probability row.
Var cross_entropy_loss_var(Var probs, std::size_t ground_truth);

struct MetricsReport {
  std::optional<double> auc;  // empty when labels contain a single class
  double f1 = 0.0;
  double acc = 0.0;
};

/// AUC is the macro one-vs-rest Mann-Whitney statistic with 0.5 credit for
/// ties; F1 is macro-averaged; ACC uses argmax with ties resolved to the
/// lowest class index.
MetricsReport compute_metrics(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::size_t>& labels);

/// CSV with header `fold,auc,f1,acc`, one row per fold and a mean/std footer
/// pair. Undefined AUC prints as "nan".
void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& folds);

}  // namespace promptot
