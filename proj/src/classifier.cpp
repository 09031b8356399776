#include "promptot/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "promptot/errors.hpp"

namespace promptot {

namespace {

constexpr double kProbFloor = 1e-12;

double distance_sum(const std::array<double, kNumMags>& d, const MagWeights& w) {
  return w.low * d[0] + w.high * d[1];
}

}  // namespace

std::vector<double> class_probabilities(const ClassDistances& dist, const MagWeights& weights) {
  const std::size_t c = dist.num_classes();
  if (c < 2) throw InvalidInputError("class_probabilities: need at least 2 classes");
  std::vector<double> logits(c);
  for (std::size_t i = 0; i < c; ++i) {
    for (double v : dist.d[i]) {
      if (!std::isfinite(v)) {
        throw InvalidInputError("class_probabilities: non-finite distance for class " +
                                std::to_string(i));
      }
    }
    logits[i] = 2.0 - distance_sum(dist.d[i], weights);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  std::vector<double> probs(c);
  for (std::size_t i = 0; i < c; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

Var class_probabilities_var(const std::vector<std::array<Var, kNumMags>>& dist,
                            const MagWeights& weights) {
  if (dist.size() < 2) throw InvalidInputError("class_probabilities: need at least 2 classes");
  std::vector<Var> logits;
  logits.reserve(dist.size());
  for (const auto& per_mag : dist) {
    Var sum = add(affine(per_mag[0], weights.low, 0.0), affine(per_mag[1], weights.high, 0.0));
    logits.push_back(affine(sum, -1.0, 2.0));  // 2 - weighted distance sum
  }
  Var column = vstack(logits);  // C x 1
  return softmax_rows(transpose(column));
}

double cross_entropy_loss(const std::vector<double>& probs, std::size_t ground_truth) {
  if (ground_truth >= probs.size()) {
    throw InvalidInputError("cross_entropy_loss: label " + std::to_string(ground_truth) +
                            " outside " + std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::max(probs[ground_truth], kProbFloor));
}

Var cross_entropy_loss_var(Var probs, std::size_t ground_truth) {
  const Tensor& pv = probs.tape->value(probs);
  if (ground_truth >= pv.cols()) {
    throw InvalidInputError("cross_entropy_loss: label " + std::to_string(ground_truth) +
                            " outside " + std::to_string(pv.cols()) + " classes");
  }
  return affine(log_elem(clamp_min(pick(probs, 0, ground_truth), kProbFloor)), -1.0, 0.0);
}

MetricsReport compute_metrics(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::size_t>& labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw InvalidInputError("compute_metrics: empty input or score/label length mismatch");
  }
  const std::size_t n = scores.size();
  const std::size_t c = scores.front().size();
  for (const auto& s : scores) {
    if (s.size() != c) throw InvalidInputError("compute_metrics: ragged score rows");
  }

  // argmax predictions, ties to the lowest class index
  std::vector<std::size_t> pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (scores[i][k] > scores[i][best]) best = k;
    }
    pred[i] = best;
  }

  MetricsReport rep;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += pred[i] == labels[i] ? 1 : 0;
  rep.acc = static_cast<double>(correct) / static_cast<double>(n);

  // macro F1 over all classes
  double f1_sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_k = labels[i] == k;
      const bool said_k = pred[i] == k;
      tp += (is_k && said_k) ? 1 : 0;
      fp += (!is_k && said_k) ? 1 : 0;
      fn += (is_k && !said_k) ? 1 : 0;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
  rep.f1 = f1_sum / static_cast<double>(c);

  // macro one-vs-rest AUC; undefined when only one class is present
  bool multi_class = false;
  for (std::size_t i = 1; i < n; ++i) {
    if (labels[i] != labels[0]) {
      multi_class = true;
      break;
    }
  }
  if (multi_class) {
    double auc_sum = 0.0;
    std::size_t auc_terms = 0;
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) pos += labels[i] == k ? 1 : 0;
      if (pos == 0 || pos == n) continue;
      // Mann-Whitney via midranks of the class-k score column.
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a][k] < scores[b][k];
      });
      std::vector<double> rank(n);
      std::size_t i = 0;
      while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]][k] == scores[order[i]][k]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
        i = j + 1;
      }
      double pos_rank_sum = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        if (labels[t] == k) pos_rank_sum += rank[t];
      }
      const double np = static_cast<double>(pos);
      const double nn = static_cast<double>(n - pos);
      auc_sum += (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
      ++auc_terms;
    }
    rep.auc = auc_sum / static_cast<double>(auc_terms);
  }
  return rep;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& folds) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  auto auc_str = [&](const std::optional<double>& a) {
    return a.has_value() ? fmt(*a) : std::string("nan");
  };
  out << "fold,auc,f1,acc\n";
  double sa = 0.0, sf = 0.0, sc = 0.0;
  double qa = 0.0, qf = 0.0, qc = 0.0;
  std::size_t auc_count = 0;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    const MetricsReport& r = folds[i];
    out << i << "," << auc_str(r.auc) << "," << fmt(r.f1) << "," << fmt(r.acc) << "\n";
    if (r.auc.has_value()) {
      sa += *r.auc;
      qa += *r.auc * *r.auc;
      ++auc_count;
    }
    sf += r.f1;
    qf += r.f1 * r.f1;
    sc += r.acc;
    qc += r.acc * r.acc;
  }
  const double n = static_cast<double>(folds.size());
  auto std_of = [](double sum, double sq, double count) {
    if (count < 2.0) return 0.0;
    const double mean = sum / count;
    const double var = (sq - count * mean * mean) / (count - 1.0);
    return std::sqrt(std::max(var, 0.0));
  };
  const double na = static_cast<double>(auc_count);
  out << "mean," << (auc_count ? fmt(sa / na) : "nan") << "," << fmt(sf / n) << ","
      << fmt(sc / n) << "\n";
  out << "std," << (auc_count ? fmt(std_of(sa, qa, na)) : "nan") << ","
      << fmt(std_of(sf, qf, n)) << "," << fmt(std_of(sc, qc, n)) << "\n";
}

}  // namespace promptot
