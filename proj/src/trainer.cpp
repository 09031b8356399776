#include "promptot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>

#include "promptot/config.hpp"
#include "promptot/errors.hpp"
#include "promptot/optim.hpp"

namespace promptot {

namespace {

bool has_prefix(const std::string& s, const char* prefix) {
  return s.rfind(prefix, 0) == 0;
}

std::vector<std::vector<std::size_t>> indices_per_class(const std::vector<PatchBag>& bags,
                                                        std::size_t classes) {
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < bags.size(); ++i) by_class[bags[i].label].push_back(i);
  return by_class;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void diagnose_divergence(const ModelState& model, std::size_t epoch,
                         const std::string& slide_id, double loss_value) {
  std::string detail = "training diverged at epoch " + std::to_string(epoch) + " on slide " +
                       slide_id + " (loss = " + std::to_string(loss_value) + ")";
  const auto params = model.trainable();
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p]->all_finite()) {
      detail += "; parameter " + std::to_string(p) + " contains non-finite values";
      break;
    }
  }
  throw DivergenceError(detail);
}

}  // namespace

DatasetSplits load_splits(const std::filesystem::path& data_dir) {
  std::vector<PatchBag> bags = read_dataset(data_dir);
  DatasetSplits splits;
  for (PatchBag& bag : bags) {
    splits.classes = std::max<std::size_t>(splits.classes, bag.label + 1);
    if (splits.d_v == 0) splits.d_v = bag.low.features.cols();
    if (has_prefix(bag.slide_id, "train_")) {
      splits.train_pool.push_back(std::move(bag));
    } else if (has_prefix(bag.slide_id, "test_")) {
      splits.test.push_back(std::move(bag));
    } else {
      throw DataError("slide id `" + bag.slide_id + "` carries no train_/test_ split prefix");
    }
  }
  return splits;
}

std::vector<MetricsReport> TrainResult::fold_metrics() const {
  std::vector<MetricsReport> out;
  out.reserve(folds.size());
  for (const FoldResult& f : folds) out.push_back(f.test_metrics);
  return out;
}

TrainResult train(const TrainConfig& cfg, const std::filesystem::path& data_dir,
                  const std::filesystem::path& out_dir) {
  cfg.validate();
  DatasetSplits splits = load_splits(data_dir);
  if (splits.classes < 2) throw DataError("dataset must contain at least 2 classes");
  if (splits.test.empty()) throw DataError("dataset has an empty test split");
  const auto pool_by_class = indices_per_class(splits.train_pool, splits.classes);
  for (std::size_t c = 0; c < splits.classes; ++c) {
    if (pool_by_class[c].size() < cfg.shots) {
      throw DataError("class " + std::to_string(c) + " has " +
                      std::to_string(pool_by_class[c].size()) + " training slides, need " +
                      std::to_string(cfg.shots) + " shots");
    }
  }

  std::optional<AdaptorParams> adaptors;
  if (!cfg.adaptors.empty()) adaptors = load_adaptors(cfg.adaptors);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string());

  const MagWeights mag_weights{cfg.lambda_low, cfg.lambda_high};
  Rng base(cfg.seed);

  TrainResult result;
  double best_overall_f1 = -1.0;
  ModelState best_overall_model;

  for (std::size_t fold = 0; fold < cfg.folds; ++fold) {
    // fold-indexed shot resampling
    Rng fold_rng = base.fork(1000 + fold);
    std::vector<std::size_t> shot_idx, val_idx;
    for (std::size_t c = 0; c < splits.classes; ++c) {
      std::vector<std::size_t> pool = pool_by_class[c];
      fold_rng.shuffle(pool);
      for (std::size_t i = 0; i < cfg.shots; ++i) shot_idx.push_back(pool[i]);
      const std::size_t want_val = static_cast<std::size_t>(
          std::ceil(0.2 * static_cast<double>(pool.size())));
      const std::size_t have = pool.size() - cfg.shots;
      for (std::size_t i = 0; i < std::min(want_val, have); ++i) {
        val_idx.push_back(pool[cfg.shots + i]);
      }
    }
    if (val_idx.empty()) {
      throw DataError("validation split is empty; training pool has no non-shot slides");
    }
    std::vector<std::string> shot_ids;
    for (std::size_t idx : shot_idx) shot_ids.push_back(splits.train_pool[idx].slide_id);

    ModelState model = ModelState::init(cfg, splits.classes, splits.d_v,
                                        base.fork(2000 + fold).next_u64(), adaptors);
    Adam opt(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
    auto params = model.trainable();

    std::ofstream traj(out_dir / ("trajectory_fold" + std::to_string(fold) + ".csv"));
    if (!traj) throw DataError("cannot write trajectory CSV in " + out_dir.string());
    traj << "epoch,split,loss,f1\n";

    double best_f1 = -1.0;
    std::size_t best_epoch = 0;
    std::vector<Tensor> best_snapshot = model.snapshot_trainable();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      Rng epoch_rng = fold_rng.fork(10'000 + epoch);
      std::vector<std::size_t> order = shot_idx;
      epoch_rng.shuffle(order);

      double train_loss = 0.0;
      std::vector<std::vector<double>> train_scores;
      std::vector<std::size_t> train_labels;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        std::vector<Tensor> acc_grads;
        for (std::size_t s = start; s < stop; ++s) {
          const PatchBag& bag = splits.train_pool[order[s]];
          GradTape tape;
          ForwardOptions opts;
          opts.trainable = true;
          double loss_value = 0.0;
          Var loss;
          Var probs;
          try {
            auto fw = forward_slide(tape, bag, model, opts);
            probs = class_probabilities_var(fw.dist_vars, mag_weights);
            loss = cross_entropy_loss_var(probs, bag.label);
            loss_value = tape.value(loss).item();
          } catch (const DivergenceError& e) {
            throw DivergenceError("epoch " + std::to_string(epoch) + ", slide " +
                                  bag.slide_id + ": " + e.what());
          }
          if (!std::isfinite(loss_value)) {
            diagnose_divergence(model, epoch, bag.slide_id, loss_value);
          }
          train_loss += loss_value;
          const Tensor& pv = tape.value(probs);
          train_scores.emplace_back(pv.storage());
          train_labels.push_back(bag.label);
          auto grads = tape.backward(loss);
          if (acc_grads.empty()) {
            acc_grads = std::move(grads);
          } else {
            for (std::size_t p = 0; p < grads.size(); ++p) {
              for (std::size_t i = 0; i < grads[p].size(); ++i) {
                acc_grads[p][i] += grads[p][i];
              }
            }
          }
        }
        const double inv_batch = 1.0 / static_cast<double>(stop - start);
        if (inv_batch != 1.0) {
          for (Tensor& g : acc_grads) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv_batch;
          }
        }
        opt.step(params, acc_grads);
      }
      train_loss /= static_cast<double>(order.size());
      const MetricsReport train_metrics = compute_metrics(train_scores, train_labels);

      double val_loss = 0.0;
      std::vector<std::vector<double>> val_scores;
      std::vector<std::size_t> val_labels;
      for (std::size_t idx : val_idx) {
        const PatchBag& bag = splits.train_pool[idx];
        auto probs = predict_slide(model, bag);
        val_loss += cross_entropy_loss(probs, bag.label);
        val_scores.push_back(std::move(probs));
        val_labels.push_back(bag.label);
      }
      val_loss /= static_cast<double>(val_idx.size());
      const MetricsReport val_metrics = compute_metrics(val_scores, val_labels);

      traj << epoch << ",train," << fmt(train_loss) << "," << fmt(train_metrics.f1) << "\n";
      traj << epoch << ",val," << fmt(val_loss) << "," << fmt(val_metrics.f1) << "\n";

      if (val_metrics.f1 > best_f1) {
        best_f1 = val_metrics.f1;
        best_epoch = epoch;
        best_snapshot = model.snapshot_trainable();
      }
    }

    model.restore_trainable(best_snapshot);
    model.best_epoch = best_epoch;
    FoldResult fold_result;
    fold_result.best_val_f1 = best_f1;
    fold_result.best_epoch = best_epoch;
    fold_result.shot_slide_ids = std::move(shot_ids);
    fold_result.test_metrics = evaluate_slides(model, splits.test);
    result.folds.push_back(fold_result);

    save_model(model, out_dir / ("ckpt_fold" + std::to_string(fold) + ".bin"));
    if (best_f1 > best_overall_f1) {
      best_overall_f1 = best_f1;
      result.best_fold = fold;
      best_overall_model = std::move(model);
    }
  }

  save_model(best_overall_model, out_dir / "checkpoint.bin");
  std::ofstream metrics(out_dir / "metrics.csv");
  if (!metrics) throw DataError("cannot write metrics.csv in " + out_dir.string());
  write_metrics_csv(metrics, result.fold_metrics());
  return result;
}

MetricsReport evaluate(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& data_dir) {
  ModelState model = load_model(checkpoint);
  DatasetSplits splits = load_splits(data_dir);
  if (splits.test.empty()) throw DataError("dataset has an empty test split");
  if (splits.d_v != model.d_v) {
    throw DataError("dataset feature width " + std::to_string(splits.d_v) +
                    " does not match checkpoint d_v " + std::to_string(model.d_v));
  }
  return evaluate_slides(model, splits.test);
}

}  // namespace promptot
