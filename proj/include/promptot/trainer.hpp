// Few-shot training orchestration: per-fold shot resampling, the Adam loop at
// batch size 1 (gradient accumulation for larger batches), per-epoch
// validation F1 with best-epoch selection, and test metrics per fold.
#pragma once

#include <filesystem>
#include <vector>

#include "promptot/classifier.hpp"
#include "promptot/model.hpp"
#include "promptot/train_config.hpp"

namespace promptot {

struct DatasetSplits {
  std::vector<PatchBag> train_pool;  // slide ids prefixed train_
  std::vector<PatchBag> test;        // slide ids prefixed test_
  std::size_t classes = 0;
  std::size_t d_v = 0;
};

/// Loads a dataset directory and partitions it by slide-id prefix.
DatasetSplits load_splits(const std::filesystem::path& data_dir);

struct FoldResult {
  MetricsReport test_metrics;
  double best_val_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::vector<std::string> shot_slide_ids;
};

struct TrainResult {
  std::vector<FoldResult> folds;
  std::size_t best_fold = 0;  // highest validation F1, earliest on ties
  std::vector<MetricsReport> fold_metrics() const;
};

/// Full protocol over cfg.folds folds. Writes per-fold checkpoints and
/// trajectory CSVs, metrics.csv, and the best fold's model as checkpoint.bin
/// into out_dir. Deterministic given (seed, config, dataset).
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& data_dir,
                  const std::filesystem::path& out_dir);

/// Metrics of a stored checkpoint over the dataset's test split.
MetricsReport evaluate(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& data_dir);

}  // namespace promptot
