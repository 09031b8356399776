// Training configuration. Field names double as the config-file keys.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

namespace promptot {

enum class DistanceMode { kOt, kCosine };
enum class GraphMode { kGrid, kKnn };

struct TrainConfig {
  std::size_t shots = 16;         // labeled slides per class
  std::size_t epochs = 200;
  double learning_rate = 9e-6;
  double weight_decay = 1e-5;
  std::size_t batch_size = 1;
  double alpha = 0.2;             // weight of the group branch in the fusion
  std::size_t m = 4;              // text prompt sequences per class/magnification
  std::size_t n_p = 16;           // visual prompt rows
  std::size_t k = 16;             // trainable tokens per sequence
  std::size_t context_len = 32;   // frozen pseudo-token context length
  double lambda = 0.1;            // Sinkhorn entropic regularization
  std::size_t iterations = 100;   // Sinkhorn iterations
  std::optional<std::pair<double, double>> uot;  // key `uot = rho1,rho2`
  DistanceMode distance = DistanceMode::kOt;
  GraphMode graph = GraphMode::kGrid;
  std::size_t knn_k = 4;
  std::uint64_t seed = 1;
  std::size_t folds = 5;
  double lambda_low = 1.0;   // per-magnification contribution weights
  double lambda_high = 1.0;
  std::string adaptors;      // path to a pretrained adaptor checkpoint; empty = raw features

  void validate() const;
};

std::string distance_mode_name(DistanceMode m);
std::string graph_mode_name(GraphMode m);

/// Flat `key = value` text used in config files and checkpoint snapshots.
std::string serialize_train_config(const TrainConfig& cfg);

}  // namespace promptot
