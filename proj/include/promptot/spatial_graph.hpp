// Patch-adjacency graphs built from integer grid coordinates. Graphs are
// undirected, duplicate-free, and never store self loops; the attention layer
// adds the self term itself.
#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace promptot {

/// (row, col) position of a patch on the slide's tiling grid. Unique per
/// patch within one magnification level.
struct PatchCoord {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  friend bool operator==(const PatchCoord&, const PatchCoord&) = default;
};

class SpatialGraph {
 public:
  explicit SpatialGraph(std::size_t num_nodes) : num_nodes_(num_nodes) {}

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }

  /// Adds an undirected edge; ignores duplicates and rejects self loops.
  void add_edge(int u, int v);
  bool has_edge(int u, int v) const;

  /// Sorted neighbor lists, one per node.
  std::vector<std::vector<int>> neighbor_lists() const;

 private:
  std::size_t num_nodes_;
  std::vector<std::pair<int, int>> edges_;  // normalized u < v, sorted
};

/// Edge iff two patches differ by exactly 1 on one axis and 0 on the other.
/// Rejects duplicate coordinates.
SpatialGraph build_grid_graph(const std::vector<PatchCoord>& coords);

/// Directed k-NN by Euclidean distance on (row, col), symmetrized by union.
/// Ties break on (distance, node id) lexicographic order. Requires
/// 1 <= k < num_nodes.
SpatialGraph build_knn_graph(const std::vector<PatchCoord>& coords, std::size_t k);

}  // namespace promptot
