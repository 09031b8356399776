#include "promptot/spatial_graph.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "promptot/errors.hpp"

namespace promptot {

void SpatialGraph::add_edge(int u, int v) {
  if (u == v) throw InvalidInputError("SpatialGraph: self loops are not stored");
  if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= num_nodes_ ||
      static_cast<std::size_t>(v) >= num_nodes_) {
    throw InvalidInputError("SpatialGraph: node id outside [0, " +
                            std::to_string(num_nodes_) + ")");
  }
  std::pair<int, int> e{std::min(u, v), std::max(u, v)};
  auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
  if (it != edges_.end() && *it == e) return;
  edges_.insert(it, e);
}

bool SpatialGraph::has_edge(int u, int v) const {
  std::pair<int, int> e{std::min(u, v), std::max(u, v)};
  return std::binary_search(edges_.begin(), edges_.end(), e);
}

std::vector<std::vector<int>> SpatialGraph::neighbor_lists() const {
  std::vector<std::vector<int>> nbr(num_nodes_);
  for (const auto& [u, v] : edges_) {
    nbr[u].push_back(v);
    nbr[v].push_back(u);
  }
  for (auto& list : nbr) std::sort(list.begin(), list.end());
  return nbr;
}

SpatialGraph build_grid_graph(const std::vector<PatchCoord>& coords) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> index;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    auto [it, inserted] = index.try_emplace({coords[i].row, coords[i].col},
                                            static_cast<int>(i));
    if (!inserted) {
      throw InvalidInputError("build_grid_graph: duplicate coordinate (" +
                              std::to_string(coords[i].row) + "," +
                              std::to_string(coords[i].col) + ")");
    }
  }
  SpatialGraph g(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto [r, c] = coords[i];
    // right and down neighbors only; the other directions come from the
    // neighbor's own pass
    auto right = index.find({r, c + 1});
    if (right != index.end()) g.add_edge(static_cast<int>(i), right->second);
    auto down = index.find({r + 1, c});
    if (down != index.end()) g.add_edge(static_cast<int>(i), down->second);
  }
  return g;
}

SpatialGraph build_knn_graph(const std::vector<PatchCoord>& coords, std::size_t k) {
  const std::size_t n = coords.size();
  if (k < 1 || k >= n) {
    throw InvalidInputError("build_knn_graph: k = " + std::to_string(k) +
                            " outside [1, " + std::to_string(n) + ")");
  }
  SpatialGraph g(n);
  std::vector<std::pair<double, int>> dist;
  dist.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dr = static_cast<double>(coords[i].row) - static_cast<double>(coords[j].row);
      const double dc = static_cast<double>(coords[i].col) - static_cast<double>(coords[j].col);
      dist.emplace_back(dr * dr + dc * dc, static_cast<int>(j));
    }
    std::sort(dist.begin(), dist.end());
    for (std::size_t t = 0; t < k; ++t) g.add_edge(static_cast<int>(i), dist[t].second);
  }
  return g;
}

}  // namespace promptot
