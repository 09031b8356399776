// Slide-like bags with a planted, spatially contiguous class signal at two
// linked magnifications, plus the on-disk dataset format (manifest.json and
// one WBAG1 binary per slide).
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "promptot/rng.hpp"
#include "promptot/spatial_graph.hpp"
#include "promptot/tensor.hpp"

namespace promptot {

struct MagLevel {
  Tensor features;  // N x d_v
  std::vector<PatchCoord> coords;
};

struct PatchBag {
  std::string slide_id;
  std::uint32_t label = 0;
  MagLevel low;
  MagLevel high;  // grid refined 2x; each patch derives from its parent
};

struct GeneratorConfig {
  std::size_t classes = 2;
  std::size_t grid = 12;  // low-magnification grid extent (grid x grid)
  double signal_region_fraction = 0.25;
  double signal_strength = 2.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 1;
  std::size_t d_v = 48;
  std::size_t train_slides = 24;  // per class
  std::size_t test_slides = 20;   // per class
  // extra noise on a random subset of the signal region's patches
  double corrupt_fraction = 0.0;
  double corrupt_sigma = 0.0;

  void validate() const;
};

/// Mutually orthogonal unit vectors, one per class, by Gram-Schmidt on seeded
/// gaussian draws. Requires classes <= d_v.
std::vector<Tensor> class_directions(std::size_t classes, std::size_t d_v,
                                     std::uint64_t seed);

/// One slide: isotropic background noise, one contiguous rectangular sub-grid
/// shifted by the class direction, high magnification derived from parent
/// patches plus finer noise. The signal rectangle is returned via the
/// optional out parameters (used by invariant tests).
struct RegionRect {
  std::uint32_t row0 = 0, col0 = 0, rows = 0, cols = 0;
};
PatchBag generate_slide(std::uint32_t label, const GeneratorConfig& cfg,
                        const std::vector<Tensor>& directions, Rng& rng,
                        RegionRect* region_out = nullptr);

/// Full dataset: train pool and test split, disjoint by slide_id (ids carry a
/// train_/test_ prefix).
std::vector<PatchBag> generate_dataset(const GeneratorConfig& cfg);

/// Writes manifest.json plus one .bag per slide into `dir` (created if
/// needed); lossless, bit-exact feature payloads.
void write_dataset(const std::vector<PatchBag>& bags, const std::filesystem::path& dir);

/// Reads a dataset directory; throws FormatError (with byte offset) on
/// damaged bags and DataError on manifest problems or missing slides.
std::vector<PatchBag> read_dataset(const std::filesystem::path& dir);

void write_bag(const PatchBag& bag, const std::filesystem::path& file);
PatchBag read_bag(const std::filesystem::path& file, const std::string& slide_id);

}  // namespace promptot
