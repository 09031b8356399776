#include "promptot/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "promptot/errors.hpp"

namespace promptot {

namespace {

using nlohmann::json;

constexpr char kBagMagic[5] = {'W', 'B', 'A', 'G', '1'};
constexpr std::uint32_t kBagVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, std::size_t offset, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) {
    throw FormatError(std::string("truncated while reading ") + what, offset);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void GeneratorConfig::validate() const {
  if (classes < 2) throw ConfigError("generator: classes must be >= 2");
  if (grid < 1) throw ConfigError("generator: grid must be >= 1");
  if (!(signal_region_fraction > 0.0 && signal_region_fraction <= 1.0)) {
    throw ConfigError("generator: signal_region_fraction must lie in (0,1]");
  }
  if (signal_strength < 0.0) throw ConfigError("generator: signal_strength must be >= 0");
  if (noise_sigma < 0.0) throw ConfigError("generator: noise_sigma must be >= 0");
  if (classes > d_v) throw ConfigError("generator: classes exceed feature dimension");
  if (train_slides < 1 || test_slides < 1) {
    throw ConfigError("generator: train_slides and test_slides must be >= 1");
  }
  if (!(corrupt_fraction >= 0.0 && corrupt_fraction <= 1.0)) {
    throw ConfigError("generator: corrupt_fraction must lie in [0,1]");
  }
  if (corrupt_sigma < 0.0) throw ConfigError("generator: corrupt_sigma must be >= 0");
  const auto side = static_cast<std::size_t>(
      std::lround(std::sqrt(signal_region_fraction) * static_cast<double>(grid)));
  if (side > grid) throw ConfigError("generator: signal region larger than grid");
}

std::vector<Tensor> class_directions(std::size_t classes, std::size_t d_v,
                                     std::uint64_t seed) {
  if (classes > d_v) {
    throw InvalidInputError("class_directions: more classes than dimensions");
  }
  Rng rng = Rng(seed).fork(0xD19);
  std::vector<Tensor> dirs;
  for (std::size_t c = 0; c < classes; ++c) {
    Tensor v({d_v});
    for (std::size_t j = 0; j < d_v; ++j) v[j] = rng.gaussian();
    // Gram-Schmidt against the accepted directions
    for (const Tensor& u : dirs) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d_v; ++j) dot += v[j] * u[j];
      for (std::size_t j = 0; j < d_v; ++j) v[j] -= dot * u[j];
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < d_v; ++j) norm += v[j] * v[j];
    norm = std::sqrt(norm);
    if (norm < 1e-8) {
      // essentially colinear draw; retry with the next stream
      --c;
      continue;
    }
    for (std::size_t j = 0; j < d_v; ++j) v[j] /= norm;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

PatchBag generate_slide(std::uint32_t label, const GeneratorConfig& cfg,
                        const std::vector<Tensor>& directions, Rng& rng,
                        RegionRect* region_out) {
  cfg.validate();
  if (label >= cfg.classes) {
    throw InvalidInputError("generate_slide: label " + std::to_string(label) + " outside " +
                            std::to_string(cfg.classes) + " classes");
  }
  const std::size_t g = cfg.grid;
  const std::size_t d = cfg.d_v;
  const Tensor& dir = directions.at(label);

  const auto side = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::lround(std::sqrt(cfg.signal_region_fraction) * static_cast<double>(g))));
  RegionRect region;
  region.rows = static_cast<std::uint32_t>(side);
  region.cols = static_cast<std::uint32_t>(side);
  region.row0 = static_cast<std::uint32_t>(rng.below(g - side + 1));
  region.col0 = static_cast<std::uint32_t>(rng.below(g - side + 1));
  if (region_out != nullptr) *region_out = region;

  PatchBag bag;
  bag.label = label;
  bag.low.features = Tensor::zeros(g * g, d);
  bag.low.coords.reserve(g * g);
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) {
      const std::size_t i = r * g + c;
      bag.low.coords.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
      const bool in_region = r >= region.row0 && r < region.row0 + region.rows &&
                             c >= region.col0 && c < region.col0 + region.cols;
      for (std::size_t j = 0; j < d; ++j) {
        double v = cfg.noise_sigma * rng.gaussian();
        if (in_region) v += cfg.signal_strength * dir[j];
        bag.low.features.at(i, j) = v;
      }
      if (in_region && cfg.corrupt_fraction > 0.0 && rng.uniform() < cfg.corrupt_fraction) {
        for (std::size_t j = 0; j < d; ++j) {
          bag.low.features.at(i, j) += cfg.corrupt_sigma * rng.gaussian();
        }
      }
    }
  }

  const std::size_t gh = 2 * g;
  bag.high.features = Tensor::zeros(gh * gh, d);
  bag.high.coords.reserve(gh * gh);
  for (std::size_t r = 0; r < gh; ++r) {
    for (std::size_t c = 0; c < gh; ++c) {
      const std::size_t i = r * gh + c;
      const std::size_t parent = (r / 2) * g + (c / 2);
      bag.high.coords.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
      for (std::size_t j = 0; j < d; ++j) {
        bag.high.features.at(i, j) =
            bag.low.features.at(parent, j) + 0.5 * cfg.noise_sigma * rng.gaussian();
      }
    }
  }
  return bag;
}

std::vector<PatchBag> generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  const auto dirs = class_directions(cfg.classes, cfg.d_v, cfg.seed);
  Rng base(cfg.seed);
  std::vector<PatchBag> bags;
  std::uint64_t slide_counter = 0;
  auto emit = [&](const char* split, std::size_t count_per_class) {
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (std::size_t i = 0; i < count_per_class; ++i) {
        Rng slide_rng = base.fork(++slide_counter);
        PatchBag bag = generate_slide(static_cast<std::uint32_t>(c), cfg, dirs, slide_rng);
        char id[64];
        std::snprintf(id, sizeof(id), "%s_c%zu_s%04zu", split, c, i);
        bag.slide_id = id;
        bags.push_back(std::move(bag));
      }
    }
  };
  emit("train", cfg.train_slides);
  emit("test", cfg.test_slides);
  return bags;
}

namespace {

void write_mag_level(std::ostream& out, const MagLevel& level) {
  const std::uint32_t n = static_cast<std::uint32_t>(level.coords.size());
  const std::uint32_t d = static_cast<std::uint32_t>(level.features.cols());
  put_u32(out, n);
  put_u32(out, d);
  for (const PatchCoord& c : level.coords) {
    put_u32(out, c.row);
    put_u32(out, c.col);
  }
  write_tensor(out, level.features);
}

MagLevel read_mag_level(std::istream& in, std::size_t& offset) {
  MagLevel level;
  const std::uint32_t n = get_u32(in, offset, "patch count");
  offset += 4;
  const std::uint32_t d = get_u32(in, offset, "feature dimension");
  offset += 4;
  level.coords.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t r = get_u32(in, offset, "coordinate row");
    offset += 4;
    const std::uint32_t c = get_u32(in, offset, "coordinate col");
    offset += 4;
    level.coords.push_back({r, c});
  }
  level.features = read_tensor(in, offset);
  if (level.features.rank() != 2 || level.features.rows() != n ||
      level.features.cols() != d) {
    throw FormatError("bag tensor shape disagrees with section header", offset);
  }
  offset += 4 + 4 + 2 * 4 + 8 * static_cast<std::size_t>(n) * d;  // TNS1 record size
  return level;
}

}  // namespace

void write_bag(const PatchBag& bag, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot open " + file.string() + " for writing");
  out.write(kBagMagic, 5);
  put_u32(out, kBagVersion);
  put_u32(out, bag.label);
  write_mag_level(out, bag.low);
  write_mag_level(out, bag.high);
  if (!out) throw DataError("write failed for " + file.string());
}

PatchBag read_bag(const std::filesystem::path& file, const std::string& slide_id) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("missing slide file " + file.string() + " (" + slide_id + ")");
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5) throw FormatError("truncated bag magic", 0);
  if (std::memcmp(magic, kBagMagic, 5) != 0) throw FormatError("bad bag magic", 0);
  std::size_t offset = 5;
  const std::uint32_t version = get_u32(in, offset, "bag version");
  offset += 4;
  if (version != kBagVersion) {
    throw FormatError("unsupported bag version " + std::to_string(version), offset - 4);
  }
  PatchBag bag;
  bag.slide_id = slide_id;
  bag.label = get_u32(in, offset, "bag label");
  offset += 4;
  bag.low = read_mag_level(in, offset);
  bag.high = read_mag_level(in, offset);
  return bag;
}

void write_dataset(const std::vector<PatchBag>& bags, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string());
  if (bags.empty()) throw InvalidInputError("write_dataset: no bags");
  std::uint32_t classes = 0;
  for (const PatchBag& b : bags) classes = std::max(classes, b.label + 1);
  json manifest;
  manifest["version"] = 1;
  manifest["C"] = classes;
  manifest["d_v"] = bags.front().low.features.cols();
  json slides = json::array();
  for (const PatchBag& b : bags) {
    const std::string file = b.slide_id + ".bag";
    write_bag(b, dir / file);
    slides.push_back({{"slide_id", b.slide_id}, {"label", b.label}, {"file", file}});
  }
  manifest["slides"] = std::move(slides);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

std::vector<PatchBag> read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing manifest.json in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw DataError("manifest.json parse error: " + std::string(e.what()));
  }
  if (!manifest.contains("version") || manifest["version"] != 1) {
    throw DataError("manifest version mismatch in " + dir.string());
  }
  std::vector<PatchBag> bags;
  for (const auto& entry : manifest.at("slides")) {
    const std::string slide_id = entry.at("slide_id").get<std::string>();
    const std::string file = entry.at("file").get<std::string>();
    PatchBag bag = read_bag(dir / file, slide_id);
    if (bag.label != entry.at("label").get<std::uint32_t>()) {
      throw DataError("label mismatch between manifest and bag for " + slide_id);
    }
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace promptot
