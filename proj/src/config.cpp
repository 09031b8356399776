#include "promptot/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "promptot/errors.hpp"

namespace promptot {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key `" + key + "`");
    }
  }
  return kv;
}

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str(), file.string());
}

KvReader::KvReader(std::map<std::string, std::string> kv, std::string origin)
    : kv_(std::move(kv)), origin_(std::move(origin)) {}

std::string KvReader::get_string(const std::string& key, const std::string& fallback) {
  seen_.insert(key);
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double KvReader::get_double(const std::string& key, double fallback) {
  seen_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key `" + key + "` has non-numeric value `" + it->second + "`");
  }
}

std::size_t KvReader::get_size(const std::string& key, std::size_t fallback) {
  const double v = get_double(key, static_cast<double>(fallback));
  if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw ConfigError(origin_ + ": key `" + key + "` must be a nonnegative integer");
  }
  return static_cast<std::size_t>(v);
}

std::uint64_t KvReader::get_u64(const std::string& key, std::uint64_t fallback) {
  seen_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key `" + key + "` must be an unsigned integer");
  }
}

void KvReader::finish() const {
  for (const auto& [key, value] : kv_) {
    if (!seen_.count(key)) {
      throw ConfigError(origin_ + ": unknown key `" + key + "`");
    }
  }
}

void TrainConfig::validate() const {
  if (shots < 1) throw ConfigError("train config: shots must be >= 1");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("train config: alpha must lie in [0,1]");
  }
  if (m < 1 || n_p < 1 || k < 1) {
    throw ConfigError("train config: m, n_p and k must be >= 1");
  }
  if (!(lambda > 0.0)) throw ConfigError("train config: lambda must be positive");
  if (iterations < 1) throw ConfigError("train config: iterations must be >= 1");
  if (uot && (!(uot->first > 0.0) || !(uot->second > 0.0))) {
    throw ConfigError("train config: uot rho values must be positive");
  }
  if (folds < 1) throw ConfigError("train config: folds must be >= 1");
  if (knn_k < 1) throw ConfigError("train config: knn_k must be >= 1");
}

std::string distance_mode_name(DistanceMode m) {
  return m == DistanceMode::kOt ? "ot" : "cosine";
}

std::string graph_mode_name(GraphMode m) { return m == GraphMode::kGrid ? "grid" : "knn"; }

TrainConfig parse_train_config_text(const std::string& text, const std::string& origin) {
  KvReader kv(parse_kv_text(text, origin), origin);
  TrainConfig cfg;
  cfg.shots = kv.get_size("shots", cfg.shots);
  cfg.epochs = kv.get_size("epochs", cfg.epochs);
  cfg.learning_rate = kv.get_double("learning_rate", cfg.learning_rate);
  cfg.weight_decay = kv.get_double("weight_decay", cfg.weight_decay);
  cfg.batch_size = kv.get_size("batch_size", cfg.batch_size);
  cfg.alpha = kv.get_double("alpha", cfg.alpha);
  cfg.m = kv.get_size("m", cfg.m);
  cfg.n_p = kv.get_size("n_p", cfg.n_p);
  cfg.k = kv.get_size("k", cfg.k);
  cfg.context_len = kv.get_size("context_len", cfg.context_len);
  cfg.lambda = kv.get_double("lambda", cfg.lambda);
  cfg.iterations = kv.get_size("iterations", cfg.iterations);
  const std::string uot = kv.get_string("uot", "");
  if (!uot.empty()) {
    const std::size_t comma = uot.find(',');
    if (comma == std::string::npos) {
      throw ConfigError(origin + ": key `uot` expects `rho1,rho2`");
    }
    try {
      cfg.uot = {std::stod(uot.substr(0, comma)), std::stod(uot.substr(comma + 1))};
    } catch (const std::exception&) {
      throw ConfigError(origin + ": key `uot` expects numeric `rho1,rho2`");
    }
  }
  const std::string dist = kv.get_string("distance", "ot");
  if (dist == "ot") {
    cfg.distance = DistanceMode::kOt;
  } else if (dist == "cosine") {
    cfg.distance = DistanceMode::kCosine;
  } else {
    throw ConfigError(origin + ": key `distance` must be `ot` or `cosine`");
  }
  const std::string graph = kv.get_string("graph", "grid");
  if (graph == "grid") {
    cfg.graph = GraphMode::kGrid;
  } else if (graph == "knn") {
    cfg.graph = GraphMode::kKnn;
  } else {
    throw ConfigError(origin + ": key `graph` must be `grid` or `knn`");
  }
  cfg.knn_k = kv.get_size("knn_k", cfg.knn_k);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  cfg.folds = kv.get_size("folds", cfg.folds);
  cfg.lambda_low = kv.get_double("lambda_low", cfg.lambda_low);
  cfg.lambda_high = kv.get_double("lambda_high", cfg.lambda_high);
  cfg.adaptors = kv.get_string("adaptors", cfg.adaptors);
  kv.finish();
  cfg.validate();
  return cfg;
}

TrainConfig parse_train_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config_text(buf.str(), file.string());
}

std::string serialize_train_config(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "shots = " << cfg.shots << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "learning_rate = " << fmt_double(cfg.learning_rate) << "\n";
  out << "weight_decay = " << fmt_double(cfg.weight_decay) << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "alpha = " << fmt_double(cfg.alpha) << "\n";
  out << "m = " << cfg.m << "\n";
  out << "n_p = " << cfg.n_p << "\n";
  out << "k = " << cfg.k << "\n";
  out << "context_len = " << cfg.context_len << "\n";
  out << "lambda = " << fmt_double(cfg.lambda) << "\n";
  out << "iterations = " << cfg.iterations << "\n";
  if (cfg.uot) {
    out << "uot = " << fmt_double(cfg.uot->first) << "," << fmt_double(cfg.uot->second) << "\n";
  }
  out << "distance = " << distance_mode_name(cfg.distance) << "\n";
  out << "graph = " << graph_mode_name(cfg.graph) << "\n";
  out << "knn_k = " << cfg.knn_k << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "folds = " << cfg.folds << "\n";
  out << "lambda_low = " << fmt_double(cfg.lambda_low) << "\n";
  out << "lambda_high = " << fmt_double(cfg.lambda_high) << "\n";
  if (!cfg.adaptors.empty()) out << "adaptors = " << cfg.adaptors << "\n";
  return out.str();
}

GeneratorConfig parse_generator_config_text(const std::string& text,
                                            const std::string& origin) {
  KvReader kv(parse_kv_text(text, origin), origin);
  GeneratorConfig cfg;
  cfg.classes = kv.get_size("classes", cfg.classes);
  cfg.grid = kv.get_size("grid", cfg.grid);
  cfg.signal_region_fraction =
      kv.get_double("signal_region_fraction", cfg.signal_region_fraction);
  cfg.signal_strength = kv.get_double("signal_strength", cfg.signal_strength);
  cfg.noise_sigma = kv.get_double("noise_sigma", cfg.noise_sigma);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  cfg.d_v = kv.get_size("d_v", cfg.d_v);
  cfg.train_slides = kv.get_size("train_slides", cfg.train_slides);
  cfg.test_slides = kv.get_size("test_slides", cfg.test_slides);
  cfg.corrupt_fraction = kv.get_double("corrupt_fraction", cfg.corrupt_fraction);
  cfg.corrupt_sigma = kv.get_double("corrupt_sigma", cfg.corrupt_sigma);
  kv.finish();
  cfg.validate();
  return cfg;
}

GeneratorConfig parse_generator_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_generator_config_text(buf.str(), file.string());
}

std::string serialize_generator_config(const GeneratorConfig& cfg) {
  std::ostringstream out;
  out << "classes = " << cfg.classes << "\n";
  out << "grid = " << cfg.grid << "\n";
  out << "signal_region_fraction = " << fmt_double(cfg.signal_region_fraction) << "\n";
  out << "signal_strength = " << fmt_double(cfg.signal_strength) << "\n";
  out << "noise_sigma = " << fmt_double(cfg.noise_sigma) << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "d_v = " << cfg.d_v << "\n";
  out << "train_slides = " << cfg.train_slides << "\n";
  out << "test_slides = " << cfg.test_slides << "\n";
  out << "corrupt_fraction = " << fmt_double(cfg.corrupt_fraction) << "\n";
  out << "corrupt_sigma = " << fmt_double(cfg.corrupt_sigma) << "\n";
  return out.str();
}

}  // namespace promptot
