// Flat `key = value` config files. Blank lines and lines starting with `#`
// are ignored; unknown keys are hard errors.
#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "promptot/synthetic.hpp"
#include "promptot/train_config.hpp"

namespace promptot {

/// Raw key/value pairs; throws ConfigError on duplicate keys or malformed lines.
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& file);
std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin);

/// Typed accessor that tracks which keys were consumed.
class KvReader {
 public:
  explicit KvReader(std::map<std::string, std::string> kv, std::string origin);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);

  /// Throws ConfigError naming any key that was never consumed.
  void finish() const;

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> seen_;
  std::string origin_;
};

TrainConfig parse_train_config(const std::filesystem::path& file);
TrainConfig parse_train_config_text(const std::string& text, const std::string& origin);
GeneratorConfig parse_generator_config(const std::filesystem::path& file);
GeneratorConfig parse_generator_config_text(const std::string& text,
                                            const std::string& origin);

std::string serialize_generator_config(const GeneratorConfig& cfg);

}  // namespace promptot
