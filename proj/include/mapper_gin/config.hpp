#pragma once

#include "mapper_gin/mapper.hpp"
#include "mapper_gin/model.hpp"
#include "mapper_gin/train_eval.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mapper_gin {

struct ConfigKey {
  std::string_view key;
  std::string_view default_value;
  std::string_view help;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Flat `key = value` document. Lines starting with '#' are comments.
class Config {
 public:
  Config();

  /// Throws std::invalid_argument on unknown keys or malformed lines.
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  void set(std::string_view key, std::string_view value);
  /// "key=value"
  void set_override(std::string_view assignment);
  const std::string& get(std::string_view key) const;

  std::int64_t get_int(std::string_view key) const;
  double get_double(std::string_view key) const;
  std::vector<std::string> get_list(std::string_view key) const;

  /// Canonical text: every key in documentation order.
  std::string canonical() const;
  /// FNV-1a over canonical().
  std::uint64_t hash() const;
  /// Hash over the keys that change graphs for one dataset split.
  std::uint64_t graph_key(std::string_view split) const;
  /// Hash over data, mapper and model keys; stored in checkpoints.
  std::uint64_t model_key() const;

  MapperParams mapper() const;
  ModelConfig model() const;
  RunConfig run() const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace mapper_gin
