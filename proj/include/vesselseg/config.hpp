#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vesselseg/augment.hpp"
#include "vesselseg/dataio.hpp"
#include "vesselseg/inference.hpp"
#include "vesselseg/train.hpp"

namespace vesselseg {

enum class ConfigSource { builtin, file, flag, generated };

std::string to_string(ConfigSource source);

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every key the toolkit understands, with its built-in default.
const std::vector<ConfigKey>& known_config_keys();

/// Layered `key = value` configuration: built-in defaults, then a config
/// file, then command-line flags. Later layers win; unknown keys are
/// rejected at every layer.
class RunConfig {
 public:
  RunConfig();

  /// Parses `key = value` lines; '#' starts a comment. Throws IoError or
  /// ConfigError (with file and line) on unknown keys and malformed lines.
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value, ConfigSource source);
  /// Accepts "key=value" as given to --set.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  ConfigSource source(const std::string& key) const;

  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  Range get_range(const std::string& key) const;

  /// Fills every empty seed.* key from std::random_device (source
  /// "generated") so the run manifest records the seeds actually used.
  void resolve_seeds();

  /// Resolved view, one `key = value  # source` line per key.
  std::string dump() const;

  std::string subcommand;

 private:
  struct Entry {
    std::string value;
    ConfigSource source = ConfigSource::builtin;
  };
  std::map<std::string, Entry> entries_;
};

std::vector<TrainPhase> parse_phases(const std::string& text);
SplitCounts parse_split_counts(const std::string& text);

UNetConfig model_config_from(const RunConfig& config);
AugmentationSpec augmentation_spec_from(const RunConfig& config);
LossParams loss_params_from(const RunConfig& config);
TilingPolicy tiling_policy_from(const RunConfig& config);
/// Requires resolved seeds (see RunConfig::resolve_seeds).
TrainConfig train_config_from(const RunConfig& config);

/// Writes the resolved configuration plus toolkit version; enough to re-run.
void write_run_manifest(const std::filesystem::path& path, const RunConfig& config);

}  // namespace vesselseg
