#include "vesselseg/config.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "vesselseg/errors.hpp"

namespace vesselseg {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) parts.push_back(trim(item));
  return parts;
}

double to_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
}

long long to_int(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': '" + text + "' is not an integer");
}

}  // namespace

std::string to_string(ConfigSource source) {
  switch (source) {
    case ConfigSource::builtin: return "default";
    case ConfigSource::file: return "file";
    case ConfigSource::flag: return "flag";
    case ConfigSource::generated: return "generated";
  }
  return "?";
}

const std::vector<ConfigKey>& known_config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"data.manifest", "", "image/mask manifest, one `<image>\\t<mask>` line per sample"},
      {"split.counts", "24,2,4", "train,val,test image counts"},
      {"split.file", "", "existing split file to reuse instead of drawing a new split"},
      {"seed.split", "", "dataset split seed (generated when empty)"},
      {"seed.init", "", "weight initialisation seed (generated when empty)"},
      {"seed.sampling", "", "window sampling / augmentation seed (generated when empty)"},
      {"model.depth", "4", "number of down-sampling stages"},
      {"model.base_channels", "16", "channels in the first stage"},
      {"model.upsampling", "transposed", "transposed | nearest"},
      {"train.total_epochs", "600", "total epochs"},
      {"train.phases", "300:1e-3,300:1e-4", "comma-separated epochs:learning_rate phases"},
      {"train.batch_size", "20", "windows per optimiser step"},
      {"train.windows_per_image", "20", "windows drawn per training image per epoch"},
      {"train.window_width", "320", "window width in pixels"},
      {"train.window_height", "240", "window height in pixels"},
      {"train.checkpoint_every", "50", "checkpoint cadence in epochs"},
      {"train.validation_loss", "true", "compute validation loss each epoch"},
      {"adam.beta1", "0.9", "first-moment decay"},
      {"adam.beta2", "0.999", "second-moment decay"},
      {"adam.epsilon", "1e-8", "denominator stabiliser"},
      {"loss.lambda_dice", "1", "Dice term weight"},
      {"loss.lambda_focal", "1", "focal term weight"},
      {"loss.gamma", "2", "focal exponent"},
      {"loss.epsilon", "1", "Dice smoothing"},
      {"loss.prob_clip", "1e-7", "focal probability clamp"},
      {"augmentation.enabled", "true", "master switch for training-time augmentation"},
      {"augmentation.affine.probability", "0.5", ""},
      {"augmentation.affine.scale", "0.9,1.1", "scale range"},
      {"augmentation.affine.rotation", "-15,15", "rotation range in degrees"},
      {"augmentation.affine.shear", "-10,10", "shear range in degrees"},
      {"augmentation.equalize.probability", "0.5", ""},
      {"augmentation.clahe.probability", "0.5", ""},
      {"augmentation.clahe.clip_limit", "1,4", "clip limit range"},
      {"augmentation.clahe.tiles", "8", "tiles per axis"},
      {"augmentation.rescale.probability", "0.5", ""},
      {"augmentation.rescale.low", "0,0.2", "range of the output lower bound"},
      {"augmentation.rescale.high", "0.8,1", "range of the output upper bound"},
      {"augmentation.log.probability", "0.5", ""},
      {"augmentation.log.gain", "0.5,2", "gain range"},
      {"augmentation.blur.probability", "0.5", ""},
      {"augmentation.blur.sigma", "0.5,2", "gaussian sigma range in pixels"},
      {"inference.threshold", "0.45", "binarisation threshold"},
      {"inference.tile_width", "512", ""},
      {"inference.tile_height", "512", ""},
      {"inference.tile_overlap", "64", ""},
      {"inference.blend", "linear", "linear | uniform"},
      {"eval.select_on", "val", "val | test: set used to pick the F1-optimal threshold"},
      {"output.dir", "run", "output directory"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& key : known_config_keys()) entries_[key.name] = {key.default_value, ConfigSource::builtin};
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected `key = value`");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), ConfigSource::file);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value, ConfigSource source) {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = {value, source};
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), ConfigSource::flag);
}

bool RunConfig::has(const std::string& key) const {
  const auto it = entries_.find(key);
  return it != entries_.end() && !it->second.value.empty();
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.value;
}

ConfigSource RunConfig::source(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.source;
}

double RunConfig::get_double(const std::string& key) const { return to_double(key, get(key)); }

long long RunConfig::get_int(const std::string& key) const { return to_int(key, get(key)); }

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const auto& text = get(key);
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used == text.size() && text.front() != '-') return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': '" + text + "' is not an unsigned integer");
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

Range RunConfig::get_range(const std::string& key) const {
  const auto parts = split_list(get(key), ',');
  if (parts.size() != 2) throw ConfigError("config key '" + key + "' expects `low,high`");
  return {to_double(key, parts[0]), to_double(key, parts[1])};
}

void RunConfig::resolve_seeds() {
  std::random_device device;
  for (const char* key : {"seed.split", "seed.init", "seed.sampling"}) {
    if (has(key)) {
      get_u64(key);  // validates
      continue;
    }
    const std::uint64_t seed = (static_cast<std::uint64_t>(device()) << 32) ^ device();
    set(key, std::to_string(seed), ConfigSource::generated);
  }
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  for (const auto& [key, entry] : entries_) {
    out << key << " = " << entry.value << "  # " << to_string(entry.source) << "\n";
  }
  return out.str();
}

std::vector<TrainPhase> parse_phases(const std::string& text) {
  std::vector<TrainPhase> phases;
  for (const auto& part : split_list(text, ',')) {
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw ConfigError("training phase '" + part + "' is not epochs:learning_rate");
    phases.push_back({static_cast<int>(to_int("train.phases", trim(part.substr(0, colon)))),
                      to_double("train.phases", trim(part.substr(colon + 1)))});
  }
  return phases;
}

SplitCounts parse_split_counts(const std::string& text) {
  const auto parts = split_list(text, ',');
  if (parts.size() != 3) throw ConfigError("split.counts expects `train,val,test`");
  SplitCounts counts;
  const long long values[3] = {to_int("split.counts", parts[0]), to_int("split.counts", parts[1]),
                               to_int("split.counts", parts[2])};
  if (values[0] < 0 || values[1] < 0 || values[2] < 0) throw ConfigError("split.counts must be nonnegative");
  counts.train = static_cast<std::size_t>(values[0]);
  counts.val = static_cast<std::size_t>(values[1]);
  counts.test = static_cast<std::size_t>(values[2]);
  return counts;
}

UNetConfig model_config_from(const RunConfig& config) {
  UNetConfig model;
  model.depth = static_cast<int>(config.get_int("model.depth"));
  model.base_channels = static_cast<int>(config.get_int("model.base_channels"));
  model.upsampling = parse_upsampling(config.get("model.upsampling"));
  if (config.has("seed.init")) model.init_seed = config.get_u64("seed.init");
  model.validate();
  return model;
}

AugmentationSpec augmentation_spec_from(const RunConfig& config) {
  AugmentationSpec spec;
  spec.enabled = config.get_bool("augmentation.enabled");
  spec.affine.probability = config.get_double("augmentation.affine.probability");
  spec.affine.scale = config.get_range("augmentation.affine.scale");
  spec.affine.rotation_deg = config.get_range("augmentation.affine.rotation");
  spec.affine.shear_deg = config.get_range("augmentation.affine.shear");
  spec.equalize.probability = config.get_double("augmentation.equalize.probability");
  spec.clahe.probability = config.get_double("augmentation.clahe.probability");
  spec.clahe.clip_limit = config.get_range("augmentation.clahe.clip_limit");
  spec.clahe.tiles = static_cast<int>(config.get_int("augmentation.clahe.tiles"));
  spec.rescale.probability = config.get_double("augmentation.rescale.probability");
  spec.rescale.low = config.get_range("augmentation.rescale.low");
  spec.rescale.high = config.get_range("augmentation.rescale.high");
  spec.log.probability = config.get_double("augmentation.log.probability");
  spec.log.gain = config.get_range("augmentation.log.gain");
  spec.blur.probability = config.get_double("augmentation.blur.probability");
  spec.blur.sigma = config.get_range("augmentation.blur.sigma");
  spec.validate();
  return spec;
}

LossParams loss_params_from(const RunConfig& config) {
  LossParams loss;
  loss.lambda_dice = config.get_double("loss.lambda_dice");
  loss.lambda_focal = config.get_double("loss.lambda_focal");
  loss.gamma = config.get_double("loss.gamma");
  loss.epsilon = config.get_double("loss.epsilon");
  loss.prob_clip = config.get_double("loss.prob_clip");
  loss.validate();
  return loss;
}

TilingPolicy tiling_policy_from(const RunConfig& config) {
  TilingPolicy policy;
  policy.tile_w = static_cast<int>(config.get_int("inference.tile_width"));
  policy.tile_h = static_cast<int>(config.get_int("inference.tile_height"));
  policy.overlap = static_cast<int>(config.get_int("inference.tile_overlap"));
  policy.blend = config.get("inference.blend");
  return policy;
}

TrainConfig train_config_from(const RunConfig& config) {
  TrainConfig train;
  train.total_epochs = static_cast<int>(config.get_int("train.total_epochs"));
  train.phases = parse_phases(config.get("train.phases"));
  train.batch_size = static_cast<int>(config.get_int("train.batch_size"));
  train.windows_per_image = static_cast<int>(config.get_int("train.windows_per_image"));
  train.window_width = static_cast<int>(config.get_int("train.window_width"));
  train.window_height = static_cast<int>(config.get_int("train.window_height"));
  train.checkpoint_every = static_cast<int>(config.get_int("train.checkpoint_every"));
  train.compute_validation_loss = config.get_bool("train.validation_loss");
  train.adam.beta1 = config.get_double("adam.beta1");
  train.adam.beta2 = config.get_double("adam.beta2");
  train.adam.epsilon = config.get_double("adam.epsilon");
  train.loss = loss_params_from(config);
  train.augmentation = augmentation_spec_from(config);
  train.model = model_config_from(config);
  if (!config.has("seed.init") || !config.has("seed.sampling") || !config.has("seed.split")) {
    throw ConfigError("seeds must be resolved before building a training config");
  }
  train.sampling_seed = config.get_u64("seed.sampling");
  train.split_seed = config.get_u64("seed.split");
  train.validate();
  return train;
}

void write_run_manifest(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write run manifest '" + path.string() + "'");
  out << "# vesselseg " << VESSELSEG_VERSION << " run manifest\n"
      << "# subcommand: " << config.subcommand << "\n"
      << "# Load with --config to repeat this run.\n"
      << config.dump();
}

}  // namespace vesselseg
