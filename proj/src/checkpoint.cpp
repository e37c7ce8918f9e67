#include "vesselseg/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vesselseg/errors.hpp"

namespace vesselseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename T>
  void pod(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void text(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::size_t end, const std::string& path)
      : bytes_(bytes), end_(end), path_(path) {}

  template <typename T>
  T pod() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  std::string text() {
    const auto n = pod<std::uint32_t>();
    const char* p = take(n);
    return std::string(p, n);
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw CheckpointIntegrityError("checkpoint '" + path_ + "' is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t position() const { return pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex(std::uint32_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(8) << std::setfill('0') << v;
  return out.str();
}

std::map<std::string, std::string> parse_lines(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace

std::string serialize_config(const UNetConfig& config) {
  std::ostringstream out;
  out << "depth=" << config.depth << "\n"
      << "base_channels=" << config.base_channels << "\n"
      << "init_seed=" << config.init_seed << "\n"
      << "upsampling=" << to_string(config.upsampling) << "\n";
  return out.str();
}

UNetConfig parse_model_config(const std::string& text) {
  const auto kv = parse_lines(text);
  auto get = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointIntegrityError(std::string("checkpoint config lacks '") + key + "'");
    return it->second;
  };
  UNetConfig config;
  try {
    config.depth = std::stoi(get("depth"));
    config.base_channels = std::stoi(get("base_channels"));
    config.init_seed = std::stoull(get("init_seed"));
  } catch (const std::logic_error&) {
    throw CheckpointIntegrityError("checkpoint config holds a malformed number");
  }
  config.upsampling = parse_upsampling(get("upsampling"));
  return config;
}

void save_checkpoint(const Model& model, const CheckpointMetadata& metadata, const std::filesystem::path& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.text(kCheckpointVersion);
  w.text(serialize_config(model.config()));
  std::string meta;
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint metadata entry '" + k + "' contains a reserved character");
    }
    meta += k + "=" + v + "\n";
  }
  w.text(meta);
  w.pod(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& info : model.parameters()) {
    w.text(info.name);
    w.pod(static_cast<std::uint32_t>(info.shape.size()));
    for (auto d : info.shape) w.pod(static_cast<std::uint64_t>(d));
    const auto values = model.weights(info);
    w.raw(values.data(), values.size() * sizeof(float));
  }
  w.pod(crc_of(w.bytes().data(), w.bytes().size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Model load_checkpoint(const std::filesystem::path& path, CheckpointMetadata* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();

  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointIntegrityError("'" + name + "' is not a vesselseg checkpoint");
  }
  const std::size_t body_end = bytes.size() - sizeof(std::uint32_t);
  Reader r(bytes, body_end, name);
  r.take(sizeof(kMagic));
  const std::string version = r.text();
  if (version != kCheckpointVersion) {
    throw CheckpointIncompatibleError("checkpoint '" + name + "' has format version '" + version +
                                      "'; this build reads '" + kCheckpointVersion + "'");
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body_end, sizeof(stored_crc));
  const std::uint32_t actual_crc = crc_of(bytes.data(), body_end);
  if (stored_crc != actual_crc) {
    throw CheckpointIntegrityError("checkpoint '" + name + "' failed its checksum (stored " + hex(stored_crc) +
                                   ", computed " + hex(actual_crc) + ")");
  }

  Model model(parse_model_config(r.text()));
  const auto meta = parse_lines(r.text());
  if (metadata != nullptr) *metadata = meta;

  const auto count = r.pod<std::uint32_t>();
  if (count != model.parameters().size()) {
    throw CheckpointIntegrityError("checkpoint '" + name + "' holds " + std::to_string(count) +
                                   " arrays; the configured network has " +
                                   std::to_string(model.parameters().size()));
  }
  auto weights = model.weights();
  for (const auto& info : model.parameters()) {
    const std::string array_name = r.text();
    if (array_name != info.name) {
      throw CheckpointIntegrityError("checkpoint array '" + array_name + "' found where '" + info.name + "' was expected");
    }
    const auto rank = r.pod<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.pod<std::uint64_t>());
    if (shape != info.shape) throw CheckpointIntegrityError("checkpoint array '" + array_name + "' has the wrong shape");
    const char* data = r.take(info.size * sizeof(float));
    std::memcpy(weights.data() + info.offset, data, info.size * sizeof(float));
  }
  if (r.position() != body_end) throw CheckpointIntegrityError("checkpoint '" + name + "' has trailing bytes");
  model.set_checkpoint_id(hex(actual_crc));
  return model;
}

}  // namespace vesselseg
