#include "ufcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ufcn/run_config.hpp"

namespace ufcn {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'U', 'F', 'C', 'N', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct RawCheckpoint {
  std::string kind;
  json config;
  json params;
  std::vector<float> values;
};

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

void write_raw(const std::string& kind, const json& config, const ParamSet<float>& ps,
               const std::string& path) {
  json params = json::array();
  std::size_t offset = 0;
  for (const auto& p : ps) {
    params.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
    offset += p.numel();
  }
  const std::string header = json{{"kind", kind}, {"config", config}, {"params", params}}.dump();
  // Write to a sibling temp file and rename, so a failed save leaves no partial checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + path + "'");
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = header.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& p : ps) {
      out.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.numel() * sizeof(float)));
    }
    if (!out) throw Error("failed writing checkpoint '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

RawCheckpoint read_raw(const std::string& path, bool header_only = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw LoadError("'" + path + "' is not a checkpoint");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in) throw LoadError("checkpoint '" + path + "' is truncated");
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint '" + path + "' has version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  if (len > (1u << 26)) throw LoadError("checkpoint '" + path + "' header is implausibly large");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw LoadError("checkpoint '" + path + "' is truncated");
  RawCheckpoint raw;
  try {
    const json h = json::parse(header);
    raw.kind = h.at("kind").get<std::string>();
    raw.config = h.at("config");
    raw.params = h.at("params");
  } catch (const json::exception& e) {
    throw LoadError("checkpoint '" + path + "' has a corrupt header: " + e.what());
  }
  if (header_only) return raw;

  std::size_t total = 0;
  try {
    for (const auto& p : raw.params) {
      std::size_t n = 1;
      for (int d : p.at("shape").get<std::vector<int>>()) n *= static_cast<std::size_t>(d);
      if (p.at("offset").get<std::size_t>() != total) throw LoadError("checkpoint '" + path + "' has bad offsets");
      total += n;
    }
  } catch (const json::exception& e) {
    throw LoadError("checkpoint '" + path + "' has a corrupt manifest: " + e.what());
  }
  raw.values.resize(total);
  in.read(reinterpret_cast<char*>(raw.values.data()), static_cast<std::streamsize>(total * sizeof(float)));
  if (!in) throw LoadError("checkpoint '" + path + "' is truncated");
  in.peek();
  if (!in.eof()) throw LoadError("checkpoint '" + path + "' has trailing bytes");
  return raw;
}

void fill_params(const RawCheckpoint& raw, ParamSet<float>& ps, const std::string& path) {
  if (raw.params.size() != ps.count()) {
    throw LoadError("shape mismatch: checkpoint '" + path + "' has " + std::to_string(raw.params.size()) +
                    " parameters, the configured model has " + std::to_string(ps.count()));
  }
  for (std::size_t i = 0; i < ps.count(); ++i) {
    auto& p = ps[static_cast<int>(i)];
    const auto name = raw.params[i].at("name").get<std::string>();
    const auto shape = raw.params[i].at("shape").get<std::vector<int>>();
    if (name != p.name || shape != p.shape) {
      throw LoadError("shape mismatch at parameter " + std::to_string(i) + ": checkpoint has " + name +
                      shape_str(shape) + ", configured model has " + p.name + shape_str(p.shape));
    }
    const std::size_t off = raw.params[i].at("offset").get<std::size_t>();
    std::copy_n(raw.values.begin() + static_cast<std::ptrdiff_t>(off), p.numel(), p.value.begin());
  }
}

void require_kind(const RawCheckpoint& raw, const char* kind, const std::string& path) {
  if (raw.kind != kind) {
    throw LoadError("checkpoint '" + path + "' holds a '" + raw.kind + "' model, expected '" + kind + "'");
  }
}

template <typename Config>
Config config_from(const RawCheckpoint& raw, const std::string& path) {
  Config c;
  try {
    from_json_strict(raw.config, c);
    c.validate();
  } catch (const ConfigError& e) {
    throw LoadError("checkpoint '" + path + "' has an invalid config: " + e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(const UfcnModel<float>& model, const std::string& path) {
  write_raw("ufcn", to_json(model.config()), model.params(), path);
}

void save_checkpoint(const UnetModel<float>& model, const std::string& path) {
  write_raw("unet", to_json(model.config()), model.params(), path);
}

std::string checkpoint_kind(const std::string& path) { return read_raw(path, true).kind; }

UfcnModel<float> load_ufcn_checkpoint(const std::string& path) {
  const RawCheckpoint raw = read_raw(path);
  require_kind(raw, "ufcn", path);
  UfcnModel<float> model(config_from<ModelConfig>(raw, path));
  fill_params(raw, model.params(), path);
  return model;
}

UfcnModel<float> load_ufcn_checkpoint(const std::string& path, const ModelConfig& expected) {
  const RawCheckpoint raw = read_raw(path);
  require_kind(raw, "ufcn", path);
  const ModelConfig stored = config_from<ModelConfig>(raw, path);
  if (stored.activation != expected.activation) {
    throw LoadError("checkpoint '" + path + "' uses " + to_string(stored.activation) + " activations, config asks for " +
                    to_string(expected.activation));
  }
  ModelConfig cfg = expected;
  cfg.tilu_floor = stored.tilu_floor;
  UfcnModel<float> model(cfg);
  fill_params(raw, model.params(), path);
  return model;
}

UnetModel<float> load_unet_checkpoint(const std::string& path) {
  const RawCheckpoint raw = read_raw(path);
  require_kind(raw, "unet", path);
  UnetModel<float> model(config_from<UnetConfig>(raw, path));
  fill_params(raw, model.params(), path);
  return model;
}

UnetModel<float> load_unet_checkpoint(const std::string& path, const UnetConfig& expected) {
  const RawCheckpoint raw = read_raw(path);
  require_kind(raw, "unet", path);
  config_from<UnetConfig>(raw, path);
  UnetModel<float> model(expected);
  fill_params(raw, model.params(), path);
  return model;
}

}  // namespace ufcn
