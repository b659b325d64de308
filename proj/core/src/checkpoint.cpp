#include "rego/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "rego/errors.hpp"

namespace rego {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'E', 'G', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kContainerFormat = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelCheckpoint& ckpt, Precision precision) {
  const std::size_t elem = precision == Precision::F32 ? 4 : 8;
  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    manifest.push_back({{"name", name}, {"shape", t.dims()}, {"offset", offset}, {"count", t.size()}});
    offset += t.size() * elem;
  }
  const json header = {{"version", ckpt.version},
                       {"iteration", ckpt.iteration},
                       {"rng_state", ckpt.rng_state},
                       {"dtype", precision == Precision::F32 ? "f32" : "f64"},
                       {"config", {{"generator", ckpt.generator.to_json()}, {"style", ckpt.style.to_json()}}},
                       {"tensors", manifest}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(20 + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 8);
  put_le<std::uint32_t>(out, kContainerFormat);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : ckpt.tensors) {
    for (double v : t.values()) {
      if (precision == Precision::F32) put_le<float>(out, static_cast<float>(v));
      else put_le<double>(out, v);
    }
  }
  return out;
}

ModelCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw IoError("not a rego checkpoint");
  if (get_le<std::uint32_t>(bytes.data() + 8) != kContainerFormat) throw IoError("unsupported checkpoint container");
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 12);
  if (header_len > bytes.size() - 20) throw IoError("truncated checkpoint header");
  const std::size_t payload = 20 + header_len;

  ModelCheckpoint ckpt;
  try {
    const json header = json::parse(bytes.begin() + 20, bytes.begin() + static_cast<std::ptrdiff_t>(payload));
    ckpt.version = header.at("version").get<int>();
    if (ckpt.version != kCheckpointVersion) {
      throw ConfigError("unrecognized checkpoint version " + std::to_string(ckpt.version));
    }
    ckpt.iteration = header.at("iteration").get<long>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    ckpt.generator = GeneratorConfig::from_json(header.at("config").at("generator"));
    ckpt.style = StyleConfig::from_json(header.at("config").at("style"));
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != "f32" && dtype != "f64") throw IoError("unknown checkpoint dtype " + dtype);
    const std::size_t elem = dtype == "f32" ? 4 : 8;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto dims = entry.at("shape").get<Dims>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      Tensor t(dims);
      if (t.size() != count) throw IoError("tensor " + name + ": count does not match shape");
      if (payload + offset + count * elem > bytes.size()) throw IoError("tensor " + name + " exceeds file size");
      const std::uint8_t* p = bytes.data() + payload + offset;
      for (std::size_t i = 0; i < count; ++i) {
        t[i] = elem == 4 ? static_cast<double>(get_le<float>(p + 4 * i)) : get_le<double>(p + 8 * i);
      }
      ckpt.tensors.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const fs::path& path, const ModelCheckpoint& ckpt, Precision precision) {
  const auto bytes = serialize_checkpoint(ckpt, precision);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write on checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

ModelCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

ModelCheckpoint snapshot(const Model& model, long iteration, std::string rng_state) {
  ModelCheckpoint ckpt;
  ckpt.generator = model.config();
  ckpt.style = model.style_config();
  ckpt.tensors = model.store().snapshot();
  ckpt.iteration = iteration;
  ckpt.rng_state = std::move(rng_state);
  return ckpt;
}

std::unique_ptr<Model> model_from_checkpoint(const ModelCheckpoint& ckpt) {
  if (ckpt.version != kCheckpointVersion) throw ConfigError("unrecognized checkpoint version");
  auto model = std::make_unique<Model>(ckpt.generator, ckpt.style);
  for (const auto& [name, t] : ckpt.tensors) {
    if (!model->store().contains(name)) throw ConfigError("checkpoint tensor " + name + " is not part of the architecture");
  }
  model->store().load(ckpt.tensors);
  return model;
}

}  // namespace rego
