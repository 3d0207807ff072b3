#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgc/codec/config.hpp"
#include "lgc/layers.hpp"

namespace lgc::codec {

// Checkpoint container: "LGCK" magic, a version byte, a length-prefixed JSON
// description (sorted keys, so byte-identical for identical content), then
// all parameter tensors back-to-back as little-endian float32 in store order.
inline constexpr char kCheckpointMagic[4] = {'L', 'G', 'C', 'K'};
inline constexpr uint8_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float32");

inline nlohmann::json config_to_json(const CodecConfig& c) {
  return {{"height", c.height},       {"width", c.width},
          {"c1", c.c1},               {"c2", c.c2},
          {"downscale", c.downscale}, {"hyper_downscale", c.hyper_downscale},
          {"base_width", c.base_width}, {"sigma_min", c.sigma_min}};
}

inline CodecConfig config_from_json(const nlohmann::json& j) {
  CodecConfig c;
  try {
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.c1 = j.at("c1").get<int>();
    c.c2 = j.at("c2").get<int>();
    c.downscale = j.at("downscale").get<int>();
    c.hyper_downscale = j.at("hyper_downscale").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.sigma_min = j.at("sigma_min").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad config block: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
void save_params(const std::string& path, const nlohmann::json& meta,
                 const nn::ParamStore<T>& ps) {
  nlohmann::json doc;
  doc["meta"] = meta;
  auto& plist = doc["params"] = nlohmann::json::array();
  for (const auto& [name, v] : ps.items())
    plist.push_back({{"name", name}, {"shape", v->value.shape}});
  const std::string js = doc.dump();  // object keys serialize sorted

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(kCheckpointMagic, 4);
  f.put(static_cast<char>(kCheckpointVersion));
  uint32_t len = static_cast<uint32_t>(js.size());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto& [name, v] : ps.items()) {
    const auto& t = v->value;
    if constexpr (std::is_same_v<T, float>) {
      f.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
    } else {
      std::vector<float> buf(static_cast<size_t>(t.numel()));
      for (int64_t i = 0; i < t.numel(); i++) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
      f.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(sizeof(float) * buf.size()));
    }
  }
  if (!f) throw IoError("write failed: " + path);
}

namespace detail {
inline nlohmann::json read_checkpoint_header(std::ifstream& f, const std::string& path) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != std::string(kCheckpointMagic, 4))
    throw ValidationError("not a checkpoint file: " + path);
  int version = f.get();
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  std::string js(len, '\0');
  f.read(js.data(), static_cast<std::streamsize>(len));
  if (!f) throw IoError("truncated checkpoint header: " + path);
  nlohmann::json doc = nlohmann::json::parse(js, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.contains("meta") || !doc.contains("params"))
    throw ValidationError("corrupt checkpoint description: " + path);
  return doc;
}
}  // namespace detail

// Reads only the JSON description (for config recovery before model build).
inline nlohmann::json peek_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  return detail::read_checkpoint_header(f, path)["meta"];
}

// Fills an already-constructed store; every name and shape must match the
// file exactly, in order, so an architecture mismatch fails loudly.
template <typename T>
nlohmann::json load_params(const std::string& path, nn::ParamStore<T>& ps) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  nlohmann::json doc = detail::read_checkpoint_header(f, path);
  const auto& plist = doc["params"];
  const auto& items = ps.items();
  if (plist.size() != items.size())
    throw ValidationError("checkpoint has " + std::to_string(plist.size()) +
                          " parameters, model has " + std::to_string(items.size()));
  for (size_t i = 0; i < items.size(); i++) {
    const auto& [name, v] = items[i];
    if (plist[i].at("name").get<std::string>() != name)
      throw ValidationError("parameter " + std::to_string(i) + " is '" +
                            plist[i].at("name").get<std::string>() + "' in file, '" +
                            name + "' in model");
    if (plist[i].at("shape").get<std::vector<int>>() != v->value.shape)
      throw ValidationError("shape mismatch for parameter '" + name + "'");
    auto& t = v->value;
    std::vector<float> buf(static_cast<size_t>(t.numel()));
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(sizeof(float) * buf.size()));
    if (!f) throw IoError("truncated checkpoint payload: " + path);
    for (int64_t k = 0; k < t.numel(); k++) t[k] = static_cast<T>(buf[static_cast<size_t>(k)]);
  }
  return doc["meta"];
}

}  // namespace lgc::codec
