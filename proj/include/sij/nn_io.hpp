#pragma once
// Network weight container: `<base>.bin` holds the concatenated tensors as
// little-endian 32-bit reals, `<base>.json` is the versioned manifest listing
// (name, shape, offset, count) per tensor plus free-form metadata.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sij/errors.hpp"
#include "sij/nn.hpp"

namespace sij::nn {

template <typename T>
inline void save_weights(std::vector<ParamRef<T>> params, const std::filesystem::path& base,
                         const nlohmann::ordered_json& metadata = {}) {
  std::vector<float> blob;
  nlohmann::ordered_json manifest;
  manifest["format"] = "sij-weights";
  manifest["version"] = 1;
  if (!metadata.empty()) manifest["metadata"] = metadata;
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& p : params) {
    nlohmann::ordered_json t;
    t["name"] = p.name;
    t["shape"] = p.shape;
    t["offset"] = blob.size();
    t["count"] = p.value->size();
    tensors.push_back(std::move(t));
    for (const auto v : *p.value) blob.push_back(static_cast<float>(v));
  }
  manifest["tensors"] = std::move(tensors);

  auto json_path = base;
  json_path += ".json";
  std::ofstream mj(json_path);
  if (!mj) throw IoError("cannot write " + json_path.string());
  mj << manifest.dump(1) << "\n";

  auto bin_path = base;
  bin_path += ".bin";
  std::ofstream mb(bin_path, std::ios::binary);
  if (!mb) throw IoError("cannot write " + bin_path.string());
  for (const float v : blob) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    const std::uint8_t bytes[4] = {static_cast<std::uint8_t>(u & 0xff),
                                   static_cast<std::uint8_t>((u >> 8) & 0xff),
                                   static_cast<std::uint8_t>((u >> 16) & 0xff),
                                   static_cast<std::uint8_t>((u >> 24) & 0xff)};
    mb.write(reinterpret_cast<const char*>(bytes), 4);
  }
  if (!mb) throw IoError("short write to " + bin_path.string());
}

inline nlohmann::json load_weights_manifest(const std::filesystem::path& base) {
  auto json_path = base;
  json_path += ".json";
  std::ifstream mj(json_path);
  if (!mj) throw IoError("missing weights manifest " + json_path.string());
  nlohmann::json manifest;
  try {
    mj >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed weights manifest " + json_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "sij-weights" || manifest.value("version", 0) != 1)
    throw IoError("unrecognized weights container " + json_path.string());
  return manifest;
}

template <typename T>
inline void load_weights(std::vector<ParamRef<T>> params, const std::filesystem::path& base) {
  const auto manifest = load_weights_manifest(base);
  auto bin_path = base;
  bin_path += ".bin";
  std::ifstream mb(bin_path, std::ios::binary);
  if (!mb) throw IoError("missing weights payload " + bin_path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(mb)),
                                  std::istreambuf_iterator<char>());
  std::vector<float> blob(bytes.size() / 4);
  for (std::size_t i = 0; i < blob.size(); ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    std::memcpy(&blob[i], &u, 4);
  }

  for (auto& p : params) {
    bool found = false;
    for (const auto& t : manifest.at("tensors")) {
      if (t.at("name").get<std::string>() != p.name) continue;
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (count != p.value->size())
        throw IoError("tensor size mismatch for '" + p.name + "' in " + base.string());
      if (offset + count > blob.size())
        throw IoError("weights payload truncated: " + base.string());
      for (std::size_t i = 0; i < count; ++i)
        (*p.value)[i] = static_cast<T>(blob[offset + i]);
      found = true;
      break;
    }
    if (!found) throw IoError("tensor '" + p.name + "' missing from " + base.string());
  }
}

}  // namespace sij::nn
