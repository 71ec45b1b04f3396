#pragma once
// Volumetric data model and the canonical on-disk container: a JSON header
// `<name>.json` next to a little-endian raw payload `<name>.raw`, x varying
// fastest, then y, then z. Orientation is fixed LPS (x -> patient-left,
// y -> posterior, z -> superior) with the world origin at voxel (0,0,0).

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sij/errors.hpp"

namespace sij {

constexpr std::int16_t kHuMin = -1024;
constexpr std::int16_t kHuMax = 3071;

struct Dims3 {
  int nx = 0, ny = 0, nz = 0;
  std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  bool operator==(const Dims3&) const = default;
};

struct Spacing3 {
  double sx = 1.0, sy = 1.0, sz = 1.0;
  bool operator==(const Spacing3&) const = default;
};

struct VoxelIndex {
  int i = 0, j = 0, k = 0;
  bool operator==(const VoxelIndex&) const = default;
};

struct WorldPoint {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline void validate_grid(const Dims3& dims, const Spacing3& spacing) {
  if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1)
    throw InvalidArgument("volume dims must be >= 1 in every axis");
  if (!(spacing.sx > 0.0) || !(spacing.sy > 0.0) || !(spacing.sz > 0.0))
    throw InvalidArgument("volume spacing must be positive");
}

// Immutable HU grid. Construction validates the type invariants; afterwards
// the voxel data is read-only and safe for concurrent readers.
class CtVolume {
public:
  CtVolume(Dims3 dims, Spacing3 spacing, std::vector<std::int16_t> voxels)
      : dims_(dims), spacing_(spacing), hu_(std::move(voxels)) {
    validate_grid(dims_, spacing_);
    if (hu_.size() != dims_.count())
      throw InvalidArgument("voxel count does not match dims");
    for (std::int16_t v : hu_)
      if (v < kHuMin || v > kHuMax)
        throw InvalidArgument("HU value outside [-1024, 3071]");
  }

  const Dims3& dims() const { return dims_; }
  const Spacing3& spacing() const { return spacing_; }
  const std::vector<std::int16_t>& voxels() const { return hu_; }

  std::size_t offset(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_.nx) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_.ny) *
                                                  static_cast<std::size_t>(k));
  }
  std::int16_t at(int i, int j, int k) const { return hu_[offset(i, j, k)]; }
  bool in_grid(const VoxelIndex& v) const {
    return v.i >= 0 && v.i < dims_.nx && v.j >= 0 && v.j < dims_.ny && v.k >= 0 &&
           v.k < dims_.nz;
  }

private:
  Dims3 dims_;
  Spacing3 spacing_;
  std::vector<std::int16_t> hu_;
};

// One byte per voxel (0/1), grid-compatible with its source volume.
class BinaryMask {
public:
  BinaryMask(Dims3 dims, Spacing3 spacing)
      : dims_(dims), spacing_(spacing), bits_(dims.count(), 0) {
    validate_grid(dims_, spacing_);
  }
  BinaryMask(Dims3 dims, Spacing3 spacing, std::vector<std::uint8_t> bits)
      : dims_(dims), spacing_(spacing), bits_(std::move(bits)) {
    validate_grid(dims_, spacing_);
    if (bits_.size() != dims_.count())
      throw InvalidArgument("mask byte count does not match dims");
  }

  const Dims3& dims() const { return dims_; }
  const Spacing3& spacing() const { return spacing_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::vector<std::uint8_t>& bits() { return bits_; }

  std::size_t offset(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_.nx) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_.ny) *
                                                  static_cast<std::size_t>(k));
  }
  bool test(int i, int j, int k) const { return bits_[offset(i, j, k)] != 0; }
  void set(int i, int j, int k, bool v = true) { bits_[offset(i, j, k)] = v ? 1 : 0; }

  std::size_t count_set() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b != 0;
    return n;
  }

  bool grid_compatible(const Dims3& dims, const Spacing3& spacing) const {
    return dims_ == dims && spacing_ == spacing;
  }
  bool grid_compatible(const CtVolume& vol) const {
    return grid_compatible(vol.dims(), vol.spacing());
  }

private:
  Dims3 dims_;
  Spacing3 spacing_;
  std::vector<std::uint8_t> bits_;
};

inline void require_grid_compatible(const BinaryMask& m, const CtVolume& v,
                                    const std::string& what) {
  if (!m.grid_compatible(v))
    throw InvalidArgument(what + ": mask grid does not match volume grid");
}

inline WorldPoint index_to_world(const Spacing3& s, const VoxelIndex& idx) {
  return {idx.i * s.sx, idx.j * s.sy, idx.k * s.sz};
}
inline WorldPoint index_to_world(const CtVolume& vol, const VoxelIndex& idx) {
  return index_to_world(vol.spacing(), idx);
}

inline VoxelIndex world_to_index(const Dims3& dims, const Spacing3& s, const WorldPoint& p) {
  VoxelIndex idx{static_cast<int>(std::lround(p.x / s.sx)),
                 static_cast<int>(std::lround(p.y / s.sy)),
                 static_cast<int>(std::lround(p.z / s.sz))};
  if (idx.i < 0 || idx.i >= dims.nx || idx.j < 0 || idx.j >= dims.ny || idx.k < 0 ||
      idx.k >= dims.nz)
    throw InvalidArgument("world point rounds outside the voxel grid");
  return idx;
}
inline VoxelIndex world_to_index(const CtVolume& vol, const WorldPoint& p) {
  return world_to_index(vol.dims(), vol.spacing(), p);
}

// ---------------------------------------------------------------------------
// Container I/O

namespace detail {

struct ContainerHeader {
  Dims3 dims;
  Spacing3 spacing;
  std::string dtype;  // "i16" or "u8"
};

inline std::filesystem::path header_path(const std::filesystem::path& base) {
  auto p = base;
  p += ".json";
  return p;
}
inline std::filesystem::path raw_path(const std::filesystem::path& base) {
  auto p = base;
  p += ".raw";
  return p;
}

// A `path` may be given as the bare base name, or as either of the two files.
inline std::filesystem::path strip_container_ext(std::filesystem::path p) {
  if (p.extension() == ".json" || p.extension() == ".raw") p.replace_extension();
  return p;
}

inline void write_header(const std::filesystem::path& base, const ContainerHeader& h) {
  nlohmann::ordered_json j;
  j["dims"] = {h.dims.nx, h.dims.ny, h.dims.nz};
  j["spacing_mm"] = {h.spacing.sx, h.spacing.sy, h.spacing.sz};
  j["dtype"] = h.dtype;
  j["order"] = "x-fastest";
  std::ofstream out(header_path(base));
  if (!out) throw IoError("cannot write " + header_path(base).string());
  out << j.dump(2) << "\n";
}

inline ContainerHeader read_header(const std::filesystem::path& base) {
  std::ifstream in(header_path(base));
  if (!in) throw IoError("missing header file " + header_path(base).string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed header " + header_path(base).string() + ": " + e.what());
  }
  ContainerHeader h;
  try {
    auto d = j.at("dims");
    h.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    auto s = j.at("spacing_mm");
    h.spacing = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
    h.dtype = j.at("dtype").get<std::string>();
    if (j.at("order").get<std::string>() != "x-fastest")
      throw IoError("unsupported sample order in " + header_path(base).string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid header " + header_path(base).string() + ": " + e.what());
  }
  if (h.dtype != "i16" && h.dtype != "u8")
    throw IoError("unsupported dtype '" + h.dtype + "' in " + header_path(base).string());
  validate_grid(h.dims, h.spacing);
  return h;
}

inline std::vector<std::uint8_t> read_raw(const std::filesystem::path& base,
                                          std::size_t expected_bytes) {
  std::ifstream in(raw_path(base), std::ios::binary);
  if (!in) throw IoError("missing raw file " + raw_path(base).string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (buf.size() != expected_bytes)
    throw IoError("raw payload size mismatch for " + raw_path(base).string() + ": got " +
                  std::to_string(buf.size()) + " bytes, header implies " +
                  std::to_string(expected_bytes));
  return buf;
}

inline void write_raw(const std::filesystem::path& base, const void* data,
                      std::size_t bytes) {
  std::ofstream out(raw_path(base), std::ios::binary);
  if (!out) throw IoError("cannot write " + raw_path(base).string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("short write to " + raw_path(base).string());
}

}  // namespace detail

inline void save_volume(const CtVolume& vol, const std::filesystem::path& path) {
  const auto base = detail::strip_container_ext(path);
  detail::write_header(base, {vol.dims(), vol.spacing(), "i16"});
  // Payload is explicitly little-endian two-byte samples.
  std::vector<std::uint8_t> buf(vol.voxels().size() * 2);
  for (std::size_t n = 0; n < vol.voxels().size(); ++n) {
    const auto u = static_cast<std::uint16_t>(vol.voxels()[n]);
    buf[2 * n] = static_cast<std::uint8_t>(u & 0xff);
    buf[2 * n + 1] = static_cast<std::uint8_t>(u >> 8);
  }
  detail::write_raw(base, buf.data(), buf.size());
}

inline CtVolume load_volume(const std::filesystem::path& path) {
  const auto base = detail::strip_container_ext(path);
  const auto h = detail::read_header(base);
  if (h.dtype != "i16") throw IoError("volume container must have dtype i16: " + base.string());
  const auto buf = detail::read_raw(base, h.dims.count() * 2);
  std::vector<std::int16_t> hu(h.dims.count());
  for (std::size_t n = 0; n < hu.size(); ++n) {
    const auto u = static_cast<std::uint16_t>(buf[2 * n]) |
                   (static_cast<std::uint16_t>(buf[2 * n + 1]) << 8);
    hu[n] = static_cast<std::int16_t>(u);
  }
  return CtVolume(h.dims, h.spacing, std::move(hu));
}

inline void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  const auto base = detail::strip_container_ext(path);
  detail::write_header(base, {mask.dims(), mask.spacing(), "u8"});
  detail::write_raw(base, mask.bits().data(), mask.bits().size());
}

inline BinaryMask load_mask(const std::filesystem::path& path) {
  const auto base = detail::strip_container_ext(path);
  const auto h = detail::read_header(base);
  if (h.dtype != "u8") throw IoError("mask container must have dtype u8: " + base.string());
  auto buf = detail::read_raw(base, h.dims.count());
  for (auto& b : buf) b = b ? 1 : 0;
  return BinaryMask(h.dims, h.spacing, std::move(buf));
}

}  // namespace sij
