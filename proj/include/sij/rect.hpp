#pragma once
// Normalized half-slice joint rectangles: 100 rows x 200 columns covering a
// 25 mm x 50 mm axis-aligned footprint (0.25 mm pitch), pixel values in
// [0, 1]. Batch serialization quantizes pixels to u8 in the canonical
// container and records provenance in a JSON sidecar.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sij/augment.hpp"
#include "sij/errors.hpp"
#include "sij/volume.hpp"

namespace sij {

constexpr int kRectRows = 100;
constexpr int kRectCols = 200;
constexpr double kRectHeightMm = 25.0;
constexpr double kRectWidthMm = 50.0;
constexpr double kRectPitchMm = 0.25;

enum class JointSide : int { right = 0, left = 1 };

inline const char* to_string(JointSide s) { return s == JointSide::left ? "left" : "right"; }

struct RectSample {
  JointSide side = JointSide::right;
  int z = 0;
  double cx_mm = 0.0, cy_mm = 0.0;  // rectangle center in world mm
  ImageF pixels;                    // kRectRows x kRectCols, values in [0, 1]
  std::string case_id;
};

inline void save_rect_batch(const std::filesystem::path& base,
                            const std::vector<RectSample>& rects,
                            const std::vector<int>& grades = {}) {
  if (!grades.empty() && grades.size() != rects.size())
    throw InvalidArgument("save_rect_batch: grade count mismatch");
  if (rects.empty()) throw InvalidArgument("save_rect_batch: empty batch");
  detail::write_header(base, {{kRectCols, kRectRows, static_cast<int>(rects.size())},
                              {kRectPitchMm, kRectPitchMm, 1.0},
                              "u8"});
  std::vector<std::uint8_t> buf;
  buf.reserve(rects.size() * static_cast<std::size_t>(kRectRows) * kRectCols);
  for (const auto& r : rects) {
    if (r.pixels.rows != kRectRows || r.pixels.cols != kRectCols)
      throw InvalidArgument("save_rect_batch: unexpected rectangle shape");
    for (const float p : r.pixels.v) {
      const double c = std::min(1.0, std::max(0.0, static_cast<double>(p)));
      buf.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
    }
  }
  detail::write_raw(base, buf.data(), buf.size());

  nlohmann::ordered_json side = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < rects.size(); ++i) {
    nlohmann::ordered_json e;
    e["case"] = rects[i].case_id;
    e["side"] = to_string(rects[i].side);
    e["z"] = rects[i].z;
    e["center_mm"] = {rects[i].cx_mm, rects[i].cy_mm};
    if (!grades.empty()) e["grade"] = grades[i];
    side.push_back(std::move(e));
  }
  auto sidecar = base;
  sidecar += ".sidecar.json";
  std::ofstream out(sidecar);
  if (!out) throw IoError("cannot write " + sidecar.string());
  out << nlohmann::ordered_json{{"samples", std::move(side)}}.dump(1) << "\n";
}

inline std::pair<std::vector<RectSample>, std::vector<int>> load_rect_batch(
    const std::filesystem::path& base) {
  const auto header = detail::read_header(base);
  if (header.dtype != "u8" || header.dims.nx != kRectCols || header.dims.ny != kRectRows)
    throw IoError("not a rect batch container: " + base.string());
  const auto buf = detail::read_raw(base, header.dims.count());

  auto sidecar = base;
  sidecar += ".sidecar.json";
  std::ifstream in(sidecar);
  if (!in) throw IoError("missing rect batch sidecar " + sidecar.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed sidecar " + sidecar.string() + ": " + e.what());
  }
  const auto& samples = meta.at("samples");
  if (static_cast<int>(samples.size()) != header.dims.nz)
    throw IoError("sidecar sample count disagrees with container: " + base.string());

  std::vector<RectSample> rects(samples.size());
  std::vector<int> grades(samples.size(), -1);
  const std::size_t plane = static_cast<std::size_t>(kRectRows) * kRectCols;
  for (std::size_t i = 0; i < rects.size(); ++i) {
    auto& r = rects[i];
    const auto& e = samples[i];
    r.case_id = e.at("case").get<std::string>();
    r.side = e.at("side").get<std::string>() == "left" ? JointSide::left : JointSide::right;
    r.z = e.at("z").get<int>();
    r.cx_mm = e.at("center_mm").at(0).get<double>();
    r.cy_mm = e.at("center_mm").at(1).get<double>();
    if (e.contains("grade")) grades[i] = e.at("grade").get<int>();
    r.pixels = ImageF(kRectRows, kRectCols);
    for (std::size_t p = 0; p < plane; ++p)
      r.pixels.v[p] = static_cast<float>(buf[i * plane + p]) / 255.0f;
  }
  return {std::move(rects), std::move(grades)};
}

}  // namespace sij
