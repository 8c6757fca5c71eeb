#pragma once

#include <filesystem>
#include <vector>

#include "mf/geometry/camera.hpp"
#include "mf/geometry/image.hpp"

namespace mf::geom {

// 8-bit RGB PNG. Values are quantized with round(v * 255).
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);
std::vector<unsigned char> encode_png(const Image& image);

// Portable float map, single channel ("Pf"), little-endian, rows stored
// bottom-to-top as the format requires.
void write_pfm(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_pfm(const std::filesystem::path& path);

// One pose per line: "r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz"
// (camera-to-world, row-major).
void write_poses(const std::filesystem::path& path, const std::vector<CameraPose>& poses);
std::vector<CameraPose> read_poses(const std::filesystem::path& path);

// Rounds every value to the nearest multiple of 1/255, as a PNG round trip would.
Image quantize8(const Image& image);

}  // namespace mf::geom
