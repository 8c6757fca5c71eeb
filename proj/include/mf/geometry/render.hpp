#pragma once

#include <vector>

#include "mf/geometry/camera.hpp"
#include "mf/geometry/image.hpp"

namespace mf::geom {

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Rgb> colors;

  std::size_t size() const { return points.size(); }
};

// Lifts every pixel with finite positive depth to world space, colored by the
// reference image. Invalid pixels are skipped; the result may be empty.
PointCloud unproject_depth(const DepthMap& depth, const CameraIntrinsics& intrinsics, const CameraPose& pose,
                           const Image& reference);
Vec3 unproject_pixel(double u, double v, double depth, const CameraIntrinsics& intrinsics,
                     const CameraPose& pose);

struct SplatResult {
  Image image;
  Mask valid;
};

inline constexpr int kDefaultSplatRadius = 1;
inline constexpr Rgb kDefaultBackground{0, 0, 0};

// Each point writes a (2r+1)^2 square centered on its projected pixel. A
// per-pixel z-buffer keeps the nearest depth; equal depths keep the lower
// point index. Untouched pixels get the background color and valid=false.
SplatResult splat_render(const PointCloud& cloud, const CameraIntrinsics& intrinsics, const CameraPose& pose,
                         int point_radius_px = kDefaultSplatRadius, Rgb background = kDefaultBackground);

struct GuidanceFrames {
  std::vector<Image> frames;
  std::vector<Mask> masks;

  std::size_t size() const { return frames.size(); }
};

// Frame 0 is the reference image verbatim; frame j>0 is the splat render at
// pose j. The trajectory must already be canonical.
GuidanceFrames render_trajectory(const PointCloud& cloud, const CameraTrajectory& trajectory,
                                 const Image& reference, int point_radius_px = kDefaultSplatRadius,
                                 Rgb background = kDefaultBackground);

}  // namespace mf::geom
