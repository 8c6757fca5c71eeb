#include "mf/geometry/render.hpp"

#include <cmath>
#include <fmt/format.h>
#include <limits>

#include "mf/common/error.hpp"

namespace mf::geom {

Vec3 unproject_pixel(double u, double v, double depth, const CameraIntrinsics& k, const CameraPose& pose) {
  const Vec3 c{(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth};
  return pose.to_world(c);
}

PointCloud unproject_depth(const DepthMap& depth, const CameraIntrinsics& intrinsics, const CameraPose& pose,
                           const Image& reference) {
  intrinsics.validate();
  pose.validate();
  if (depth.width != intrinsics.width || depth.height != intrinsics.height)
    throw DimensionError(fmt::format("unproject_depth: depth is {}x{} but intrinsics are {}x{}", depth.width,
                                     depth.height, intrinsics.width, intrinsics.height));
  if (reference.width != depth.width || reference.height != depth.height)
    throw DimensionError(fmt::format("unproject_depth: reference image is {}x{} but depth is {}x{}",
                                     reference.width, reference.height, depth.width, depth.height));
  PointCloud cloud;
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const float z = depth.at(u, v);
      if (!std::isfinite(z) || !(z > 0)) continue;
      cloud.points.push_back(unproject_pixel(u, v, z, intrinsics, pose));
      cloud.colors.push_back(reference.at(u, v));
    }
  }
  return cloud;
}

SplatResult splat_render(const PointCloud& cloud, const CameraIntrinsics& intrinsics, const CameraPose& pose,
                         int radius, Rgb background) {
  intrinsics.validate();
  pose.validate();
  if (radius < 0) throw ValidationError(fmt::format("splat_render: point radius must be >= 0, got {}", radius));
  if (cloud.colors.size() != cloud.points.size())
    throw DimensionError(fmt::format("splat_render: {} points but {} colors", cloud.points.size(),
                                     cloud.colors.size()));
  const int w = intrinsics.width, h = intrinsics.height;
  SplatResult out{Image(w, h, background), Mask(w, h)};
  std::vector<double> zbuf(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Projection p = project_point(cloud.points[i], intrinsics, pose);
    if (!p.valid) continue;
    const int pu = pixel_index(p.u), pv = pixel_index(p.v);
    if (pu + radius < 0 || pv + radius < 0 || pu - radius >= w || pv - radius >= h) continue;
    for (int y = std::max(0, pv - radius); y <= std::min(h - 1, pv + radius); ++y) {
      for (int x = std::max(0, pu - radius); x <= std::min(w - 1, pu + radius); ++x) {
        double& z = zbuf[static_cast<std::size_t>(y) * w + x];
        if (p.depth < z) {
          z = p.depth;
          out.image.set(x, y, cloud.colors[i]);
          out.valid.set(x, y, true);
        }
      }
    }
  }
  return out;
}

GuidanceFrames render_trajectory(const PointCloud& cloud, const CameraTrajectory& trajectory,
                                 const Image& reference, int radius, Rgb background) {
  trajectory.intrinsics.validate();
  if (!trajectory.is_canonical())
    throw ContractError("render_trajectory: trajectory must be canonicalized (first pose identity)");
  if (reference.width != trajectory.intrinsics.width || reference.height != trajectory.intrinsics.height)
    throw DimensionError(fmt::format("render_trajectory: reference image is {}x{} but intrinsics are {}x{}",
                                     reference.width, reference.height, trajectory.intrinsics.width,
                                     trajectory.intrinsics.height));
  GuidanceFrames out;
  out.frames.reserve(trajectory.size());
  out.masks.reserve(trajectory.size());
  out.frames.push_back(reference);
  out.masks.emplace_back(reference.width, reference.height, true);
  for (std::size_t j = 1; j < trajectory.size(); ++j) {
    auto r = splat_render(cloud, trajectory.intrinsics, trajectory.poses[j], radius, background);
    out.frames.push_back(std::move(r.image));
    out.masks.push_back(std::move(r.valid));
  }
  return out;
}

}  // namespace mf::geom
