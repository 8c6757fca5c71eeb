#include "mf/geometry/camera.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "mf/common/error.hpp"

namespace mf::geom {

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0) || !std::isfinite(fx) || !std::isfinite(fy))
    throw ValidationError(fmt::format("intrinsics: focal lengths must be positive (fx={}, fy={})", fx, fy));
  if (width <= 0 || height <= 0)
    throw ValidationError(fmt::format("intrinsics: extents must be positive ({}x{})", width, height));
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
    throw ValidationError(
        fmt::format("intrinsics: principal point ({}, {}) outside {}x{} image", cx, cy, width, height));
}

namespace {

double orthonormality_error(const Mat3& r) {
  const Mat3 g = r.transposed() * r;
  double worst = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

}  // namespace

bool CameraPose::is_valid(double tolerance) const {
  for (double v : rotation.m)
    if (!std::isfinite(v)) return false;
  if (!std::isfinite(translation.x) || !std::isfinite(translation.y) || !std::isfinite(translation.z)) return false;
  return orthonormality_error(rotation) <= tolerance && std::abs(rotation.determinant() - 1.0) <= tolerance;
}

void CameraPose::validate(double tolerance) const {
  if (is_valid(tolerance)) return;
  throw ValidationError(fmt::format("pose: rotation is not orthonormal with det +1 (|RtR-I|={:.3g}, det={:.6g})",
                                    orthonormality_error(rotation), rotation.determinant()));
}

CameraPose CameraPose::inverse() const {
  const Mat3 rt = rotation.transposed();
  return {rt, (rt * translation) * -1.0};
}

CameraPose compose(const CameraPose& a, const CameraPose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

bool CameraTrajectory::is_canonical(double tolerance) const {
  if (poses.empty()) return false;
  const auto& p = poses.front();
  for (int i = 0; i < 9; ++i)
    if (std::abs(p.rotation.m[static_cast<std::size_t>(i)] - (i % 4 == 0 ? 1.0 : 0.0)) > tolerance) return false;
  return norm(p.translation) <= tolerance;
}

CameraTrajectory canonicalize(const CameraTrajectory& trajectory) {
  if (trajectory.poses.empty()) throw ValidationError("canonicalize: trajectory has no poses");
  for (std::size_t j = 0; j < trajectory.poses.size(); ++j) {
    if (!trajectory.poses[j].is_valid())
      throw ValidationError(fmt::format("canonicalize: pose {} is not a valid rigid transform", j));
  }
  CameraTrajectory out;
  out.intrinsics = trajectory.intrinsics;
  const CameraPose inv = trajectory.poses.front().inverse();
  out.poses.reserve(trajectory.poses.size());
  out.poses.push_back(CameraPose::identity());
  for (std::size_t j = 1; j < trajectory.poses.size(); ++j) out.poses.push_back(compose(inv, trajectory.poses[j]));
  return out;
}

PluckerFrame plucker_map(const CameraIntrinsics& intrinsics, const CameraPose& pose) {
  intrinsics.validate();
  pose.validate();
  PluckerFrame out;
  out.width = intrinsics.width;
  out.height = intrinsics.height;
  const std::size_t plane = static_cast<std::size_t>(out.width) * out.height;
  out.data.resize(plane * 6);
  const Vec3 o = pose.center();
  for (int v = 0; v < out.height; ++v) {
    for (int u = 0; u < out.width; ++u) {
      const Vec3 ray{(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, 1.0};
      const Vec3 d = normalized(pose.rotation * normalized(ray));
      const Vec3 m = cross(o, d);
      const std::size_t p = static_cast<std::size_t>(v) * out.width + u;
      for (int c = 0; c < 3; ++c) {
        out.data[static_cast<std::size_t>(c) * plane + p] = static_cast<float>(d[c]);
        out.data[static_cast<std::size_t>(c + 3) * plane + p] = static_cast<float>(m[c]);
      }
    }
  }
  return out;
}

Projection project_point(const Vec3& point, const CameraIntrinsics& k, const CameraPose& pose) {
  const Vec3 c = pose.to_camera(point);
  Projection p;
  p.depth = c.z;
  if (!(c.z > kNearPlane)) return p;
  p.u = k.fx * c.x / c.z + k.cx;
  p.v = k.fy * c.y / c.z + k.cy;
  p.valid = std::isfinite(p.u) && std::isfinite(p.v);
  return p;
}

std::vector<Projection> project_points(std::span<const Vec3> points, const CameraIntrinsics& intrinsics,
                                       const CameraPose& pose) {
  pose.validate();
  std::vector<Projection> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(project_point(p, intrinsics, pose));
  return out;
}

double rotation_angle(const Mat3& a, const Mat3& b) {
  const double c = ((a.transposed() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace mf::geom
