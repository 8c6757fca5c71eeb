#pragma once

#include <span>
#include <vector>

#include "mf/geometry/image.hpp"
#include "mf/geometry/math.hpp"

namespace mf::geom {

// Pinhole intrinsics in pixels. Pixel (u,v) has its center at continuous
// coordinate (u,v); x points right, y down, z forward.
struct CameraIntrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;

  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

inline constexpr double kPoseTolerance = 1e-5;

// Camera-to-world rigid transform: world = rotation * camera + translation.
struct CameraPose {
  Mat3 rotation;
  Vec3 translation;

  static CameraPose identity() { return {}; }
  static CameraPose translate(double x, double y, double z) { return {Mat3::identity(), {x, y, z}}; }

  // Throws ValidationError unless rotation is orthonormal with det +1.
  void validate(double tolerance = kPoseTolerance) const;
  bool is_valid(double tolerance = kPoseTolerance) const;

  Vec3 center() const { return translation; }
  Vec3 to_world(const Vec3& camera_point) const { return rotation * camera_point + translation; }
  Vec3 to_camera(const Vec3& world_point) const { return rotation.transposed() * (world_point - translation); }
  CameraPose inverse() const;
  bool operator==(const CameraPose&) const = default;
};

// a ∘ b: apply b first, then a.
CameraPose compose(const CameraPose& a, const CameraPose& b);

struct CameraTrajectory {
  std::vector<CameraPose> poses;
  CameraIntrinsics intrinsics;

  std::size_t size() const { return poses.size(); }
  bool is_canonical(double tolerance = kPoseTolerance) const;
};

// poses[j] <- poses[0]^-1 ∘ poses[j]; the first pose becomes the identity.
CameraTrajectory canonicalize(const CameraTrajectory& trajectory);

// Per-pixel Plücker coordinates, channel-first [6][H][W]: unit world ray
// direction (3) followed by moment o x d (3), o the camera center.
struct PluckerFrame {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  float at(int channel, int x, int y) const {
    return data[(static_cast<std::size_t>(channel) * height + y) * width + x];
  }
};

PluckerFrame plucker_map(const CameraIntrinsics& intrinsics, const CameraPose& pose);

inline constexpr double kNearPlane = 1e-4;

struct Projection {
  double u = 0, v = 0, depth = 0;
  bool valid = false;
};

// World points to pixel coordinates; points with camera depth <= kNearPlane
// are flagged invalid.
std::vector<Projection> project_points(std::span<const Vec3> points, const CameraIntrinsics& intrinsics,
                                       const CameraPose& pose);
Projection project_point(const Vec3& point, const CameraIntrinsics& intrinsics, const CameraPose& pose);

// Pixel index holding continuous coordinate c (pixel centers at integers).
inline int pixel_index(double c) { return static_cast<int>(std::floor(c + 0.5)); }

// Geodesic angle between two rotations, radians in [0, pi].
double rotation_angle(const Mat3& a, const Mat3& b);

}  // namespace mf::geom
