#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mf/geometry/camera.hpp"
#include "mf/geometry/image.hpp"
#include "mf/geometry/math.hpp"
#include "mf/geometry/render.hpp"

namespace mf::cond {

using geom::Vec3;

struct EntityPrompt {
  int object_id = 0;
  std::string label;
  int label_index = 0;
  bool operator==(const EntityPrompt&) const = default;
};

// N x N_p points in reference-camera coordinates, frame-major.
struct ObjectTrajectory3D {
  int object_id = 0;
  int frames = 0;
  int points_per_frame = 0;
  std::vector<Vec3> points;

  ObjectTrajectory3D() = default;
  ObjectTrajectory3D(int id, int n, int np) : object_id(id), frames(n), points_per_frame(np), points(std::size_t(n) * np) {}
  const Vec3& at(int frame, int point) const { return points[std::size_t(frame) * points_per_frame + point]; }
  Vec3& at(int frame, int point) { return points[std::size_t(frame) * points_per_frame + point]; }
  bool operator==(const ObjectTrajectory3D&) const = default;
};

struct Box2D {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool operator==(const Box2D&) const = default;
};

struct BoxSequence2D {
  int object_id = 0;
  std::vector<Box2D> boxes;
  std::vector<std::uint8_t> visible;

  std::size_t size() const { return boxes.size(); }
  bool operator==(const BoxSequence2D&) const = default;
};

struct Box3D {
  Vec3 center;
  Vec3 half_extents{0.5, 0.5, 0.5};
  bool operator==(const Box3D&) const = default;
};

struct Keyframe {
  int frame = 1;  // 1-based
  Vec3 center;
  bool operator==(const Keyframe&) const = default;
};

struct ProjectedTrajectory {
  int frames = 0;
  int points_per_frame = 0;
  std::vector<geom::Projection> points;

  const geom::Projection& at(int frame, int point) const {
    return points[std::size_t(frame) * points_per_frame + point];
  }
};

inline constexpr int kDefaultPointsPerObject = 9;
inline constexpr int kDefaultStride = 4;

ObjectTrajectory3D transform_to_reference(const ObjectTrajectory3D& world, const geom::CameraPose& reference_pose);

// Center, then the 8 corners, then Halton(2,3,5) interior points.
std::vector<Vec3> sample_object_points(const Box3D& box, int count);

// Center follows the keyframes piecewise-linearly and holds after the last
// one; the sampled points translate rigidly with it.
ObjectTrajectory3D box_keyframes_to_trajectory(const Box3D& box, const std::vector<Keyframe>& keyframes, int frames,
                                               int points_per_frame, int object_id = 0);

ProjectedTrajectory project_trajectory(const ObjectTrajectory3D& trajectory, const geom::CameraTrajectory& camera);

// Min/max of valid points, padded and clamped to [0,W-1]x[0,H-1]. A frame is
// invisible with fewer than two valid points or when the padded box misses the
// image entirely.
BoxSequence2D fit_boxes(const ProjectedTrajectory& projected, double padding_px, int width, int height,
                        int object_id = 0);

inline constexpr int kOutlineWidth = 2;

// 2-px outlines on the pixels covered by each box, in ascending object id.
geom::GuidanceFrames overlay_boxes(const geom::GuidanceFrames& guidance, const std::vector<BoxSequence2D>& boxes);
void draw_box_outline(geom::Image& image, const Box2D& box, geom::Rgb color, int thickness = kOutlineWidth);

int downsampled_length(int frames, int stride);
ObjectTrajectory3D temporal_downsample(const ObjectTrajectory3D& trajectory, int stride);

}  // namespace mf::cond
