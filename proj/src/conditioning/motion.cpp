#include "mf/conditioning/motion.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "mf/common/error.hpp"
#include "mf/conditioning/vocabulary.hpp"

namespace mf::cond {

namespace {

double radical_inverse(int index, int base) {
  double result = 0, f = 1.0 / base;
  for (int i = index; i > 0; i /= base, f /= base) result += f * (i % base);
  return result;
}

}  // namespace

ObjectTrajectory3D transform_to_reference(const ObjectTrajectory3D& world, const geom::CameraPose& reference_pose) {
  reference_pose.validate();
  ObjectTrajectory3D out = world;
  for (auto& p : out.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw ValidationError("transform_to_reference: non-finite trajectory point");
    p = reference_pose.to_camera(p);
  }
  return out;
}

std::vector<Vec3> sample_object_points(const Box3D& box, int count) {
  if (count < 1) throw ValidationError(fmt::format("sample_object_points: N_p must be >= 1, got {}", count));
  const Vec3& h = box.half_extents;
  if (!(h.x > 0) || !(h.y > 0) || !(h.z > 0))
    throw ValidationError(fmt::format("degenerate box: half extents ({}, {}, {}) must be positive", h.x, h.y, h.z));
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(count));
  pts.push_back(box.center);
  for (int c = 0; c < 8 && static_cast<int>(pts.size()) < count; ++c) {
    const Vec3 s{c & 1 ? 1.0 : -1.0, c & 2 ? 1.0 : -1.0, c & 4 ? 1.0 : -1.0};
    pts.push_back(box.center + Vec3{s.x * h.x, s.y * h.y, s.z * h.z});
  }
  for (int i = 1; static_cast<int>(pts.size()) < count; ++i) {
    const Vec3 u{radical_inverse(i, 2), radical_inverse(i, 3), radical_inverse(i, 5)};
    pts.push_back(box.center + Vec3{(2 * u.x - 1) * h.x, (2 * u.y - 1) * h.y, (2 * u.z - 1) * h.z});
  }
  return pts;
}

ObjectTrajectory3D box_keyframes_to_trajectory(const Box3D& box, const std::vector<Keyframe>& keyframes, int frames,
                                               int points_per_frame, int object_id) {
  if (frames < 1) throw ValidationError(fmt::format("trajectory needs >= 1 frame, got {}", frames));
  if (keyframes.empty()) throw ValidationError("keyframes: at least one keyframe (frame 1) is required");
  if (keyframes.front().frame != 1)
    throw ValidationError(fmt::format("keyframes: first keyframe must be frame 1, got {}", keyframes.front().frame));
  for (std::size_t i = 0; i < keyframes.size(); ++i) {
    if (keyframes[i].frame < 1 || keyframes[i].frame > frames)
      throw ValidationError(fmt::format("keyframes[{}]: frame {} outside [1, {}]", i, keyframes[i].frame, frames));
    if (i > 0 && keyframes[i].frame <= keyframes[i - 1].frame)
      throw ValidationError(fmt::format("keyframes[{}]: frame {} is not after frame {} (unsorted or duplicate)", i,
                                        keyframes[i].frame, keyframes[i - 1].frame));
  }
  const auto local = sample_object_points({{0, 0, 0}, box.half_extents}, points_per_frame);
  ObjectTrajectory3D out(object_id, frames, points_per_frame);
  std::size_t k = 0;
  for (int j = 1; j <= frames; ++j) {
    while (k + 1 < keyframes.size() && keyframes[k + 1].frame <= j) ++k;
    Vec3 c = keyframes[k].center;
    if (k + 1 < keyframes.size()) {
      const auto& a = keyframes[k];
      const auto& b = keyframes[k + 1];
      c = geom::lerp(a.center, b.center, double(j - a.frame) / double(b.frame - a.frame));
    }
    for (int p = 0; p < points_per_frame; ++p) out.at(j - 1, p) = c + local[static_cast<std::size_t>(p)];
  }
  return out;
}

ProjectedTrajectory project_trajectory(const ObjectTrajectory3D& trajectory, const geom::CameraTrajectory& camera) {
  if (!camera.is_canonical()) throw ContractError("project_trajectory: camera trajectory must be canonicalized");
  if (static_cast<std::size_t>(trajectory.frames) != camera.size())
    throw DimensionError(fmt::format("project_trajectory: object has {} frames, camera has {}", trajectory.frames,
                                     camera.size()));
  ProjectedTrajectory out{trajectory.frames, trajectory.points_per_frame, {}};
  out.points.reserve(trajectory.points.size());
  for (int j = 0; j < trajectory.frames; ++j) {
    const auto& pose = camera.poses[static_cast<std::size_t>(j)];
    pose.validate();
    for (int p = 0; p < trajectory.points_per_frame; ++p)
      out.points.push_back(geom::project_point(trajectory.at(j, p), camera.intrinsics, pose));
  }
  return out;
}

BoxSequence2D fit_boxes(const ProjectedTrajectory& projected, double padding_px, int width, int height,
                        int object_id) {
  if (!(padding_px >= 0)) throw ValidationError(fmt::format("fit_boxes: padding must be >= 0, got {}", padding_px));
  BoxSequence2D out;
  out.object_id = object_id;
  out.boxes.resize(static_cast<std::size_t>(projected.frames));
  out.visible.resize(static_cast<std::size_t>(projected.frames), 0);
  for (int j = 0; j < projected.frames; ++j) {
    int valid = 0;
    Box2D b{INFINITY, INFINITY, -INFINITY, -INFINITY};
    for (int p = 0; p < projected.points_per_frame; ++p) {
      const auto& q = projected.at(j, p);
      if (!q.valid) continue;
      ++valid;
      b = {std::min(b.x0, q.u), std::min(b.y0, q.v), std::max(b.x1, q.u), std::max(b.y1, q.v)};
    }
    if (valid < 2) continue;
    b = {b.x0 - padding_px, b.y0 - padding_px, b.x1 + padding_px, b.y1 + padding_px};
    if (b.x1 < -0.5 || b.y1 < -0.5 || b.x0 > width - 0.5 || b.y0 > height - 0.5) continue;
    const double xmax = width - 1, ymax = height - 1;
    out.boxes[static_cast<std::size_t>(j)] = {std::clamp(b.x0, 0.0, xmax), std::clamp(b.y0, 0.0, ymax),
                                              std::clamp(b.x1, 0.0, xmax), std::clamp(b.y1, 0.0, ymax)};
    out.visible[static_cast<std::size_t>(j)] = 1;
  }
  return out;
}

void draw_box_outline(geom::Image& image, const Box2D& box, geom::Rgb color, int thickness) {
  // Pixels whose centers fall inside the box; a sub-pixel box keeps its nearest pixel.
  int xa = static_cast<int>(std::ceil(box.x0)), xb = static_cast<int>(std::floor(box.x1));
  int ya = static_cast<int>(std::ceil(box.y0)), yb = static_cast<int>(std::floor(box.y1));
  if (xa > xb) xa = xb = geom::pixel_index((box.x0 + box.x1) / 2);
  if (ya > yb) ya = yb = geom::pixel_index((box.y0 + box.y1) / 2);
  xa = std::max(xa, 0);
  ya = std::max(ya, 0);
  xb = std::min(xb, image.width - 1);
  yb = std::min(yb, image.height - 1);
  for (int y = ya; y <= yb; ++y)
    for (int x = xa; x <= xb; ++x)
      if (x < xa + thickness || x > xb - thickness || y < ya + thickness || y > yb - thickness)
        image.set(x, y, color);
}

geom::GuidanceFrames overlay_boxes(const geom::GuidanceFrames& guidance, const std::vector<BoxSequence2D>& boxes) {
  geom::GuidanceFrames out = guidance;
  std::vector<const BoxSequence2D*> order;
  for (const auto& b : boxes) order.push_back(&b);
  std::stable_sort(order.begin(), order.end(),
                   [](const BoxSequence2D* a, const BoxSequence2D* b) { return a->object_id < b->object_id; });
  for (const auto* seq : order) {
    if (seq->size() != out.size())
      throw DimensionError(fmt::format("overlay_boxes: object {} has {} boxes for {} frames", seq->object_id,
                                       seq->size(), out.size()));
    const auto color = overlay_color(seq->object_id);
    for (std::size_t j = 0; j < out.size(); ++j)
      if (seq->visible[j]) draw_box_outline(out.frames[j], seq->boxes[j], color);
  }
  return out;
}

int downsampled_length(int frames, int stride) {
  if (stride < 1) throw ValidationError(fmt::format("stride must be >= 1, got {}", stride));
  if (frames < 1) throw ValidationError(fmt::format("frame count must be >= 1, got {}", frames));
  return (frames - 1) / stride + 1;
}

ObjectTrajectory3D temporal_downsample(const ObjectTrajectory3D& trajectory, int stride) {
  const int n = downsampled_length(trajectory.frames, stride);
  ObjectTrajectory3D out(trajectory.object_id, n, trajectory.points_per_frame);
  for (int k = 0; k < n; ++k)
    for (int p = 0; p < trajectory.points_per_frame; ++p) out.at(k, p) = trajectory.at(k * stride, p);
  return out;
}

}  // namespace mf::cond
