#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mf/conditioning/motion.hpp"
#include "mf/geometry/camera.hpp"
#include "mf/geometry/image.hpp"

namespace mf::eval {

using geom::Vec3;

struct Similarity {
  double scale = 1;
  geom::Mat3 rotation;
  Vec3 translation;
  // Set when the configuration was degenerate and only a translation was fitted.
  bool translation_only = false;

  Vec3 apply(const Vec3& p) const { return rotation * p * scale + translation; }
};

// Least-squares similarity minimizing sum |ref - (s R est + t)|^2.
Similarity umeyama_align(std::span<const Vec3> est, std::span<const Vec3> ref);

struct TrajectoryPair {
  geom::CameraTrajectory estimated;
  geom::CameraTrajectory reference;
};

// Both trajectories are canonicalized on entry.
double cam_trans_err(const TrajectoryPair& pair);
// Mean geodesic angle between first-frame-relative rotations over frames 2..N;
// 0 for single-frame trajectories.
double cam_rot_err(const TrajectoryPair& pair);

inline constexpr double kColorTolerance = 60.0 / 255.0;
inline constexpr int kMinBoxArea = 4;

// Boxes are in pixel-area coordinates: a mask spanning pixel columns a..b
// yields x0 = a - 0.5, x1 = b + 0.5.
cond::BoxSequence2D recover_boxes(const std::vector<geom::Image>& video, geom::Rgb color, int object_id = 0,
                                  double tolerance = kColorTolerance);

// Grows a center-coordinate box to the area of the pixels whose centers it covers.
cond::Box2D snap_to_pixels(const cond::Box2D& box);
cond::BoxSequence2D snap_to_pixels(const cond::BoxSequence2D& seq);

double box_iou(const cond::Box2D& a, const cond::Box2D& b);

struct IouTally {
  double sum = 0;
  int frames = 0;
  std::optional<double> mean() const { return frames ? std::optional(sum / frames) : std::nullopt; }
};

// Frames invisible in gt are skipped; visible in gt but not pred score 0.
IouTally box_iou_tally(const cond::BoxSequence2D& pred, const cond::BoxSequence2D& gt);
// nullopt when gt is never visible.
std::optional<double> box_iou_sequence(const cond::BoxSequence2D& pred, const cond::BoxSequence2D& gt);

struct Shift {
  int dx = 0, dy = 0;
  double score = 0;
  bool operator==(const Shift& o) const { return dx == o.dx && dy == o.dy; }
};

// Integer shift (dx,dy) maximizing normalized cross-correlation of luminance
// such that b(x+dx, y+dy) ~ a(x, y). Pixels within tolerance of any ignored
// color are left out on both sides. Ties prefer the smaller |shift|.
Shift background_shift(const geom::Image& a, const geom::Image& b, int max_shift,
                       const std::vector<geom::Rgb>& ignore = {}, double tolerance = kColorTolerance);

}  // namespace mf::eval
