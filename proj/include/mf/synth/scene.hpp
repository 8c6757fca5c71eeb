#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mf/conditioning/motion.hpp"
#include "mf/geometry/camera.hpp"
#include "mf/geometry/image.hpp"

namespace mf::synth {

enum class CameraMotion { kStatic, kPan, kDolly, kOrbit, kRandomSmooth };
enum class ObjectMotion { kStatic, kLinear, kCircular, kRandomSmooth };

std::string to_string(CameraMotion m);
std::string to_string(ObjectMotion m);
CameraMotion camera_motion_from_string(const std::string& s);
ObjectMotion object_motion_from_string(const std::string& s);

struct SceneConfig {
  std::uint64_t seed = 0;
  int num_frames = 17;
  int width = 64;
  int height = 64;
  double focal_px = 70;
  CameraMotion camera_motion = CameraMotion::kStatic;
  int object_count = 1;
  ObjectMotion object_motion = ObjectMotion::kLinear;
  double depth_min = 2.5;
  double depth_max = 4.5;

  void validate() const;
  geom::CameraIntrinsics intrinsics() const;
  bool operator==(const SceneConfig&) const = default;
};

nlohmann::json config_to_json(const SceneConfig& c);
SceneConfig config_from_json(const nlohmann::json& j, const std::string& path = "/config");

struct ObjectAnnotation {
  int object_id = 0;
  std::string label;
  int label_index = 0;
  geom::Rgb color;
  cond::Box3D box;                  // pose at frame 1
  cond::ObjectTrajectory3D points;  // N x N_p, reference-camera frame
  cond::BoxSequence2D boxes;
  // Pixels whose square touches the object's unoccluded silhouette.
  std::vector<geom::Mask> masks;
  nlohmann::json extra = nlohmann::json::object();
};

struct SceneAnnotation {
  std::string version = "rc-1";
  std::string clip_id;
  SceneConfig config;
  std::string caption;
  geom::CameraIntrinsics intrinsics;
  std::vector<geom::CameraPose> poses;  // camera-to-world; world = frame-1 camera
  std::string depth = "depth0.pfm";
  std::vector<ObjectAnnotation> objects;
  nlohmann::json extra = nlohmann::json::object();
};

struct Scene {
  std::vector<geom::Image> frames;
  geom::DepthMap depth0;
  SceneAnnotation annotation;
  int attempts = 1;
};

inline constexpr int kMaxSceneAttempts = 256;

// Bit-deterministic per config. Layouts that leave an object partly out of
// view or let two objects' boxes touch are resampled from a perturbed seed.
Scene generate_scene(const SceneConfig& config);

}  // namespace mf::synth
