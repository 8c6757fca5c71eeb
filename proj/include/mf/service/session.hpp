#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mf/conditioning/motion.hpp"
#include "mf/conditioning/spec.hpp"
#include "mf/geometry/camera.hpp"
#include "mf/geometry/image.hpp"
#include "mf/geometry/render.hpp"

namespace mf::service {

// Camera panel values reached at the last frame; frame 1 is always the
// reference view and intermediate frames interpolate linearly.
struct CameraPanel {
  double distance = 0;   // change of the orbit radius, world units
  double elevation = 0;  // degrees, positive raises the camera
  double azimuth = 0;    // degrees, positive moves the camera right
  geom::Vec3 offset;     // translation in reference-camera axes
  bool operator==(const CameraPanel&) const = default;
};

inline constexpr double kMinElevationDeg = -90;
inline constexpr double kMaxElevationDeg = 90;
inline constexpr double kMaxAzimuthDeg = 180;
inline constexpr double kMinOrbitRadius = 0.05;
inline constexpr int kMaxFrames = 256;

// Throws ValidationError for values outside the documented ranges.
void validate_panel(const CameraPanel& panel);

// Rigid orbit of the reference camera about anchor: yaw by azimuth, then pitch
// by elevation about the anchor, radius scaled by (r0 + distance) / r0, offset
// added. Poses are camera-to-world with the reference camera as world.
std::vector<geom::CameraPose> panel_to_poses(const CameraPanel& panel, const geom::Vec3& anchor, int frames);

inline constexpr int kMinSelectionPoints = 4;
inline constexpr double kSelectionLowPercentile = 5;
inline constexpr double kSelectionHighPercentile = 95;
inline constexpr double kMinHalfExtent = 1e-3;

// Inclusive pixel rectangle clipped to the image.
geom::Mask rect_mask(int width, int height, int x0, int y0, int x1, int y1);

// Axis-aligned box over the 5th-95th percentiles (linear interpolation) of the
// reference-frame points under the selection. Throws ValidationError with fewer
// than kMinSelectionPoints valid-depth pixels.
cond::Box3D fit_box_from_selection(const geom::DepthMap& depth, const geom::CameraIntrinsics& intrinsics,
                                   const geom::Mask& selection);

struct SessionObject {
  int id = 0;
  std::string label;
  int label_index = 0;
  cond::Box3D box;
  std::vector<cond::Keyframe> keyframes;  // released keyframes only
};

inline constexpr const char* kReferenceFile = "reference.png";
inline constexpr const char* kDepthFile = "depth.pfm";
inline constexpr const char* kSpecFile = "spec.json";
inline constexpr int kDefaultFrames = 17;

struct Session {
  std::string id;
  std::filesystem::path dir;
  geom::Image reference;
  geom::DepthMap depth;
  geom::CameraIntrinsics intrinsics;
  geom::PointCloud cloud;
  std::map<int, SessionObject> objects;
  int next_object_id = 1;
  std::optional<int> selected;
  int num_frames = kDefaultFrames;
  std::vector<geom::CameraPose> camera;  // empty means a static camera
  std::string caption;
  std::uint64_t seed = 0;
};

// Validates extents, writes reference.png and depth.pfm into dir and
// unprojects the cloud from the identity pose.
Session create_session(const std::string& id, const std::filesystem::path& dir, const geom::Image& reference,
                       const geom::DepthMap& depth, const geom::CameraIntrinsics& intrinsics);

// Registers a new object from a selection and makes it the selected one.
const SessionObject& add_object(Session& session, const geom::Mask& selection, const std::string& label);

// Orbit anchor: the selected object's center, else the cloud centroid.
geom::Vec3 orbit_anchor(const Session& session);

// The ControlSpec the session's draft describes; paths are relative to dir.
// Objects without keyframes stay at their selected pose.
cond::ControlSpec session_spec(const Session& session);

struct PreviewRequest {
  std::optional<int> frames;
  std::optional<CameraPanel> panel;
  std::optional<std::vector<geom::CameraPose>> camera;
  std::map<int, std::vector<cond::Keyframe>> keyframes;
};

inline constexpr int kMaxPreviewFrames = 8;

// Up to max evenly spaced 0-based frame indices, first and last included.
std::vector<int> preview_indices(int frames, int max = kMaxPreviewFrames);

struct Preview {
  std::vector<int> indices;
  std::vector<geom::Image> frames;  // guidance with overlays, full extents
  std::vector<geom::CameraPose> camera;
  std::vector<cond::BoxSequence2D> boxes;
};

// Commits the request into the session draft when it validates, then renders
// the guidance strip from the resulting spec. Keyframe lists that do not begin
// at frame 1 get the object's selected center prepended there.
Preview preview(Session& session, const PreviewRequest& request);

}  // namespace mf::service
