#include "mf/service/session.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mf/common/error.hpp"
#include "mf/conditioning/package.hpp"
#include "mf/conditioning/vocabulary.hpp"
#include "mf/geometry/io.hpp"

namespace mf::service {
namespace {

namespace fs = std::filesystem;
using geom::Vec3;

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

bool finite(const Vec3& v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); }

double percentile(std::vector<double>& values, double pct) {
  std::ranges::sort(values);
  const double pos = pct / 100.0 * double(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

void check_frames(int frames) {
  if (frames < 1 || frames > kMaxFrames)
    throw ValidationError(fmt::format("frames must be in [1, {}], got {}", kMaxFrames, frames));
}

}  // namespace

void validate_panel(const CameraPanel& p) {
  if (!std::isfinite(p.distance) || !std::isfinite(p.elevation) || !std::isfinite(p.azimuth) || !finite(p.offset))
    throw ValidationError("camera panel values must be finite");
  if (p.elevation < kMinElevationDeg || p.elevation > kMaxElevationDeg)
    throw ValidationError(
        fmt::format("elevation must be in [{}, {}] degrees, got {}", kMinElevationDeg, kMaxElevationDeg, p.elevation));
  if (std::abs(p.azimuth) > kMaxAzimuthDeg)
    throw ValidationError(fmt::format("azimuth must be in [-{0}, {0}] degrees, got {1}", kMaxAzimuthDeg, p.azimuth));
}

std::vector<geom::CameraPose> panel_to_poses(const CameraPanel& panel, const Vec3& anchor, int frames) {
  validate_panel(panel);
  check_frames(frames);
  if (!finite(anchor)) throw ValidationError("orbit anchor must be finite");
  const Vec3 arm = Vec3{} - anchor;
  const double r0 = geom::norm(arm);
  if (r0 < kMinOrbitRadius) throw ValidationError("orbit anchor coincides with the reference camera");
  if (r0 + panel.distance < kMinOrbitRadius)
    throw ValidationError(fmt::format("distance {} brings the camera closer than {} to the anchor", panel.distance,
                                      kMinOrbitRadius));
  std::vector<geom::CameraPose> poses(static_cast<std::size_t>(frames));
  for (int j = 1; j < frames; ++j) {
    const double s = double(j) / double(frames - 1);
    const auto r = geom::rotation_y(-radians(panel.azimuth) * s) * geom::rotation_x(-radians(panel.elevation) * s);
    const double scale = (r0 + panel.distance * s) / r0;
    poses[std::size_t(j)] = {r, anchor + (r * arm) * scale + panel.offset * s};
  }
  return poses;
}

geom::Mask rect_mask(int width, int height, int x0, int y0, int x1, int y1) {
  if (x1 < x0 || y1 < y0) throw ValidationError(fmt::format("empty rectangle [{}, {}, {}, {}]", x0, y0, x1, y1));
  geom::Mask m(width, height);
  for (int y = std::max(0, y0); y <= std::min(height - 1, y1); ++y)
    for (int x = std::max(0, x0); x <= std::min(width - 1, x1); ++x) m.set(x, y, true);
  return m;
}

cond::Box3D fit_box_from_selection(const geom::DepthMap& depth, const geom::CameraIntrinsics& k,
                                   const geom::Mask& selection) {
  if (selection.width != depth.width || selection.height != depth.height)
    throw DimensionError(fmt::format("selection is {}x{} but the depth map is {}x{}", selection.width,
                                     selection.height, depth.width, depth.height));
  std::array<std::vector<double>, 3> axes;
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const float z = depth.at(u, v);
      if (!selection.at(u, v) || !std::isfinite(z) || !(z > 0)) continue;
      const auto p = geom::unproject_pixel(u, v, z, k, geom::CameraPose::identity());
      for (int a = 0; a < 3; ++a) axes[std::size_t(a)].push_back(p[a]);
    }
  if (axes[0].size() < std::size_t(kMinSelectionPoints))
    throw ValidationError(fmt::format("selection covers {} valid-depth pixels; at least {} are needed",
                                      axes[0].size(), kMinSelectionPoints));
  double lo[3], hi[3];
  for (std::size_t a = 0; a < 3; ++a) {
    lo[a] = percentile(axes[a], kSelectionLowPercentile);
    hi[a] = percentile(axes[a], kSelectionHighPercentile);
  }
  cond::Box3D box;
  box.center = {(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
  box.half_extents = {std::max((hi[0] - lo[0]) / 2, kMinHalfExtent), std::max((hi[1] - lo[1]) / 2, kMinHalfExtent),
                      std::max((hi[2] - lo[2]) / 2, kMinHalfExtent)};
  return box;
}

Session create_session(const std::string& id, const fs::path& dir, const geom::Image& reference,
                       const geom::DepthMap& depth, const geom::CameraIntrinsics& intrinsics) {
  intrinsics.validate();
  if (reference.width != intrinsics.width || reference.height != intrinsics.height)
    throw DimensionError(fmt::format("image is {}x{} but intrinsics are {}x{}", reference.width, reference.height,
                                     intrinsics.width, intrinsics.height));
  if (depth.width != intrinsics.width || depth.height != intrinsics.height)
    throw DimensionError(fmt::format("depth is {}x{} but intrinsics are {}x{}", depth.width, depth.height,
                                     intrinsics.width, intrinsics.height));
  Session s;
  s.id = id;
  s.dir = dir;
  s.reference = geom::quantize8(reference);
  s.depth = depth;
  s.intrinsics = intrinsics;
  s.cloud = geom::unproject_depth(depth, intrinsics, geom::CameraPose::identity(), s.reference);
  fs::create_directories(dir);
  geom::write_png(dir / kReferenceFile, s.reference);
  geom::write_pfm(dir / kDepthFile, depth);
  return s;
}

const SessionObject& add_object(Session& session, const geom::Mask& selection, const std::string& label) {
  const auto index = cond::label_index(label);
  if (!index) throw ValidationError(fmt::format("label '{}' is not in the entity vocabulary", label));
  SessionObject o;
  o.box = fit_box_from_selection(session.depth, session.intrinsics, selection);
  o.id = session.next_object_id++;
  o.label = label;
  o.label_index = *index;
  session.selected = o.id;
  return session.objects[o.id] = std::move(o);
}

Vec3 orbit_anchor(const Session& session) {
  if (session.selected) {
    const auto it = session.objects.find(*session.selected);
    if (it != session.objects.end()) return it->second.box.center;
  }
  if (session.cloud.size() == 0) throw ValidationError("the session has no valid depth to orbit about");
  Vec3 sum;
  for (const auto& p : session.cloud.points) sum += p;
  return sum / double(session.cloud.size());
}

cond::ControlSpec session_spec(const Session& session) {
  cond::ControlSpec spec;
  spec.reference_image = kReferenceFile;
  spec.depth_map = kDepthFile;
  spec.base_dir = session.dir;
  spec.intrinsics = session.intrinsics;
  spec.num_frames = session.num_frames;
  spec.camera = session.camera.empty() ? std::vector<geom::CameraPose>(std::size_t(session.num_frames))
                                       : session.camera;
  for (const auto& [id, o] : session.objects) {
    cond::ObjectSpec os;
    os.entity = {id, o.label, o.label_index};
    os.box = o.box;
    os.keyframes = o.keyframes.empty() ? std::vector<cond::Keyframe>{{1, o.box.center}} : o.keyframes;
    spec.objects.push_back(std::move(os));
  }
  spec.caption = session.caption;
  spec.seed = session.seed;
  return spec;
}

std::vector<int> preview_indices(int frames, int max) {
  check_frames(frames);
  if (max < 1) throw ContractError("preview_indices: max must be >= 1");
  const int n = std::min(frames, max);
  if (n == 1) return {0};
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(int(std::lround(double(i) * (frames - 1) / (n - 1))));
  return out;
}

Preview preview(Session& session, const PreviewRequest& request) {
  if (request.panel && request.camera) throw ValidationError("give either a camera panel or a camera trajectory");
  Session draft = session;
  draft.num_frames = request.frames.value_or(request.camera ? int(request.camera->size()) : session.num_frames);
  check_frames(draft.num_frames);
  if (request.camera) {
    if (int(request.camera->size()) != draft.num_frames)
      throw ValidationError(
          fmt::format("camera has {} poses but frames is {}", request.camera->size(), draft.num_frames));
    draft.camera = *request.camera;
  } else if (request.panel) {
    draft.camera = panel_to_poses(*request.panel, orbit_anchor(session), draft.num_frames);
  } else if (draft.camera.size() != std::size_t(draft.num_frames)) {
    draft.camera.clear();
  }
  for (const auto& [id, keys] : request.keyframes) {
    const auto it = draft.objects.find(id);
    if (it == draft.objects.end()) throw ValidationError(fmt::format("unknown object id {}", id));
    // Released keyframes start from the selection pose on frame 1.
    auto& dst = it->second.keyframes;
    dst = keys;
    if (!dst.empty() && dst.front().frame != 1) dst.insert(dst.begin(), cond::Keyframe{1, it->second.box.center});
  }
  const auto spec = session_spec(draft);
  const auto pkg = cond::build_control_package(spec, draft.reference, draft.depth);

  Preview out;
  out.indices = preview_indices(draft.num_frames);
  for (int j : out.indices) out.frames.push_back(pkg.guidance.frames[std::size_t(j)]);
  out.camera = spec.camera;
  out.boxes = pkg.boxes;
  session.num_frames = draft.num_frames;
  session.camera = std::move(draft.camera);
  session.objects = std::move(draft.objects);
  return out;
}

}  // namespace mf::service
