#pragma once

#include <filesystem>
#include <vector>

#include "mf/conditioning/spec.hpp"
#include "mf/geometry/camera.hpp"
#include "mf/geometry/render.hpp"

namespace mf::cond {

struct PackageOptions {
  int points_per_object = kDefaultPointsPerObject;
  int stride = kDefaultStride;
  int splat_radius = geom::kDefaultSplatRadius;
  geom::Rgb background = geom::kDefaultBackground;
  double box_padding_px = 0;
};

struct ControlPackage {
  int frames = 0;
  int width = 0;
  int height = 0;
  int downsampled_frames = 0;
  int points_per_object = 0;
  geom::CameraTrajectory camera;            // canonical
  std::vector<geom::PluckerFrame> plucker;  // N x [6][H][W]
  geom::GuidanceFrames guidance;            // with overlays
  std::vector<BoxSequence2D> boxes;         // commanded, one per object
  std::vector<int> object_ids;
  std::vector<int> entity_indices;
  std::vector<float> traj_tokens;  // M x Ñ x 3·N_p

  int objects() const { return static_cast<int>(entity_indices.size()); }
};

// Per-object reference-frame trajectories at full frame rate.
std::vector<ObjectTrajectory3D> object_trajectories(const ControlSpec& spec, int points_per_object);

ControlPackage build_control_package(const ControlSpec& spec, const PackageOptions& options = {});
ControlPackage build_control_package(const ControlSpec& spec, const geom::Image& reference,
                                     const geom::DepthMap& depth, const PackageOptions& options = {});

// package.json, plucker.f32 (little-endian N x 6 x H x W) and guidance/NNN.png.
void write_package(const ControlPackage& package, const std::filesystem::path& dir);

}  // namespace mf::cond
