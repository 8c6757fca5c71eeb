#include "mf/conditioning/package.hpp"

#include <fmt/format.h>

#include <fstream>
#include <json.hpp>

#include "mf/common/error.hpp"
#include "mf/geometry/io.hpp"

namespace mf::cond {

std::vector<ObjectTrajectory3D> object_trajectories(const ControlSpec& spec, int points_per_object) {
  std::vector<ObjectTrajectory3D> out;
  for (const auto& o : spec.objects) {
    if (o.points) {
      if (o.points->points_per_frame != points_per_object)
        throw DimensionError(fmt::format("object {} has {} points per frame; the package expects {}",
                                         o.entity.object_id, o.points->points_per_frame, points_per_object));
      out.push_back(*o.points);
      out.back().object_id = o.entity.object_id;
    } else {
      out.push_back(box_keyframes_to_trajectory(*o.box, o.keyframes, spec.num_frames, points_per_object,
                                                o.entity.object_id));
    }
  }
  return out;
}

ControlPackage build_control_package(const ControlSpec& spec, const PackageOptions& options) {
  validate_spec(spec);
  const auto image = geom::read_png(spec.resolve(spec.reference_image));
  const auto depth = geom::read_pfm(spec.resolve(spec.depth_map));
  return build_control_package(spec, image, depth, options);
}

ControlPackage build_control_package(const ControlSpec& spec, const geom::Image& reference,
                                     const geom::DepthMap& depth, const PackageOptions& options) {
  validate_spec(spec);
  const auto& k = spec.intrinsics;
  if (reference.width != k.width || reference.height != k.height)
    throw DimensionError(fmt::format("reference image is {}x{} but intrinsics are {}x{}", reference.width,
                                     reference.height, k.width, k.height));
  if (depth.width != k.width || depth.height != k.height)
    throw DimensionError(fmt::format("depth map is {}x{} but intrinsics are {}x{}", depth.width, depth.height,
                                     k.width, k.height));

  ControlPackage pkg;
  pkg.frames = spec.num_frames;
  pkg.width = k.width;
  pkg.height = k.height;
  pkg.points_per_object = options.points_per_object;
  pkg.downsampled_frames = downsampled_length(spec.num_frames, options.stride);
  pkg.camera = geom::canonicalize({spec.camera, k});

  for (const auto& pose : pkg.camera.poses) pkg.plucker.push_back(geom::plucker_map(k, pose));

  const auto cloud = geom::unproject_depth(depth, k, geom::CameraPose::identity(), reference);
  auto guidance =
      geom::render_trajectory(cloud, pkg.camera, reference, options.splat_radius, options.background);

  const auto trajectories = object_trajectories(spec, options.points_per_object);
  const int stride_n = pkg.downsampled_frames, np = options.points_per_object;
  pkg.traj_tokens.reserve(trajectories.size() * static_cast<std::size_t>(stride_n * np * 3));
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    pkg.boxes.push_back(
        fit_boxes(project_trajectory(t, pkg.camera), options.box_padding_px, k.width, k.height, t.object_id));
    pkg.object_ids.push_back(t.object_id);
    pkg.entity_indices.push_back(spec.objects[i].entity.label_index);
    const auto ds = temporal_downsample(t, options.stride);
    for (const auto& p : ds.points) {
      pkg.traj_tokens.push_back(static_cast<float>(p.x));
      pkg.traj_tokens.push_back(static_cast<float>(p.y));
      pkg.traj_tokens.push_back(static_cast<float>(p.z));
    }
  }
  pkg.guidance = overlay_boxes(guidance, pkg.boxes);
  return pkg;
}

void write_package(const ControlPackage& pkg, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "guidance");
  for (std::size_t j = 0; j < pkg.guidance.size(); ++j)
    geom::write_png(dir / "guidance" / fmt::format("{:03d}.png", j), pkg.guidance.frames[j]);

  {
    std::ofstream f(dir / "plucker.f32", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write {}", (dir / "plucker.f32").string()));
    for (const auto& p : pkg.plucker)
      f.write(reinterpret_cast<const char*>(p.data.data()), static_cast<std::streamsize>(p.data.size() * 4));
  }

  nlohmann::json j;
  j["frames"] = pkg.frames;
  j["width"] = pkg.width;
  j["height"] = pkg.height;
  j["downsampled_frames"] = pkg.downsampled_frames;
  j["points_per_object"] = pkg.points_per_object;
  j["plucker"] = {{"file", "plucker.f32"}, {"shape", {pkg.frames, 6, pkg.height, pkg.width}}};
  j["object_ids"] = pkg.object_ids;
  j["entity_indices"] = pkg.entity_indices;
  j["traj_tokens"] = {{"shape", {pkg.objects(), pkg.downsampled_frames, 3 * pkg.points_per_object}},
                      {"values", pkg.traj_tokens}};
  j["boxes"] = nlohmann::json::array();
  for (const auto& seq : pkg.boxes) {
    nlohmann::json b = nlohmann::json::array();
    for (std::size_t f = 0; f < seq.size(); ++f) {
      if (!seq.visible[f]) {
        b.push_back(nullptr);
        continue;
      }
      const auto& x = seq.boxes[f];
      b.push_back({x.x0, x.y0, x.x1, x.y1});
    }
    j["boxes"].push_back({{"object_id", seq.object_id}, {"per_frame", std::move(b)}});
  }
  std::ofstream(dir / "package.json", std::ios::trunc) << j.dump(2) << "\n";
}

}  // namespace mf::cond
