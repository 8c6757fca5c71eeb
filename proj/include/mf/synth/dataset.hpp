#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mf/conditioning/spec.hpp"
#include "mf/synth/scene.hpp"

namespace mf::synth {

struct DatasetOptions {
  SceneConfig base;  // extents, frame count, focal, depth range
  std::vector<CameraMotion> camera_motions{CameraMotion::kStatic, CameraMotion::kPan, CameraMotion::kDolly,
                                           CameraMotion::kOrbit, CameraMotion::kRandomSmooth};
  std::vector<ObjectMotion> object_motions{ObjectMotion::kStatic, ObjectMotion::kLinear, ObjectMotion::kCircular,
                                           ObjectMotion::kRandomSmooth};
  // Relative weights for M = 0..3.
  std::vector<double> object_count_weights{1, 4, 3, 2};
};

struct ClipEntry {
  std::string id;
  SceneConfig config;
};

struct DatasetIndex {
  std::uint64_t base_seed = 0;
  std::vector<ClipEntry> clips;
};

std::string clip_id(std::size_t index);
SceneConfig clip_config(const DatasetOptions& options, std::uint64_t base_seed, std::size_t index);

// Writes clip_XXXXX/{frames/NNN.png, depth0.pfm, annotation.json, caption.txt}
// and index.json. Clips whose annotation.json already exists are kept as is.
DatasetIndex make_dataset(std::size_t count, std::uint64_t base_seed, const std::filesystem::path& out_dir,
                          const DatasetOptions& options = {},
                          const std::function<void(std::size_t done, std::size_t total)>& progress = {});

DatasetIndex read_index(const std::filesystem::path& path);
std::vector<geom::Image> read_frames(const std::filesystem::path& frames_dir);
void write_frames(const std::vector<geom::Image>& frames, const std::filesystem::path& frames_dir);

// Control spec commanding exactly the annotated camera path and object points.
cond::ControlSpec spec_from_annotation(const SceneAnnotation& a, const std::filesystem::path& clip_dir);

}  // namespace mf::synth
