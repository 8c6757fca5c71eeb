#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mf/conditioning/motion.hpp"

namespace mf::cond {

inline constexpr const char* kSpecVersion = "mf-1";

// An object is driven either by explicit per-frame points or by a box plus
// keyframes.
struct ObjectSpec {
  EntityPrompt entity;
  std::optional<ObjectTrajectory3D> points;
  std::optional<Box3D> box;
  std::vector<Keyframe> keyframes;
  bool operator==(const ObjectSpec&) const = default;
};

struct ControlSpec {
  std::string version = kSpecVersion;
  std::filesystem::path reference_image;
  std::filesystem::path depth_map;
  geom::CameraIntrinsics intrinsics;
  int num_frames = 1;
  std::vector<geom::CameraPose> camera;
  std::vector<ObjectSpec> objects;
  std::string caption;
  std::uint64_t seed = 0;

  // Directory relative paths resolve against; not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }
  bool operator==(const ControlSpec& o) const;
};

// Throws SchemaError naming the offending field.
void validate_spec(const ControlSpec& spec);

std::string spec_to_json(const ControlSpec& spec);
ControlSpec spec_from_json(const std::string& text);
void write_spec(const ControlSpec& spec, const std::filesystem::path& path);
ControlSpec read_spec(const std::filesystem::path& path);

}  // namespace mf::cond
