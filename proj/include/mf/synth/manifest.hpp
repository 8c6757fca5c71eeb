#pragma once

#include <filesystem>
#include <string>

#include "mf/synth/scene.hpp"

namespace mf::synth {

inline constexpr const char* kManifestVersion = "rc-1";

std::string annotation_to_json(const SceneAnnotation& a);
SceneAnnotation annotation_from_json(const std::string& text);
void write_manifest(const SceneAnnotation& a, const std::filesystem::path& path);
SceneAnnotation read_manifest(const std::filesystem::path& path);

// Row-major mask as alternating run lengths, starting with a run of zeros.
std::vector<int> mask_to_runs(const geom::Mask& mask);
geom::Mask mask_from_runs(const std::vector<int>& runs, int width, int height);

}  // namespace mf::synth
