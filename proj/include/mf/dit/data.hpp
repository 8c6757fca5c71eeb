#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mf/conditioning/spec.hpp"
#include "mf/dit/model.hpp"
#include "mf/geometry/camera.hpp"
#include "mf/geometry/image.hpp"

MF_NUMERIC_BEGIN
namespace dit {

// Caption words known to the toy text encoder; id 0 is padding, 1 is unknown.
const std::vector<std::string>& text_vocabulary();
std::vector<int> tokenize(const std::string& caption);

// Fixed pixel encoder: frames 0, stride, 2·stride, ... averaged over 2×2
// blocks and mapped to [-1, 1]. Layout [F, h, w, 3].
std::vector<float> encode_pixels(const std::vector<geom::Image>& video, int stride);
// All frames pooled 2×2, kept in [0, 1]. Layout [N, h, w, 3].
std::vector<float> pool_frames(const std::vector<geom::Image>& video);
// Plücker fields reduced like encode_pixels. Layout [F, h, w, 6].
std::vector<float> encode_plucker(const std::vector<geom::PluckerFrame>& plucker, int stride);
// Nearest-neighbor 2× upsampling of pooled frames, clamped to [0, 1].
std::vector<geom::Image> upsample_frames(std::span<const float> pooled, int frames, int height, int width);

// Everything the model sees for one clip, in latent layout.
struct ClipTensors {
  std::string id;
  std::vector<float> latent;     // target video, empty for specs without video
  std::vector<float> pooled;     // decoder target, empty likewise
  std::vector<float> guidance;
  std::vector<float> plucker;
  std::vector<float> reference;  // [h, w, 3]
  std::vector<int> text;
  std::vector<float> trajectories;  // [M, F, 3·N_p]
  std::vector<int> entities;
};

ClipTensors prepare_clip(const ModelConfig& config, const cond::ControlSpec& spec, const geom::Image& reference,
                         const geom::DepthMap& depth, const std::vector<geom::Image>* video,
                         const std::string& id = "");
// Reads reference and depth through the spec's paths.
ClipTensors prepare_clip(const ModelConfig& config, const cond::ControlSpec& spec,
                         const std::vector<geom::Image>* video = nullptr, const std::string& id = "");

// Loads every clip of a synth dataset directory (index.json order).
std::vector<ClipTensors> load_dataset(const ModelConfig& config, const std::filesystem::path& dir);

struct Batch {
  Tensor z0;  // [B, F, h, w, 3]
  Tensor pooled;  // [N, B, h, w, 3], only when every clip has video
  Conditioning conditioning;
};

// drop_guidance[b] zeroes sample b's guidance input.
Batch make_batch(const ModelConfig& config, const std::vector<const ClipTensors*>& clips,
                 const std::vector<bool>& drop_guidance = {});

}  // namespace dit
MF_NUMERIC_END
