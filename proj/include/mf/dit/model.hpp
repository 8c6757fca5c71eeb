#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mf/numeric/parameters.hpp"
#include "mf/numeric/tensor.hpp"

MF_NUMERIC_BEGIN
namespace dit {

// Extents are in pixels. The latent halves them, so the latent patch is patch / 2.
struct ModelConfig {
  int frames = 17;
  int width = 64;
  int height = 64;
  int patch = 8;
  int stride = 4;
  int dim = 64;
  int heads = 4;
  int blocks = 4;
  int vcm_blocks = 2;
  int label_vocab = 5;
  int text_vocab = 64;
  int points_per_object = 9;
  std::uint64_t seed = 0;

  void validate() const;
  int latent_frames() const { return (frames - 1) / stride + 1; }
  int latent_width() const { return width / 2; }
  int latent_height() const { return height / 2; }
  int latent_patch() const { return patch / 2; }
  int grid_width() const { return latent_width() / latent_patch(); }
  int grid_height() const { return latent_height() / latent_patch(); }
  int tokens() const { return latent_frames() * grid_width() * grid_height(); }
  int token_dim(int channels = 3) const { return latent_patch() * latent_patch() * channels; }
  int object_token_dim() const { return 3 * points_per_object; }
};

inline constexpr int kLatentChannels = 3;
inline constexpr int kPluckerChannels = 6;
// Lower clamp on t when turning a clean-sample estimate into a velocity.
inline constexpr double kMinVelocityT = 0.05;

// Batched conditioning inputs in latent layout. Latent video tensors are
// [B, F, h, w, C]; the reference frame is [B, h, w, 3].
struct Conditioning {
  Tensor guidance;
  Tensor plucker;
  Tensor reference;
  std::vector<std::vector<int>> text;
  // [B, M_max, F, 3·N_p]; undefined or M_max = 0 when no sample has objects.
  Tensor trajectories;
  // Label index per object; entities[b].size() is sample b's object count.
  std::vector<std::vector<int>> entities;

  std::size_t batch() const { return text.size(); }
};

struct ForwardOptions {
  bool vcm = true;
  bool omm = true;
  // Replaces the guidance input with zeros (the "w/o c_pcd" setting).
  bool drop_guidance = false;
  // When set, every attention probability map is appended here.
  std::vector<Tensor>* attention_maps = nullptr;
};

// x: [B, F, h, w, C] -> [B, F·(h/p)·(w/p), p·p·C], frame-major then row-major.
Tensor patchify(const Tensor& x, int patch);
Tensor unpatchify(const Tensor& tokens, int frames, int height, int width, int channels, int patch);

// Multi-head attention. q: [B, Tq, d]; k, v: [B, Tk, d]. When key_counts is
// non-empty only the first key_counts[b] keys of sample b participate.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            std::span<const std::size_t> key_counts = {},
                            std::vector<Tensor>* maps = nullptr);

// Sinusoidal features of t·1000, [B, dim].
Tensor timestep_features(std::span<const double> t, int dim);

class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  // Clean-sample estimate in latent layout [B, F, h, w, 3].
  Tensor predict_clean(const Tensor& z_t, std::span<const double> t, const Conditioning& c,
                       const ForwardOptions& options = {}) const;
  // v = (z_t - x̂0) / max(t, kMinVelocityT).
  Tensor velocity(const Tensor& z_t, std::span<const double> t, const Conditioning& c,
                  const ForwardOptions& options = {}) const;

  // Object tokens: trajectories [M, F, 3·N_p] -> [M·F, d].
  Tensor encode_objects(const Tensor& trajectories, std::span<const int> entities) const;

  // One residual per VCM block for the given (already embedded) inputs, used
  // by tests; forward() consumes them internally.
  std::vector<Tensor> vcm_residuals(const Tensor& z_t, const Conditioning& c, const Tensor& modulation_input,
                                    bool drop_guidance) const;

  // Linear decoder from latent [F, h, w, 3] to pooled full-rate frames
  // [N, h, w, 3]; spatial upsampling is a fixed nearest-neighbor step.
  Tensor decode_pooled(const Tensor& latent) const;

  // Copies base block weights into the VCM blocks (the ControlNet trainable copy).
  void init_vcm_from_base();

 private:
  struct Context {
    Tensor tokens;
    std::vector<std::size_t> counts;
  };

  Tensor time_embedding(std::span<const double> t) const;
  Context text_reference_context(const Conditioning& c) const;
  Context object_context(const Conditioning& c) const;
  Tensor block(const std::string& prefix, const Tensor& x, const Tensor& mod_input, const Context* cross,
               const Context* objects, int index, std::vector<Tensor>* maps) const;
  Tensor p(const std::string& name) const { return store_.get(name); }

  ModelConfig config_;
  ParameterStore store_;
  Tensor pos_video_;  // [T, d]
  Tensor pos_ref_;    // [grid, d]
};

// Parameter-name predicates for the training stages.
bool is_decoder_parameter(const std::string& name);
bool is_stage0_parameter(const std::string& name);
bool is_stage1_parameter(const std::string& name);
bool is_stage2_parameter(const std::string& name);

}  // namespace dit
MF_NUMERIC_END
