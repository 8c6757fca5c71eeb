#pragma once

#include <atomic>
#include <functional>
#include <vector>

#include "mf/conditioning/spec.hpp"
#include "mf/dit/data.hpp"
#include "mf/dit/flow.hpp"
#include "mf/dit/model.hpp"

MF_NUMERIC_BEGIN
namespace dit {

inline constexpr int kDefaultSamplerSteps = 20;

struct GenerateOptions {
  int steps = kDefaultSamplerSteps;
  bool vcm = true;
  bool omm = true;
  bool drop_guidance = false;
  // Called after each sampler step with (done, steps).
  std::function<void(int, int)> progress;
  // Checked before each sampler step; CancelledError once it reads true.
  const std::atomic<bool>* cancel = nullptr;
};

// Unit-Gaussian starting latent drawn from the seed.
std::vector<double> initial_noise(std::size_t size, std::uint64_t seed);

std::vector<double> sample_latent(const Model& model, const ClipTensors& clip, std::uint64_t seed,
                                  const GenerateOptions& options = {});

// Decoder applied to a latent [F, h, w, 3]; returns N frames at full extents.
std::vector<geom::Image> decode_latent(const Model& model, std::span<const double> latent);

std::vector<geom::Image> generate(const Model& model, const cond::ControlSpec& spec,
                                  const GenerateOptions& options = {});
std::vector<geom::Image> generate(const Model& model, const ClipTensors& clip, std::uint64_t seed,
                                  const GenerateOptions& options = {});

}  // namespace dit
MF_NUMERIC_END
