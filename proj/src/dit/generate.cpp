#include "mf/dit/generate.hpp"

#include <algorithm>
#include <random>

#include "mf/common/error.hpp"

MF_NUMERIC_BEGIN
namespace dit {

std::vector<double> initial_noise(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(size);
  for (auto& v : z) v = normal(rng);
  return z;
}

std::vector<double> sample_latent(const Model& model, const ClipTensors& clip, std::uint64_t seed,
                                  const GenerateOptions& options) {
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const auto batch = make_batch(cfg, {&clip});
  const Shape shape{1, std::size_t(cfg.latent_frames()), std::size_t(cfg.latent_height()),
                    std::size_t(cfg.latent_width()), std::size_t(kLatentChannels)};
  ForwardOptions fo;
  fo.vcm = options.vcm;
  fo.omm = options.omm;
  fo.drop_guidance = options.drop_guidance;
  int done = 0;
  const VelocityField field = [&](std::span<const double> z, double t, std::span<double> v) {
    if (options.cancel && options.cancel->load()) throw CancelledError("generation cancelled");
    const Tensor zt(shape, std::vector<Scalar>(z.begin(), z.end()));
    const double ts[1] = {t};
    const auto out = model.velocity(zt, ts, batch.conditioning, fo);
    std::ranges::copy(out.values(), v.begin());
    if (options.progress) options.progress(++done, options.steps);
  };
  return euler_sample(initial_noise(shape_numel(shape), seed), options.steps, field);
}

std::vector<geom::Image> decode_latent(const Model& model, std::span<const double> latent) {
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const auto h = std::size_t(cfg.latent_height()), w = std::size_t(cfg.latent_width());
  const Shape shape{std::size_t(cfg.latent_frames()), h, w, 3};
  if (latent.size() != shape_numel(shape)) throw DimensionError("decode: latent size does not match the model");
  const auto pooled = model.decode_pooled(Tensor(shape, std::vector<Scalar>(latent.begin(), latent.end())));
  const auto v = pooled.values();
  return upsample_frames(std::vector<float>(v.begin(), v.end()), cfg.frames, int(h), int(w));
}

std::vector<geom::Image> generate(const Model& model, const ClipTensors& clip, std::uint64_t seed,
                                  const GenerateOptions& options) {
  return decode_latent(model, sample_latent(model, clip, seed, options));
}

std::vector<geom::Image> generate(const Model& model, const cond::ControlSpec& spec, const GenerateOptions& options) {
  cond::validate_spec(spec);
  return generate(model, prepare_clip(model.config(), spec), spec.seed, options);
}

}  // namespace dit
MF_NUMERIC_END
