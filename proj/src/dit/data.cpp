#include "mf/dit/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <sstream>

#include "mf/common/error.hpp"
#include "mf/conditioning/package.hpp"
#include "mf/geometry/io.hpp"
#include "mf/synth/dataset.hpp"
#include "mf/synth/manifest.hpp"

MF_NUMERIC_BEGIN
namespace dit {

const std::vector<std::string>& text_vocabulary() {
  static const std::vector<std::string> words = {
      "<pad>", "<unk>",   "a",      "an",      "the",     "and",    "while",   "empty",    "room",
      "object", "red",    "green",  "blue",    "yellow",  "cube",   "moves",   "right",    "left",
      "away",  "closer",  "stays",  "still",   "circles", "wanders", "camera", "is",       "static",
      "pans",  "dollies", "forward", "backward", "orbits", "drifts", "up",     "down"};
  return words;
}

std::vector<int> tokenize(const std::string& caption) {
  const auto& vocab = text_vocabulary();
  std::vector<int> ids;
  std::string word;
  std::istringstream in(caption);
  while (in >> word) {
    std::string clean;
    for (char ch : word)
      if (std::isalnum(static_cast<unsigned char>(ch))) clean += char(std::tolower(static_cast<unsigned char>(ch)));
    if (clean.empty()) continue;
    const auto it = std::find(vocab.begin(), vocab.end(), clean);
    ids.push_back(it == vocab.end() ? 1 : int(it - vocab.begin()));
  }
  return ids;
}

namespace {

void check_video(const std::vector<geom::Image>& video) {
  if (video.empty()) throw DimensionError("video has no frames");
  for (const auto& f : video)
    if (f.width != video[0].width || f.height != video[0].height || f.width % 2 || f.height % 2)
      throw DimensionError("video frames must share even extents");
}

void pool_into(const geom::Image& img, float* out, bool signed_range) {
  const int h = img.height / 2, w = img.width / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto a = img.at(2 * x, 2 * y), b = img.at(2 * x + 1, 2 * y), c = img.at(2 * x, 2 * y + 1),
                 d = img.at(2 * x + 1, 2 * y + 1);
      const float px[3] = {(a.r + b.r + c.r + d.r) / 4, (a.g + b.g + c.g + d.g) / 4, (a.b + b.b + c.b + d.b) / 4};
      for (int ch = 0; ch < 3; ++ch) *out++ = signed_range ? 2 * px[ch] - 1 : px[ch];
    }
}

}  // namespace

std::vector<float> encode_pixels(const std::vector<geom::Image>& video, int stride) {
  check_video(video);
  if (stride < 1 || (video.size() - 1) % std::size_t(stride) != 0)
    throw DimensionError(fmt::format("encode: {} frames is not 1 + a multiple of stride {}", video.size(), stride));
  const std::size_t per = std::size_t(video[0].width / 2) * (video[0].height / 2) * 3;
  std::vector<float> out((video.size() - 1) / stride * per + per);
  for (std::size_t j = 0, k = 0; j < video.size(); j += std::size_t(stride), ++k)
    pool_into(video[j], &out[k * per], true);
  return out;
}

std::vector<float> pool_frames(const std::vector<geom::Image>& video) {
  check_video(video);
  const std::size_t per = std::size_t(video[0].width / 2) * (video[0].height / 2) * 3;
  std::vector<float> out(video.size() * per);
  for (std::size_t j = 0; j < video.size(); ++j) pool_into(video[j], &out[j * per], false);
  return out;
}

std::vector<float> encode_plucker(const std::vector<geom::PluckerFrame>& plucker, int stride) {
  if (plucker.empty() || stride < 1 || (plucker.size() - 1) % std::size_t(stride) != 0)
    throw DimensionError("encode_plucker: frame count is not 1 + a multiple of stride");
  const int h = plucker[0].height / 2, w = plucker[0].width / 2;
  std::vector<float> out;
  out.reserve((plucker.size() - 1) / stride * std::size_t(h * w * 6) + std::size_t(h * w * 6));
  for (std::size_t j = 0; j < plucker.size(); j += std::size_t(stride)) {
    const auto& f = plucker[j];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 6; ++c)
          out.push_back((f.at(c, 2 * x, 2 * y) + f.at(c, 2 * x + 1, 2 * y) + f.at(c, 2 * x, 2 * y + 1) +
                         f.at(c, 2 * x + 1, 2 * y + 1)) /
                        4);
  }
  return out;
}

std::vector<geom::Image> upsample_frames(std::span<const float> pooled, int frames, int height, int width) {
  if (pooled.size() != std::size_t(frames) * height * width * 3)
    throw DimensionError("upsample_frames: buffer does not match extents");
  std::vector<geom::Image> out;
  for (int j = 0; j < frames; ++j) {
    geom::Image img(2 * width, 2 * height);
    for (int y = 0; y < 2 * height; ++y)
      for (int x = 0; x < 2 * width; ++x) {
        const float* p = &pooled[((std::size_t(j) * height + y / 2) * width + x / 2) * 3];
        img.set(x, y, {std::clamp(p[0], 0.0f, 1.0f), std::clamp(p[1], 0.0f, 1.0f), std::clamp(p[2], 0.0f, 1.0f)});
      }
    out.push_back(std::move(img));
  }
  return out;
}

ClipTensors prepare_clip(const ModelConfig& config, const cond::ControlSpec& spec, const geom::Image& reference,
                         const geom::DepthMap& depth, const std::vector<geom::Image>* video, const std::string& id) {
  if (spec.num_frames != config.frames || spec.intrinsics.width != config.width ||
      spec.intrinsics.height != config.height)
    throw DimensionError(fmt::format("spec is {} frames at {}x{}, model expects {} at {}x{}", spec.num_frames,
                                     spec.intrinsics.width, spec.intrinsics.height, config.frames, config.width,
                                     config.height));
  cond::PackageOptions opts;
  opts.points_per_object = config.points_per_object;
  opts.stride = config.stride;
  const auto pkg = cond::build_control_package(spec, reference, depth, opts);

  ClipTensors c;
  c.id = id;
  if (video) {
    if (video->size() != std::size_t(config.frames)) throw DimensionError("video frame count does not match spec");
    c.latent = encode_pixels(*video, config.stride);
    c.pooled = pool_frames(*video);
  }
  c.guidance = encode_pixels(pkg.guidance.frames, config.stride);
  c.plucker = encode_plucker(pkg.plucker, config.stride);
  c.reference = encode_pixels({reference}, 1);
  c.text = tokenize(spec.caption);
  c.trajectories = pkg.traj_tokens;
  c.entities = pkg.entity_indices;
  for (int e : c.entities)
    if (e < 0 || e >= config.label_vocab) throw DimensionError(fmt::format("label index {} out of vocabulary", e));
  return c;
}

ClipTensors prepare_clip(const ModelConfig& config, const cond::ControlSpec& spec,
                         const std::vector<geom::Image>* video, const std::string& id) {
  const auto reference = geom::read_png(spec.resolve(spec.reference_image));
  const auto depth = geom::read_pfm(spec.resolve(spec.depth_map));
  return prepare_clip(config, spec, reference, depth, video, id);
}

std::vector<ClipTensors> load_dataset(const ModelConfig& config, const std::filesystem::path& dir) {
  const auto index = synth::read_index(dir / "index.json");
  if (index.clips.empty()) throw ContractError("dataset is empty: " + dir.string());
  std::vector<ClipTensors> out;
  for (const auto& entry : index.clips) {
    const auto clip_dir = dir / entry.id;
    const auto ann = synth::read_manifest(clip_dir / "annotation.json");
    const auto spec = synth::spec_from_annotation(ann, clip_dir);
    const auto video = synth::read_frames(clip_dir / "frames");
    out.push_back(prepare_clip(config, spec, &video, entry.id));
  }
  return out;
}

Batch make_batch(const ModelConfig& config, const std::vector<const ClipTensors*>& clips,
                 const std::vector<bool>& drop_guidance) {
  if (clips.empty()) throw ContractError("empty batch");
  const auto b = clips.size();
  const auto f = std::size_t(config.latent_frames()), h = std::size_t(config.latent_height()),
             w = std::size_t(config.latent_width()), n = std::size_t(config.frames);
  const auto lat = f * h * w * 3, pl = f * h * w * 6, ref = h * w * 3, pooled = n * h * w * 3;
  const auto tok = f * std::size_t(config.object_token_dim());
  std::size_t m_max = 0;
  bool have_video = true;
  for (const auto* c : clips) {
    m_max = std::max(m_max, c->entities.size());
    have_video = have_video && c->latent.size() == lat;
    if (c->guidance.size() != lat || c->plucker.size() != pl || c->reference.size() != ref ||
        c->trajectories.size() != c->entities.size() * tok)
      throw DimensionError("clip tensors do not match the model config: " + c->id);
  }

  std::vector<Scalar> z0, guid, pluck, refs, traj(b * m_max * tok, Scalar(0)), pool(have_video ? b * pooled : 0);
  Batch out;
  for (std::size_t i = 0; i < b; ++i) {
    const auto* c = clips[i];
    if (have_video) {
      z0.insert(z0.end(), c->latent.begin(), c->latent.end());
      for (std::size_t j = 0; j < n; ++j)
        std::copy_n(c->pooled.begin() + std::ptrdiff_t(j * h * w * 3), h * w * 3,
                    pool.begin() + std::ptrdiff_t((j * b + i) * h * w * 3));
    }
    if (i < drop_guidance.size() && drop_guidance[i])
      guid.insert(guid.end(), lat, Scalar(0));
    else
      guid.insert(guid.end(), c->guidance.begin(), c->guidance.end());
    pluck.insert(pluck.end(), c->plucker.begin(), c->plucker.end());
    refs.insert(refs.end(), c->reference.begin(), c->reference.end());
    std::copy(c->trajectories.begin(), c->trajectories.end(), traj.begin() + std::ptrdiff_t(i * m_max * tok));
    out.conditioning.text.push_back(c->text);
    out.conditioning.entities.push_back(c->entities);
  }
  if (have_video) {
    out.z0 = Tensor({b, f, h, w, 3}, std::move(z0));
    out.pooled = Tensor({n, b, h, w, 3}, std::move(pool));
  }
  out.conditioning.guidance = Tensor({b, f, h, w, 3}, std::move(guid));
  out.conditioning.plucker = Tensor({b, f, h, w, 6}, std::move(pluck));
  out.conditioning.reference = Tensor({b, h, w, 3}, std::move(refs));
  out.conditioning.trajectories = Tensor({b, m_max, f, std::size_t(config.object_token_dim())}, std::move(traj));
  return out;
}

}  // namespace dit
MF_NUMERIC_END
