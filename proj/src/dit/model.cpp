#include "mf/dit/model.hpp"

#include <cmath>
#include <string>

#include "mf/common/error.hpp"
#include "mf/numeric/ops.hpp"

MF_NUMERIC_BEGIN
namespace dit {

namespace {

using ops::add;
using ops::linear;

std::string key(const std::string& prefix, const char* name) { return prefix + "." + name; }

std::string block_name(const char* group, int i) { return std::string(group) + ".block" + std::to_string(i); }

// sin/cos pairs of pos at geometric frequencies into out[0..n).
void sincos(double pos, int n, Scalar* out) {
  const int half = n / 2;
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(100.0, -double(i) / std::max(1, half));
    out[2 * i] = static_cast<Scalar>(std::sin(pos * w));
    out[2 * i + 1] = static_cast<Scalar>(std::cos(pos * w));
  }
}

Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scale) {
  return ops::add_per_batch(add(x, ops::mul_per_batch(x, scale)), shift);
}

// x: [B, T, d] plus a [T, d] table shared across the batch.
Tensor add_table(const Tensor& x, const Tensor& table) {
  const auto b = x.dim(0), t = x.dim(1), d = x.dim(2);
  const auto flat = ops::reshape(x, {b, t * d});
  return ops::reshape(ops::add_rows(flat, ops::reshape(table, {t * d})), {b, t, d});
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("model config: " + m); };
  if (frames < 1 || stride < 1 || (frames - 1) % stride != 0) fail("frames - 1 must be a multiple of stride");
  if (patch < 2 || patch % 2 != 0) fail("patch must be even and >= 2");
  if (width <= 0 || height <= 0 || width % patch != 0 || height % patch != 0)
    fail("extents must be divisible by patch");
  if (dim <= 0 || heads <= 0 || dim % heads != 0) fail("dim must be divisible by heads");
  if (dim % 8 != 0) fail("dim must be a multiple of 8");
  if (blocks < 1 || vcm_blocks < 1 || vcm_blocks > blocks) fail("need 1 <= vcm_blocks <= blocks");
  if (label_vocab < 1 || text_vocab < 1 || points_per_object < 1) fail("vocabularies and N_p must be positive");
}

Tensor patchify(const Tensor& x, int patch) {
  if (x.rank() != 5) throw DimensionError("patchify expects [B, F, h, w, C], got " + shape_string(x.shape()));
  const auto b = x.dim(0), f = x.dim(1), h = x.dim(2), w = x.dim(3), c = x.dim(4);
  const auto p = static_cast<std::size_t>(patch);
  if (p == 0 || h % p || w % p)
    throw DimensionError("patchify: extents " + shape_string(x.shape()) + " not divisible by " + std::to_string(p));
  auto y = ops::reshape(x, {b, f, h / p, p, w / p, p, c});
  y = ops::permute(y, {0, 1, 2, 4, 3, 5, 6});
  return ops::reshape(y, {b, f * (h / p) * (w / p), p * p * c});
}

Tensor unpatchify(const Tensor& tokens, int frames, int height, int width, int channels, int patch) {
  const auto b = tokens.dim(0);
  const auto f = std::size_t(frames), h = std::size_t(height), w = std::size_t(width), c = std::size_t(channels),
             p = std::size_t(patch);
  if (p == 0 || h % p || w % p || tokens.rank() != 3 || tokens.dim(1) != f * (h / p) * (w / p) ||
      tokens.dim(2) != p * p * c)
    throw DimensionError("unpatchify: tokens " + shape_string(tokens.shape()) + " do not tile the target");
  auto y = ops::reshape(tokens, {b, f, h / p, w / p, p, p, c});
  y = ops::permute(y, {0, 1, 2, 4, 3, 5, 6});
  return ops::reshape(y, {b, f, h, w, c});
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            std::span<const std::size_t> key_counts, std::vector<Tensor>* maps) {
  const auto b = q.dim(0), tq = q.dim(1), d = q.dim(2), tk = k.dim(1);
  const auto h = std::size_t(heads), dh = d / h;
  if (k.dim(2) != d || v.dim(2) != d || k.dim(0) != b || v.dim(0) != b || v.dim(1) != tk)
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                         shape_string(v.shape()));
  auto split = [&](const Tensor& x, std::size_t t) {
    return ops::reshape(ops::permute(ops::reshape(x, {b, t, h, dh}), {0, 2, 1, 3}), {b * h, t, dh});
  };
  auto scores = ops::scale(ops::bmm_nt(split(q, tq), split(k, tk)), Scalar(1 / std::sqrt(double(dh))));
  Tensor probs;
  if (key_counts.empty()) {
    probs = ops::softmax(scores);
  } else {
    if (key_counts.size() != b) throw DimensionError("attention: key_counts size does not match batch");
    std::vector<std::size_t> groups;
    for (std::size_t i = 0; i < b; ++i) groups.insert(groups.end(), h, key_counts[i]);
    probs = ops::masked_softmax(scores, groups);
  }
  if (maps) maps->push_back(probs);
  auto out = ops::bmm(probs, split(v, tk));
  return ops::reshape(ops::permute(ops::reshape(out, {b, h, tq, dh}), {0, 2, 1, 3}), {b, tq, d});
}

Tensor timestep_features(std::span<const double> t, int dim) {
  Tensor out({t.size(), std::size_t(dim)});
  auto v = out.values();
  for (std::size_t i = 0; i < t.size(); ++i) sincos(t[i] * 1000.0 / 100.0, dim, &v[i * dim]);
  return out;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const auto d = std::size_t(config_.dim);
  const auto tok = std::size_t(config_.token_dim()), cam_tok = std::size_t(config_.token_dim(kPluckerChannels));
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out, bool zero = false) {
    store_.create(name + ".w", {in, out}, zero ? Init::kZeros : Init::kXavier, rng);
    store_.create(name + ".b", {out}, Init::kZeros, rng);
  };
  auto block_params = [&](const std::string& prefix, bool cross) {
    lin(key(prefix, "mod"), d, 6 * d, true);
    lin(key(prefix, "qkv"), d, 3 * d);
    lin(key(prefix, "proj"), d, d);
    if (cross) {
      lin(key(prefix, "xq"), d, d);
      lin(key(prefix, "xkv"), d, 2 * d);
      lin(key(prefix, "xproj"), d, d);
    }
    lin(key(prefix, "fc1"), d, 4 * d);
    lin(key(prefix, "fc2"), 4 * d, d);
  };

  lin("time.fc1", d, d);
  lin("time.fc2", d, d);
  store_.create("text.embed", {std::size_t(config_.text_vocab), d}, Init::kNormal, rng, Scalar(0.5));
  lin("ref.patch", tok, d);
  lin("base.patch", tok, d);
  for (int i = 0; i < config_.blocks; ++i) block_params(block_name("base", i), true);
  lin("base.final_mod", d, 2 * d, true);
  lin("base.out", d, tok, true);

  lin("vcm.in", 2 * tok, d);
  lin("vcm.cam", cam_tok, d);
  for (int i = 0; i < config_.vcm_blocks; ++i) {
    block_params(block_name("vcm", i), false);
    lin(key(block_name("vcm", i), "zero"), d, d, true);
  }

  lin("omm.proj", std::size_t(config_.object_token_dim()), d);
  store_.create("omm.label", {std::size_t(config_.label_vocab), d}, Init::kNormal, rng, Scalar(0.5));
  store_.create("omm.frame", {std::size_t(config_.latent_frames()), d}, Init::kNormal, rng, Scalar(0.5));
  for (int i = 0; i < config_.blocks; ++i) {
    const auto prefix = block_name("omm", i);
    lin(key(prefix, "q"), d, d);
    lin(key(prefix, "kv"), d, 2 * d);
    lin(key(prefix, "o"), d, d, true);
  }

  const auto n = std::size_t(config_.frames), f = std::size_t(config_.latent_frames());
  auto temporal = store_.create("decoder.temporal", {n, f}, Init::kZeros, rng);
  for (std::size_t j = 0; j < n; ++j) {
    const double pos = double(j) / config_.stride;
    const auto k0 = std::min(f - 1, std::size_t(pos));
    const double frac = pos - double(k0);
    temporal.values()[j * f + k0] += Scalar(1 - frac);
    if (frac > 0) temporal.values()[j * f + k0 + 1] += Scalar(frac);
  }
  auto mix = store_.create("decoder.mix.w", {3, 3}, Init::kZeros, rng);
  for (int c = 0; c < 3; ++c) mix.values()[c * 4] = Scalar(0.5);
  store_.create("decoder.mix.b", {3}, Init::kZeros, rng);
  for (auto& v : store_.get("decoder.mix.b").values()) v = Scalar(0.5);

  // Fixed positions: time, row and column sincos bands.
  const int dt = 2 * (config_.dim / 8), dy = 2 * ((config_.dim - dt) / 4), dx = config_.dim - dt - dy;
  const int gh = config_.grid_height(), gw = config_.grid_width();
  pos_video_ = Tensor({std::size_t(config_.tokens()), d});
  auto pv = pos_video_.values();
  for (int fi = 0, t = 0; fi < config_.latent_frames(); ++fi)
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x, ++t) {
        Scalar* row = &pv[std::size_t(t) * d];
        sincos(fi, dt, row);
        sincos(y, dy, row + dt);
        sincos(x, dx, row + dt + dy);
      }
  pos_ref_ = Tensor({std::size_t(gh * gw), d},
                    std::vector<Scalar>(pv.begin(), pv.begin() + std::ptrdiff_t(gh * gw) * std::ptrdiff_t(d)));
}

Tensor Model::time_embedding(std::span<const double> t) const {
  auto h = linear(timestep_features(t, config_.dim), p("time.fc1.w"), p("time.fc1.b"));
  return linear(ops::gelu(h), p("time.fc2.w"), p("time.fc2.b"));
}

Model::Context Model::text_reference_context(const Conditioning& c) const {
  const auto b = c.batch();
  const auto d = std::size_t(config_.dim);
  const auto grid = pos_ref_.dim(0);
  const auto& r = c.reference;
  if (!r.defined() || r.rank() != 4 || r.dim(0) != b)
    throw DimensionError("conditioning: reference must be [B, h, w, 3]");
  auto ref = ops::reshape(r, {b, 1, r.dim(1), r.dim(2), r.dim(3)});
  auto ref_tokens = add_table(linear(patchify(ref, config_.latent_patch()), p("ref.patch.w"), p("ref.patch.b")),
                              pos_ref_);
  if (ref_tokens.dim(1) != grid) throw DimensionError("conditioning: reference extents do not match the model");

  std::size_t longest = 0;
  for (const auto& ids : c.text) longest = std::max(longest, ids.size());
  Context ctx;
  for (const auto& ids : c.text) ctx.counts.push_back(grid + ids.size());
  if (longest == 0) {
    ctx.tokens = ops::layer_norm(ref_tokens);
    return ctx;
  }
  std::vector<int> flat;
  for (const auto& ids : c.text)
    for (std::size_t i = 0; i < longest; ++i) {
      const int id = i < ids.size() ? ids[i] : 0;
      if (id < 0 || id >= config_.text_vocab) throw DimensionError("text token out of vocabulary");
      flat.push_back(id);
    }
  Tensor pos({longest, d});
  for (std::size_t i = 0; i < longest; ++i) sincos(double(i), config_.dim, &pos.values()[i * d]);
  auto text = add_table(ops::reshape(ops::embedding(p("text.embed"), flat), {b, longest, d}), pos);
  ctx.tokens = ops::layer_norm(ops::concat({ref_tokens, text}, 1));
  return ctx;
}

Tensor Model::encode_objects(const Tensor& trajectories, std::span<const int> entities) const {
  if (trajectories.rank() != 3 || trajectories.dim(0) != entities.size() ||
      trajectories.dim(2) != std::size_t(config_.object_token_dim()))
    throw DimensionError("encode_objects: trajectories " + shape_string(trajectories.shape()) + " for " +
                         std::to_string(entities.size()) + " objects");
  const auto m = trajectories.dim(0), f = trajectories.dim(1);
  std::vector<int> labels;
  for (int e : entities) {
    if (e < 0 || e >= config_.label_vocab) throw DimensionError("label index out of vocabulary: " + std::to_string(e));
    labels.insert(labels.end(), f, e);
  }
  const auto d = std::size_t(config_.dim);
  if (m == 0) return Tensor(Shape{0, d});
  auto proj = linear(ops::reshape(trajectories, {m * f, trajectories.dim(2)}), p("omm.proj.w"), p("omm.proj.b"));
  return add(proj, ops::embedding(p("omm.label"), labels));
}

Model::Context Model::object_context(const Conditioning& c) const {
  Context ctx;
  const auto b = c.batch();
  if (c.entities.size() != b) throw DimensionError("conditioning: entities size does not match batch");
  std::size_t m_max = 0;
  for (const auto& e : c.entities) m_max = std::max(m_max, e.size());
  if (m_max == 0) return ctx;
  const auto& tr = c.trajectories;
  const auto f = std::size_t(config_.latent_frames()), d = std::size_t(config_.dim);
  if (!tr.defined() || tr.rank() != 4 || tr.dim(0) != b || tr.dim(1) != m_max || tr.dim(2) != f ||
      tr.dim(3) != std::size_t(config_.object_token_dim()))
    throw DimensionError("conditioning: trajectories must be [B, M_max, F, 3·N_p]");
  std::vector<int> labels, frames;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t m = 0; m < m_max; ++m) {
      const int e = m < c.entities[i].size() ? c.entities[i][m] : 0;
      if (e < 0 || e >= config_.label_vocab) throw DimensionError("label index out of vocabulary: " + std::to_string(e));
      for (std::size_t k = 0; k < f; ++k) {
        labels.push_back(e);
        frames.push_back(int(k));
      }
    }
    ctx.counts.push_back(c.entities[i].size() * f);
  }
  auto proj = linear(ops::reshape(tr, {b * m_max * f, tr.dim(3)}), p("omm.proj.w"), p("omm.proj.b"));
  auto tokens = add(add(proj, ops::embedding(p("omm.label"), labels)), ops::embedding(p("omm.frame"), frames));
  ctx.tokens = ops::reshape(tokens, {b, m_max * f, d});
  return ctx;
}

Tensor Model::block(const std::string& prefix, const Tensor& x_in, const Tensor& mod_input, const Context* cross,
                    const Context* objects, int index, std::vector<Tensor>* maps) const {
  const auto d = std::size_t(config_.dim);
  const int heads = config_.heads;
  auto mod = linear(mod_input, p(key(prefix, "mod.w")), p(key(prefix, "mod.b")));
  auto chunk = [&](int i) { return ops::slice_last(mod, std::size_t(i) * d, d); };

  Tensor x = x_in;
  {
    auto h = modulate(ops::layer_norm(x), chunk(0), chunk(1));
    auto qkv = linear(h, p(key(prefix, "qkv.w")), p(key(prefix, "qkv.b")));
    auto a = multi_head_attention(ops::slice_last(qkv, 0, d), ops::slice_last(qkv, d, d),
                                  ops::slice_last(qkv, 2 * d, d), heads, {}, maps);
    a = linear(a, p(key(prefix, "proj.w")), p(key(prefix, "proj.b")));
    x = add(x, ops::mul_per_batch(a, chunk(2)));
  }
  if (cross) {
    auto q = linear(ops::layer_norm(x), p(key(prefix, "xq.w")), p(key(prefix, "xq.b")));
    auto kv = linear(cross->tokens, p(key(prefix, "xkv.w")), p(key(prefix, "xkv.b")));
    auto a = multi_head_attention(q, ops::slice_last(kv, 0, d), ops::slice_last(kv, d, d), heads, cross->counts, maps);
    x = add(x, linear(a, p(key(prefix, "xproj.w")), p(key(prefix, "xproj.b"))));
  }
  if (objects && objects->tokens.defined()) {
    const auto o = block_name("omm", index);
    auto q = linear(ops::layer_norm(x), p(key(o, "q.w")), p(key(o, "q.b")));
    auto kv = linear(objects->tokens, p(key(o, "kv.w")), p(key(o, "kv.b")));
    auto a = multi_head_attention(q, ops::slice_last(kv, 0, d), ops::slice_last(kv, d, d), heads, objects->counts,
                                  maps);
    x = add(x, linear(a, p(key(o, "o.w")), p(key(o, "o.b"))));
  }
  {
    auto h = modulate(ops::layer_norm(x), chunk(3), chunk(4));
    h = ops::gelu(linear(h, p(key(prefix, "fc1.w")), p(key(prefix, "fc1.b"))));
    h = linear(h, p(key(prefix, "fc2.w")), p(key(prefix, "fc2.b")));
    x = add(x, ops::mul_per_batch(h, chunk(5)));
  }
  return x;
}

std::vector<Tensor> Model::vcm_residuals(const Tensor& z_t, const Conditioning& c, const Tensor& mod_input,
                                         bool drop_guidance) const {
  const int lp = config_.latent_patch();
  if (!c.guidance.defined() || !c.plucker.defined() || c.guidance.shape() != z_t.shape())
    throw DimensionError("conditioning: guidance must match the latent shape " + shape_string(z_t.shape()));
  const auto& g = drop_guidance ? Tensor::zeros(c.guidance.shape()) : c.guidance;
  auto in = ops::concat({patchify(g, lp), patchify(z_t, lp)}, 2);
  auto h = add(linear(in, p("vcm.in.w"), p("vcm.in.b")),
               linear(patchify(c.plucker, lp), p("vcm.cam.w"), p("vcm.cam.b")));
  h = add_table(h, pos_video_);
  std::vector<Tensor> out;
  for (int k = 0; k < config_.vcm_blocks; ++k) {
    const auto prefix = block_name("vcm", k);
    h = block(prefix, h, mod_input, nullptr, nullptr, k, nullptr);
    out.push_back(linear(h, p(key(prefix, "zero.w")), p(key(prefix, "zero.b"))));
  }
  return out;
}

Tensor Model::predict_clean(const Tensor& z_t, std::span<const double> t, const Conditioning& c,
                            const ForwardOptions& options) const {
  const auto b = z_t.rank() == 5 ? z_t.dim(0) : 0;
  if (z_t.rank() != 5 || z_t.dim(1) != std::size_t(config_.latent_frames()) ||
      z_t.dim(2) != std::size_t(config_.latent_height()) || z_t.dim(3) != std::size_t(config_.latent_width()) ||
      z_t.dim(4) != std::size_t(kLatentChannels))
    throw DimensionError("model input must be [B, F, h, w, 3] for this config, got " + shape_string(z_t.shape()));
  if (b == 0 || t.size() != b || c.batch() != b)
    throw DimensionError("batch sizes of z_t, t and conditioning disagree");
  const int lp = config_.latent_patch();
  const auto mod_input = ops::gelu(time_embedding(t));

  auto x = add_table(linear(patchify(z_t, lp), p("base.patch.w"), p("base.patch.b")), pos_video_);
  const auto cross = text_reference_context(c);
  Context objects;
  if (options.omm) objects = object_context(c);
  std::vector<Tensor> residuals;
  if (options.vcm) residuals = vcm_residuals(z_t, c, mod_input, options.drop_guidance);

  for (int i = 0; i < config_.blocks; ++i) {
    x = block(block_name("base", i), x, mod_input, &cross, options.omm ? &objects : nullptr, i,
              options.attention_maps);
    if (std::size_t(i) < residuals.size()) x = add(x, residuals[std::size_t(i)]);
  }
  const auto d = std::size_t(config_.dim);
  auto mod = linear(mod_input, p("base.final_mod.w"), p("base.final_mod.b"));
  auto h = modulate(ops::layer_norm(x), ops::slice_last(mod, 0, d), ops::slice_last(mod, d, d));
  auto out = linear(h, p("base.out.w"), p("base.out.b"));
  return unpatchify(out, config_.latent_frames(), config_.latent_height(), config_.latent_width(), kLatentChannels,
                    lp);
}

Tensor Model::velocity(const Tensor& z_t, std::span<const double> t, const Conditioning& c,
                       const ForwardOptions& options) const {
  auto x0 = predict_clean(z_t, t, c, options);
  std::vector<Scalar> inv;
  for (double ti : t) inv.push_back(Scalar(1 / std::max(ti, kMinVelocityT)));
  return ops::scale_per_batch(ops::sub(z_t, x0), inv);
}

Tensor Model::decode_pooled(const Tensor& latent) const {
  const auto f = std::size_t(config_.latent_frames()), n = std::size_t(config_.frames);
  if (latent.rank() < 2 || latent.dim(0) != f || latent.shape().back() != 3)
    throw DimensionError("decode: latent must be [F, ..., 3], got " + shape_string(latent.shape()));
  const auto rest = latent.numel() / f;
  auto mixed = ops::matmul(p("decoder.temporal"), ops::reshape(latent, {f, rest}));
  auto colored = linear(ops::reshape(mixed, {n * rest / 3, 3}), p("decoder.mix.w"), p("decoder.mix.b"));
  Shape shape = latent.shape();
  shape[0] = n;
  return ops::reshape(colored, shape);
}

void Model::init_vcm_from_base() {
  static const char* kShared[] = {"mod.w", "mod.b", "qkv.w", "qkv.b", "proj.w", "proj.b",
                                  "fc1.w", "fc1.b", "fc2.w", "fc2.b"};
  for (int k = 0; k < config_.vcm_blocks; ++k)
    for (const char* name : kShared) {
      auto src = store_.get(key(block_name("base", k), name)).values();
      auto dst = store_.get(key(block_name("vcm", k), name)).values();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  // The latent half of the VCM input projection starts as the base patch embedding.
  const auto tok = std::size_t(config_.token_dim()), d = std::size_t(config_.dim);
  auto src = store_.get("base.patch.w").values();
  auto dst = store_.get("vcm.in.w").values();
  std::copy(src.begin(), src.end(), dst.begin() + std::ptrdiff_t(tok * d));
  auto sb = store_.get("base.patch.b").values();
  auto db = store_.get("vcm.in.b").values();
  std::copy(sb.begin(), sb.end(), db.begin());
}

bool is_decoder_parameter(const std::string& name) { return name.starts_with("decoder."); }

bool is_stage0_parameter(const std::string& name) {
  return name.starts_with("base.") || name.starts_with("time.") || name.starts_with("text.") ||
         name.starts_with("ref.") || is_decoder_parameter(name);
}

bool is_stage1_parameter(const std::string& name) { return name.starts_with("vcm."); }

bool is_stage2_parameter(const std::string& name) { return name.starts_with("omm."); }

}  // namespace dit
MF_NUMERIC_END
