#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dit_fixtures.hpp"
#include "mf/common/error.hpp"
#include "mf/dit/generate.hpp"
#include "mf/dit/train.hpp"
#include "mf/numeric/ops.hpp"
#include "mf/numeric/optimizer.hpp"
#include "mf/synth/dataset.hpp"

using namespace mf;
using namespace mf::dit;
namespace fs = std::filesystem;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.values(), y = b.values();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(Scalar)) == 0;
}

std::set<std::string> names_with_gradient(const Model& model) {
  std::set<std::string> out;
  for (const auto& [name, p] : model.parameters().entries()) {
    if (!p.has_grad()) continue;
    for (auto g : p.grad())
      if (g != 0) {
        out.insert(name);
        break;
      }
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// A 5-frame 16x16 synthetic dataset matching tiny_config.
std::vector<ClipTensors> tiny_dataset(const fs::path& dir, std::size_t count) {
  synth::DatasetOptions opts;
  opts.base.num_frames = 5;
  opts.base.width = 16;
  opts.base.height = 16;
  opts.base.focal_px = 18;
  opts.object_count_weights = {0, 1, 0, 0};
  synth::make_dataset(count, 3, dir, opts);
  return load_dataset(testing::tiny_config(), dir);
}

}  // namespace

TEST_CASE("sample_timestep") {
  std::mt19937_64 a(5), b(5);
  CHECK(sample_timestep(a) == sample_timestep(b));
  std::mt19937_64 rng(1);
  double total = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double t = sample_timestep(rng);
    REQUIRE(t > 0);
    REQUIRE(t < 1);
    total += t;
  }
  CHECK(std::abs(total / n - 0.5) <= 0.01);
}

TEST_CASE("flow_interpolate") {
  const std::vector<float> z0{0.25f, -1.5f, 3.0f}, z1{-0.7f, 2.0f, 0.1f};
  const auto at0 = flow_interpolate<float>(z0, z1, 0.0);
  const auto at1 = flow_interpolate<float>(z0, z1, 1.0);
  const auto mid = flow_interpolate<float>(z0, z1, 0.5);
  CHECK(at0.z_t == z0);
  CHECK(at1.z_t == z1);
  for (std::size_t i = 0; i < z0.size(); ++i) {
    CHECK(mid.z_t[i] == doctest::Approx((z0[i] + z1[i]) / 2));
    CHECK(at0.v_t[i] == z1[i] - z0[i]);
  }
  CHECK(kNoiseAtTOne);
  CHECK_THROWS_AS(flow_interpolate<float>(z0, std::vector<float>{1.0f}, 0.5), DimensionError);
}

TEST_CASE("patchify") {
  std::mt19937_64 rng(2);
  const auto x = Tensor::randn({1, 5, 64, 64, 3}, rng);
  const auto tokens = patchify(x, 8);
  CHECK(tokens.shape() == Shape{1, 5 * 8 * 8, 8 * 8 * 3});
  CHECK(bitwise_equal(unpatchify(tokens, 5, 64, 64, 3, 8), x));
  const auto px = patchify(x, 1);
  CHECK(px.shape() == Shape{1, 5 * 64 * 64, 3});
  CHECK(bitwise_equal(px, ops::reshape(x, {1, 5 * 64 * 64, 3})));
  // Token 1 of frame 0 is the second patch along x.
  CHECK(tokens.values()[std::size_t(8 * 8 * 3)] == x.values()[8 * 3]);
  CHECK_THROWS_AS(patchify(x, 7), DimensionError);
  CHECK_THROWS_AS(unpatchify(tokens, 5, 64, 64, 3, 4), DimensionError);
}

TEST_CASE("pixel encoder") {
  std::vector<geom::Image> video(17, geom::Image(64, 64, {0.25f, 0.5f, 0.75f}));
  const auto lat = encode_pixels(video, 4);
  CHECK(lat.size() == std::size_t(5 * 32 * 32 * 3));
  for (std::size_t i = 0; i < lat.size(); i += 3) {
    REQUIRE(lat[i] == -0.5f);
    REQUIRE(lat[i + 1] == 0.0f);
    REQUIRE(lat[i + 2] == 0.5f);
  }
  video[3].set(1, 1, {1, 0, 0});
  video[4].set(5, 7, {1, 0, 0});
  CHECK(encode_pixels(video, 4) == encode_pixels(video, 4));
  CHECK(encode_pixels(video, 4) != lat);  // frame 4 is selected
  video[4].set(5, 7, {0.25f, 0.5f, 0.75f});
  CHECK(encode_pixels(video, 4) == lat);  // frame 3 is not
  video.pop_back();
  CHECK_THROWS_AS(encode_pixels(video, 4), DimensionError);
}

TEST_CASE("decoder starts as the inverse of the encoder on keyframes") {
  Model model(ModelConfig{});
  std::mt19937_64 rng(3);
  std::vector<geom::Image> video(17, geom::Image(64, 64));
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& f : video)
    for (int y = 0; y < 64; y += 2)
      for (int x = 0; x < 64; x += 2) {
        const geom::Rgb c{u(rng), u(rng), u(rng)};
        for (int k = 0; k < 4; ++k) f.set(x + k % 2, y + k / 2, c);
      }
  const auto lat = encode_pixels(video, 4);
  const auto out = decode_latent(model, std::vector<double>(lat.begin(), lat.end()));
  REQUIRE(out.size() == 17);
  for (int j = 0; j < 17; j += 4)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) REQUIRE(std::abs(out[j].at(x, y).g - video[j].at(x, y).g) < 1e-5);
}

TEST_CASE("omm_encode") {
  Model model(ModelConfig{});
  const int f = model.config().latent_frames();
  const auto empty = model.encode_objects(Tensor(Shape{0, std::size_t(f), 27}), {});
  CHECK(empty.shape() == Shape{0, 64});

  const std::vector<int> labels{3, 1};
  const auto tokens = model.encode_objects(Tensor(Shape{2, std::size_t(f), 27}), labels);
  CHECK(tokens.shape() == Shape{10, 64});
  const auto table = model.parameters().get("omm.label").values();
  const auto bias = model.parameters().get("omm.proj.b").values();
  for (std::size_t row = 0; row < 10; ++row)
    for (std::size_t c = 0; c < 64; ++c)
      REQUIRE(tokens.values()[row * 64 + c] == table[std::size_t(labels[row / 5]) * 64 + c] + bias[c]);
  CHECK_THROWS_AS(model.encode_objects(Tensor(Shape{1, std::size_t(f), 27}), std::vector<int>{5}), DimensionError);
}

TEST_CASE("zero-init neutrality") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model model(testing::tiny_config(seed));
    std::mt19937_64 rng(seed + 100);
    const auto c = testing::random_conditioning(model.config(), {1, 2, 0}, rng);
    const auto z = testing::latent_shaped(model.config(), 3, rng);
    const std::vector<double> t{0.2, 0.5, 0.9};
    ForwardOptions off;
    off.vcm = false;
    off.omm = false;
    const auto plain = model.predict_clean(z, t, c, off);
    CHECK(bitwise_equal(model.predict_clean(z, t, c), plain));
    ForwardOptions only_omm = off;
    only_omm.omm = true;
    CHECK(bitwise_equal(model.predict_clean(z, t, c, only_omm), plain));
    CHECK(model.vcm_residuals(z, c, ops::gelu(timestep_features(t, 16)), false).size() == 1);
  }
}

TEST_CASE("objects change the output once the projection is trained") {
  Model model(testing::tiny_config(1));
  std::mt19937_64 rng(7);
  testing::randomize_parameters(model, rng);
  auto c = testing::random_conditioning(model.config(), {2}, rng);
  const auto z = testing::latent_shaped(model.config(), 1, rng);
  const std::vector<double> t{0.4};
  ForwardOptions no_omm;
  no_omm.omm = false;
  CHECK_FALSE(bitwise_equal(model.predict_clean(z, t, c), model.predict_clean(z, t, c, no_omm)));
  // Empty object lists leave the block output untouched.
  c.entities = {{}};
  c.trajectories = Tensor(Shape{1, 0, 2, 27});
  CHECK(bitwise_equal(model.predict_clean(z, t, c), model.predict_clean(z, t, c, no_omm)));
}

TEST_CASE("attention rows sum to one") {
  Model model(testing::tiny_config(2));
  std::mt19937_64 rng(9);
  testing::randomize_parameters(model, rng);
  const auto c = testing::random_conditioning(model.config(), {2, 0}, rng);
  const auto z = testing::latent_shaped(model.config(), 2, rng);
  std::vector<Tensor> maps;
  ForwardOptions o;
  o.attention_maps = &maps;
  const auto out = model.predict_clean(z, std::vector<double>{0.3, 0.6}, c, o);
  CHECK(out.shape() == z.shape());
  // Self, text/reference and object attention in both blocks.
  REQUIRE(maps.size() == 6);
  for (const auto& m : maps) {
    const auto keys = m.dim(2);
    const auto v = m.values();
    for (std::size_t row = 0; row < m.numel() / keys; ++row) {
      double s = 0;
      for (std::size_t k = 0; k < keys; ++k) s += v[row * keys + k];
      // Object-free samples get all-zero object attention rows.
      if (s != 0) REQUIRE(std::abs(s - 1) <= 1e-6);
    }
  }
}

TEST_CASE("model forward is deterministic and shape preserving") {
  Model a(testing::tiny_config(4)), b(testing::tiny_config(4));
  std::mt19937_64 r1(1), r2(1);
  const auto c1 = testing::random_conditioning(a.config(), {1}, r1);
  const auto c2 = testing::random_conditioning(b.config(), {1}, r2);
  const auto z = testing::latent_shaped(a.config(), 1, r1);
  CHECK(bitwise_equal(a.velocity(z, std::vector<double>{0.5}, c1), b.velocity(z, std::vector<double>{0.5}, c2)));
  CHECK(a.velocity(z, std::vector<double>{0.5}, c1).shape() == z.shape());
  CHECK_THROWS_AS(a.velocity(z, std::vector<double>{0.5, 0.1}, c1), DimensionError);
}

TEST_CASE("training stages") {
  TempDir dir("mf_test_dit_stages");
  const auto data = tiny_dataset(dir.path / "ds", 4);
  Model model(testing::tiny_config(3));
  const auto batch = make_batch(model.config(), {&data[0], &data[1]});

  SUBCASE("oracle velocity gives zero loss") {
    std::mt19937_64 rng(1);
    const auto z1 = Tensor::randn(batch.z0.shape(), rng);
    const auto fs = flow_interpolate<Scalar>(batch.z0.values(), z1.values(), 0.37);
    const Tensor v(batch.z0.shape(), fs.v_t);
    CHECK(ops::mse(v, v).item() == 0);
  }

  SUBCASE("parameter partition") {
    std::set<std::string> seen[3];
    // As after stage 0: the base is trained, the control branches are not.
    std::mt19937_64 init(4);
    testing::randomize_parameters(model, init, 0.3, [](const std::string& n) { return n.starts_with("base."); });
    model.init_vcm_from_base();
    for (int stage = 0; stage < 3; ++stage) {
      select_stage(model, stage);
      model.parameters().zero_grad();
      std::mt19937_64 rng(stage);
      const auto r = training_step(model, batch, stage, rng);
      backward(r.loss);
      seen[stage] = names_with_gradient(model);
      CHECK_FALSE(seen[stage].empty());
    }
    for (const auto& n : seen[1]) CHECK(is_stage1_parameter(n));
    for (const auto& n : seen[2]) CHECK(is_stage2_parameter(n));
    for (const auto& n : seen[0]) CHECK(is_stage0_parameter(n));
    CHECK(seen[1].count("vcm.block0.zero.w"));
    for (const auto& n : seen[2]) CHECK_FALSE(n.starts_with("vcm."));
    for (const auto& n : seen[1]) CHECK(seen[2].count(n) == 0);
  }

  SUBCASE("overfitting one batch") {
    select_stage(model, 0);
    AdamW opt(model.parameters());
    double first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
      std::mt19937_64 rng(42);  // same t and noise every step
      model.parameters().zero_grad();
      const auto r = training_step(model, batch, 0, rng);
      backward(r.loss);
      opt.step(3e-3);
      (step == 0 ? first : last) = r.loss.item();
    }
    CHECK(last * 10 <= first);
  }

  SUBCASE("empty batch") { CHECK_THROWS_AS(make_batch(model.config(), {}), ContractError); }
}

TEST_CASE("oracle sampler recovers the data latent") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  std::vector<double> z0(400), z1(400);
  for (auto& v : z0) v = 2 * normal(rng);
  for (auto& v : z1) v = normal(rng);
  for (int steps : {1, 5, 20, 37}) {
    const auto out = euler_sample(z1, steps, [&](std::span<const double>, double, std::span<double> v) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = z1[i] - z0[i];
    });
    double err = 0;
    for (std::size_t i = 0; i < z0.size(); ++i) err = std::max(err, std::abs(out[i] - z0[i]));
    CHECK(err <= 1e-12);
  }
  CHECK_THROWS_AS(euler_sample(z1, 0, {}), ContractError);
}

TEST_CASE("generate") {
  TempDir dir("mf_test_dit_generate");
  const auto data = tiny_dataset(dir.path / "ds", 2);
  Model model(testing::tiny_config(5));
  std::mt19937_64 rng(8);
  testing::randomize_parameters(model, rng, 0.05);
  GenerateOptions o;
  o.steps = 4;
  const auto a = generate(model, data[0], 11, o), b = generate(model, data[0], 11, o);
  REQUIRE(a.size() == 5);
  CHECK(a[0].width == 16);
  CHECK(a[0].height == 16);
  for (std::size_t j = 0; j < a.size(); ++j) {
    CHECK(a[j].data == b[j].data);
  }
  const auto c = generate(model, data[0], 12, o);
  CHECK(c[0].data != a[0].data);
}

TEST_CASE("train checkpoints and resumes") {
  TempDir dir("mf_test_dit_train");
  const auto data = tiny_dataset(dir.path / "ds", 4);
  TrainConfig tc;
  tc.stage_steps = {3, 2, 2};
  tc.batch = 2;
  tc.warmup = 2;
  tc.checkpoint_every = 2;

  Model full(testing::tiny_config(6));
  train(full, data, tc, dir.path / "full");

  // Stop after four steps, then resume to the end.
  TrainConfig first = tc;
  first.stage_steps = {3, 1, 0};
  Model part(testing::tiny_config(6));
  train(part, data, first, dir.path / "resumed");
  CHECK(slurp(dir.path / "resumed" / "train_state.json").find("\"step\": 4") != std::string::npos);
  Model resumed(testing::tiny_config(6));
  train(resumed, data, tc, dir.path / "resumed");

  CHECK(slurp(dir.path / "full" / "model.ckpt") == slurp(dir.path / "resumed" / "model.ckpt"));
  CHECK(slurp(dir.path / "full" / "train_log.csv") == slurp(dir.path / "resumed" / "train_log.csv"));
  const auto log = slurp(dir.path / "full" / "train_log.csv");
  CHECK(log.starts_with("step,stage,loss,lr\n0,0,"));
  CHECK(log.find("\n6,2,") != std::string::npos);

  // Round trip through the checkpoint gives the same evaluation loss.
  const auto loaded = load_model(dir.path / "full");
  const auto batch = make_batch(full.config(), {&data[0], &data[1]});
  std::mt19937_64 r1(3), r2(3);
  CHECK(training_step(full, batch, 2, r1).loss.item() == training_step(loaded, batch, 2, r2).loss.item());
  CHECK_THROWS_AS(load_model(dir.path / "missing"), IoError);
  CHECK_THROWS_AS(train(full, {}, tc, dir.path / "x"), ContractError);
}
