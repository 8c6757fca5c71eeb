#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "mf/common/error.hpp"
#include "mf/geometry/camera.hpp"
#include "mf/geometry/io.hpp"
#include "mf/geometry/render.hpp"

using namespace mf::geom;

namespace {

CameraIntrinsics intr(int w = 64, int h = 64, double f = 100) { return {f, f, w / 2.0, h / 2.0, w, h}; }

CameraPose random_pose(std::mt19937_64& rng, double t_scale = 2.0) {
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> a(-std::numbers::pi, std::numbers::pi);
  return {rotation_axis_angle({n(rng), n(rng), n(rng)}, a(rng)),
          {t_scale * n(rng), t_scale * n(rng), t_scale * n(rng)}};
}

bool near_pose(const CameraPose& a, const CameraPose& b, double tol) {
  for (int i = 0; i < 9; ++i)
    if (std::abs(a.rotation.m[i] - b.rotation.m[i]) > tol) return false;
  return norm(a.translation - b.translation) <= tol;
}

// Independent z-buffer oracle: every pixel scans every point.
SplatResult brute_force_splat(const PointCloud& cloud, const CameraIntrinsics& k, const CameraPose& pose, int r,
                              Rgb bg) {
  SplatResult out{Image(k.width, k.height, bg), Mask(k.width, k.height)};
  const Mat3 rt = pose.rotation.transposed();
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      double best = std::numeric_limits<double>::infinity();
      long winner = -1;
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 c = rt * (cloud.points[i] - pose.translation);
        if (c.z <= 1e-4) continue;
        const int pu = static_cast<int>(std::floor(k.fx * c.x / c.z + k.cx + 0.5));
        const int pv = static_cast<int>(std::floor(k.fy * c.y / c.z + k.cy + 0.5));
        if (std::abs(pu - x) > r || std::abs(pv - y) > r) continue;
        if (c.z < best) {
          best = c.z;
          winner = static_cast<long>(i);
        }
      }
      if (winner >= 0) {
        out.image.set(x, y, cloud.colors[static_cast<std::size_t>(winner)]);
        out.valid.set(x, y, true);
      }
    }
  }
  return out;
}

PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, bool quantized_depth) {
  std::uniform_real_distribution<double> xy(-1.2, 1.2), z(0.5, 4.0), u(0, 1);
  std::uniform_int_distribution<int> zq(1, 4);
  PointCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = quantized_depth ? zq(rng) : z(rng);
    cloud.points.push_back({xy(rng) * d, xy(rng) * d, d});
    cloud.colors.push_back({float(u(rng)), float(u(rng)), float(u(rng))});
  }
  return cloud;
}

}  // namespace

TEST_CASE("canonicalize: spec examples") {
  CameraTrajectory t{{CameraPose::translate(1, 0, 0), CameraPose::translate(2, 0, 0)}, intr()};
  const auto c = canonicalize(t);
  CHECK(c.poses[0] == CameraPose::identity());
  CHECK(near_pose(c.poses[1], CameraPose::translate(1, 0, 0), 1e-15));

  std::mt19937_64 rng(3);
  CameraTrajectory canon{{CameraPose::identity(), random_pose(rng), random_pose(rng)}, intr()};
  const auto again = canonicalize(canon);
  for (std::size_t j = 0; j < canon.size(); ++j) CHECK(near_pose(again.poses[j], canon.poses[j], 1e-12));
}

TEST_CASE("canonicalize: first pose identity and idempotent on 100 random trajectories") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    CameraTrajectory t{{}, intr()};
    const int n = 1 + trial % 7;
    for (int j = 0; j < n; ++j) t.poses.push_back(random_pose(rng));
    const auto once = canonicalize(t);
    const auto twice = canonicalize(once);
    CHECK(once.is_canonical(1e-12));
    for (int j = 0; j < n; ++j) {
      CHECK(near_pose(once.poses[j], twice.poses[j], 1e-9));
      // relative motion between consecutive frames is preserved
      if (j > 0) {
        const auto rel_in = compose(t.poses[j - 1].inverse(), t.poses[j]);
        const auto rel_out = compose(once.poses[j - 1].inverse(), once.poses[j]);
        CHECK(near_pose(rel_in, rel_out, 1e-9));
      }
    }
  }
}

TEST_CASE("canonicalize: invalid rotation rejected") {
  CameraPose bad;
  bad.rotation(0, 0) = 1.1;
  CHECK_THROWS_AS(canonicalize({{CameraPose::identity(), bad}, intr()}), mf::ValidationError);
  CameraPose reflect;
  reflect.rotation(2, 2) = -1;
  CHECK_THROWS_AS(canonicalize({{reflect}, intr()}), mf::ValidationError);
  CHECK_THROWS_AS(canonicalize({{}, intr()}), mf::ValidationError);
}

TEST_CASE("intrinsics validation") {
  CHECK_NOTHROW(intr().validate());
  CHECK_THROWS_AS((CameraIntrinsics{0, 1, 1, 1, 4, 4}.validate()), mf::ValidationError);
  CHECK_THROWS_AS((CameraIntrinsics{1, 1, 4, 1, 4, 4}.validate()), mf::ValidationError);
  CHECK_THROWS_AS((CameraIntrinsics{1, 1, 1, -0.5, 4, 4}.validate()), mf::ValidationError);
}

TEST_CASE("plucker_map: spec examples") {
  const auto k = intr();
  const auto id = plucker_map(k, CameraPose::identity());
  const int cx = 32, cy = 32;
  CHECK(id.at(0, cx, cy) == 0.0f);
  CHECK(id.at(1, cx, cy) == 0.0f);
  CHECK(id.at(2, cx, cy) == 1.0f);
  for (int c = 3; c < 6; ++c)
    for (int y = 0; y < 64; y += 7)
      for (int x = 0; x < 64; x += 5) CHECK(id.at(c, x, y) == 0.0f);

  const auto moved = plucker_map(k, CameraPose::translate(1, 0, 0));
  CHECK(moved.at(2, cx, cy) == doctest::Approx(1.0));
  CHECK(moved.at(3, cx, cy) == doctest::Approx(0.0));
  CHECK(moved.at(4, cx, cy) == doctest::Approx(-1.0));
  CHECK(moved.at(5, cx, cy) == doctest::Approx(0.0));
}

TEST_CASE("plucker_map: unit directions orthogonal to moments for 20 random poses") {
  std::mt19937_64 rng(5);
  const auto k = intr(24, 16, 20);
  for (int trial = 0; trial < 20; ++trial) {
    const auto map = plucker_map(k, random_pose(rng));
    double worst_norm = 0, worst_dot = 0;
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x) {
        const Vec3 d{map.at(0, x, y), map.at(1, x, y), map.at(2, x, y)};
        const Vec3 m{map.at(3, x, y), map.at(4, x, y), map.at(5, x, y)};
        worst_norm = std::max(worst_norm, std::abs(norm(d) - 1));
        worst_dot = std::max(worst_dot, std::abs(dot(d, m)));
      }
    CHECK(worst_norm <= 1e-5);
    CHECK(worst_dot <= 1e-5);
  }
}

TEST_CASE("unproject and project: spec examples") {
  const auto k = intr();
  CHECK(unproject_pixel(32, 32, 2, k, CameraPose::identity()) == Vec3{0, 0, 2});
  CHECK(unproject_pixel(132, 32, 1, k, CameraPose::identity()) == Vec3{1, 0, 1});
  CHECK(unproject_pixel(132, 32, 1, k, CameraPose::translate(0, 0, 5)) == Vec3{1, 0, 6});

  const std::vector<Vec3> pts{{0, 0, 2}, {1, 0, 1}, {0, 0, -1}};
  const auto p = project_points(pts, k, CameraPose::identity());
  CHECK(p[0].valid);
  CHECK(p[0].u == 32);
  CHECK(p[0].v == 32);
  CHECK(p[0].depth == 2);
  CHECK(p[1].u == 132);
  CHECK(p[1].v == 32);
  CHECK(p[1].depth == 1);
  CHECK_FALSE(p[2].valid);
  CHECK_FALSE(project_point({0, 0, 5e-5}, k, CameraPose::identity()).valid);
}

TEST_CASE("unproject_depth skips invalid pixels and colors from reference") {
  const auto k = intr(4, 3, 2);
  DepthMap d(4, 3, 1.5f);
  d.set(0, 0, 0.0f);
  d.set(1, 0, std::numeric_limits<float>::quiet_NaN());
  d.set(2, 0, -1.0f);
  d.set(3, 0, std::numeric_limits<float>::infinity());
  Image ref(4, 3, {0.2f, 0.4f, 0.6f});
  ref.set(2, 2, {1, 0, 0});
  const auto cloud = unproject_depth(d, k, CameraPose::identity(), ref);
  CHECK(cloud.size() == 8);
  CHECK(cloud.colors.back() == Rgb{0.2f, 0.4f, 0.6f});
  CHECK(cloud.colors[6] == Rgb{1, 0, 0});

  CHECK(unproject_depth(DepthMap(4, 3, 0), k, CameraPose::identity(), ref).size() == 0);
  CHECK_THROWS_AS(unproject_depth(DepthMap(5, 3, 1), k, CameraPose::identity(), ref), mf::DimensionError);
}

TEST_CASE("project_points inverts unproject_depth within 1e-3 px for any pose") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<float> z(0.2f, 30.0f);
  const auto k = CameraIntrinsics{55, 61, 15.5, 11.25, 32, 24};
  for (int trial = 0; trial < 20; ++trial) {
    const auto pose = random_pose(rng, 10);
    DepthMap d(k.width, k.height);
    for (auto& v : d.depth) v = z(rng);
    const auto cloud = unproject_depth(d, k, pose, Image(k.width, k.height));
    const auto proj = project_points(cloud.points, k, pose);
    double worst = 0;
    for (int y = 0, i = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x, ++i) {
        REQUIRE(proj[i].valid);
        worst = std::max({worst, std::abs(proj[i].u - x), std::abs(proj[i].v - y)});
      }
    CHECK(worst <= 1e-3);
  }
}

TEST_CASE("splat_render: spec examples") {
  const auto k = intr(16, 16, 10);
  const Rgb bg{0.1f, 0.1f, 0.1f};
  const auto empty = splat_render({}, k, CameraPose::identity(), 1, bg);
  CHECK(empty.valid.count() == 0);
  CHECK(empty.image == Image(16, 16, bg));

  PointCloud one{{{0, 0, 1}}, {{1, 0, 0}}};
  const auto r = splat_render(one, k, CameraPose::identity(), 0, bg);
  CHECK(r.valid.count() == 1);
  CHECK(r.valid.at(8, 8));
  CHECK(r.image.at(8, 8) == Rgb{1, 0, 0});
  auto expected = Image(16, 16, bg);
  expected.set(8, 8, {1, 0, 0});
  CHECK(r.image == expected);

  PointCloud two{{{0, 0, 2}, {0, 0, 1}}, {{0, 1, 0}, {0, 0, 1}}};
  CHECK(splat_render(two, k, CameraPose::identity(), 0, bg).image.at(8, 8) == Rgb{0, 0, 1});
  PointCloud tie{{{0, 0, 1}, {0, 0, 1}}, {{0, 1, 0}, {0, 0, 1}}};
  CHECK(splat_render(tie, k, CameraPose::identity(), 0, bg).image.at(8, 8) == Rgb{0, 1, 0});

  const auto wide = splat_render(one, k, CameraPose::identity(), 1, bg);
  CHECK(wide.valid.count() == 9);
  CHECK_THROWS_AS(splat_render(one, k, CameraPose::identity(), -1, bg), mf::ValidationError);
}

TEST_CASE("splat_render equals brute-force oracle on 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const int w = 4 + static_cast<int>(seed % 13), h = 4 + static_cast<int>((seed * 7) % 13);
    const CameraIntrinsics k{double(w), double(w) * 0.9, (w - 1) / 2.0, (h - 1) / 2.0, w, h};
    const auto cloud = random_cloud(rng, 1 + seed * 2 % 200, seed % 3 == 0);
    const CameraPose pose = seed % 2 ? CameraPose{rotation_y(0.1), {0.2, -0.1, 0.3}} : CameraPose::identity();
    const int radius = static_cast<int>(seed % 3);
    const Rgb bg{0.5f, 0.25f, 0};
    const auto fast = splat_render(cloud, k, pose, radius, bg);
    const auto slow = brute_force_splat(cloud, k, pose, radius, bg);
    CAPTURE(seed);
    CHECK(fast.image == slow.image);
    CHECK(fast.valid == slow.valid);
  }
}

TEST_CASE("splat_render: rigid-motion consistency is bit-exact") {
  std::mt19937_64 rng(77);
  const auto k = intr(32, 32, 30);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cloud = random_cloud(rng, 300, false);
    const auto p = random_pose(rng);
    const CameraPose q{rotation_x(0.05 * trial), {0.01 * trial, 0, -0.02 * trial}};
    PointCloud moved = cloud;
    for (auto& x : moved.points) x = p.to_world(x);
    const auto a = splat_render(moved, k, compose(p, q), 1);
    const auto b = splat_render(cloud, k, q, 1);
    CHECK(a.image == b.image);
    CHECK(a.valid == b.valid);
  }
}

TEST_CASE("render_trajectory") {
  const auto k = intr(24, 20, 18);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> z(1.5f, 3.5f), c(0, 1);
  DepthMap depth(k.width, k.height);
  for (auto& v : depth.depth) v = z(rng);
  depth.set(3, 3, 0.0f);
  Image ref(k.width, k.height);
  for (auto& v : ref.data) v = std::round(c(rng) * 255) / 255;
  const auto cloud = unproject_depth(depth, k, CameraPose::identity(), ref);

  SUBCASE("single frame is the reference") {
    const auto g = render_trajectory(cloud, {{CameraPose::identity()}, k}, ref);
    REQUIRE(g.size() == 1);
    CHECK(g.frames[0] == ref);
  }
  SUBCASE("static camera reproduces the reference on valid pixels") {
    const auto g = render_trajectory(cloud, {{4, CameraPose::identity()}, k}, ref, 0);
    REQUIRE(g.size() == 4);
    CHECK(g.frames[0] == ref);
    for (std::size_t j = 1; j < 4; ++j) {
      CHECK(g.masks[j].count() == cloud.size());
      CHECK_FALSE(g.masks[j].at(3, 3));
      double worst = 0;
      for (int y = 0; y < k.height; ++y)
        for (int x = 0; x < k.width; ++x) {
          if (!g.masks[j].at(x, y)) continue;
          const auto a = g.frames[j].at(x, y), b = ref.at(x, y);
          worst = std::max({worst, double(std::abs(a.r - b.r)), double(std::abs(a.g - b.g)),
                            double(std::abs(a.b - b.b))});
        }
      CHECK(worst <= 1.0 / 255);
    }
  }
  SUBCASE("dolly forward lowers mean projected depth") {
    CameraTrajectory t{{}, k};
    for (int j = 0; j < 6; ++j) t.poses.push_back(CameraPose::translate(0, 0, 0.2 * j));
    double previous = std::numeric_limits<double>::infinity();
    for (const auto& pose : t.poses) {
      const auto proj = project_points(cloud.points, k, pose);
      double sum = 0;
      for (const auto& p : proj) sum += p.depth;
      const double mean = sum / static_cast<double>(proj.size());
      CHECK(mean < previous);
      previous = mean;
    }
    CHECK(render_trajectory(cloud, t, ref).size() == 6);
  }
  SUBCASE("contract violations") {
    CHECK_THROWS_AS(render_trajectory(cloud, {{CameraPose::translate(1, 0, 0)}, k}, ref), mf::ContractError);
    CHECK_THROWS_AS(render_trajectory(cloud, {{CameraPose::identity()}, k}, Image(3, 3)), mf::DimensionError);
  }
}

TEST_CASE("rotation_angle: spec examples") {
  const Mat3 a = rotation_axis_angle({1, 2, 3}, 0.7);
  CHECK(rotation_angle(a, a) == doctest::Approx(0).epsilon(1e-7));
  CHECK(rotation_angle(Mat3::identity(), rotation_z(std::numbers::pi / 2)) ==
        doctest::Approx(std::numbers::pi / 2));
  CHECK(rotation_angle(Mat3::identity(), rotation_x(std::numbers::pi)) == doctest::Approx(std::numbers::pi));
  CHECK(rotation_angle(a, a * rotation_y(0.3)) == doctest::Approx(0.3));
}

TEST_CASE("io round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "mf_test_geometry_io";
  std::filesystem::create_directories(dir);

  Image img(5, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i) / 44.0f;
  write_png(dir / "a.png", img);
  const auto back = read_png(dir / "a.png");
  CHECK(back == quantize8(img));
  CHECK(read_png(dir / "a.png") == back);

  DepthMap d(4, 3);
  for (std::size_t i = 0; i < d.depth.size(); ++i) d.depth[i] = 0.5f + static_cast<float>(i) * 0.37f;
  d.set(1, 2, 0.0f);
  write_pfm(dir / "d.pfm", d);
  const auto db = read_pfm(dir / "d.pfm");
  CHECK(db.width == 4);
  CHECK(db.height == 3);
  CHECK(db.depth == d.depth);

  std::mt19937_64 rng(1);
  std::vector<CameraPose> poses{CameraPose::identity(), random_pose(rng), random_pose(rng)};
  write_poses(dir / "p.txt", poses);
  CHECK(read_poses(dir / "p.txt") == poses);

  std::ofstream(dir / "bad.txt") << "1 0 0 0 1 0 0 0 1 0 0\n";
  CHECK_THROWS_AS(read_poses(dir / "bad.txt"), mf::IoError);
  std::ofstream(dir / "bad.pfm") << "PF\n1 1\n-1\n";
  CHECK_THROWS_AS(read_pfm(dir / "bad.pfm"), mf::IoError);
  CHECK_THROWS_AS(read_png(dir / "bad.pfm"), mf::IoError);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), mf::IoError);
  std::filesystem::remove_all(dir);
}
