#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "mf/common/error.hpp"
#include "mf/conditioning/vocabulary.hpp"
#include "mf/eval/report.hpp"
#include "mf/synth/dataset.hpp"

using namespace mf;
using namespace mf::eval;
using geom::Mat3;

namespace {

std::vector<Vec3> curve(int n) {
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) {
    const double t = i / double(n - 1);
    out.push_back({std::sin(2 * t), 0.5 * t * t - 0.2, std::cos(3 * t) + 0.3 * t});
  }
  return out;
}

geom::CameraTrajectory trajectory_from_centers(const std::vector<Vec3>& centers) {
  geom::CameraTrajectory traj;
  traj.intrinsics = {70, 70, 31.5, 31.5, 64, 64};
  for (std::size_t i = 0; i < centers.size(); ++i) {
    geom::CameraPose p;
    p.rotation = geom::rotation_y(0.02 * double(i));
    p.translation = centers[i];
    traj.poses.push_back(p);
  }
  return geom::canonicalize(traj);
}

std::vector<Vec3> centers_of(const geom::CameraTrajectory& t) {
  std::vector<Vec3> out;
  for (const auto& p : t.poses) out.push_back(p.center());
  return out;
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
  double m = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(a(r, c) - b(r, c)));
  return m;
}

// Squared residual with s and t solved in closed form for a fixed rotation.
double residual_for_rotation(const std::vector<Vec3>& est, const std::vector<Vec3>& ref, const Mat3& r) {
  Vec3 me, mr;
  for (std::size_t i = 0; i < est.size(); ++i) {
    me = me + est[i];
    mr = mr + ref[i];
  }
  me = me * (1.0 / double(est.size()));
  mr = mr * (1.0 / double(est.size()));
  double num = 0, den = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Vec3 e = r * (est[i] - me), q = ref[i] - mr;
    num += geom::dot(e, q);
    den += geom::dot(e, e);
  }
  const double s = num / den;
  double res = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Vec3 d = (ref[i] - mr) - r * (est[i] - me) * s;
    res += geom::dot(d, d);
  }
  return res;
}

// Independent oracle: coordinate search over axis-angle rotations.
double oracle_trans_err(const std::vector<Vec3>& est, const std::vector<Vec3>& ref) {
  auto rot = [](const Vec3& w) {
    const double a = geom::norm(w);
    return a < 1e-15 ? Mat3{} : geom::rotation_axis_angle(w * (1 / a), a);
  };
  Vec3 w;
  double best = residual_for_rotation(est, ref, rot(w));
  for (double step = 0.5; step > 1e-10; step *= 0.5) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (int axis = 0; axis < 3; ++axis)
        for (double sign : {-1.0, 1.0}) {
          Vec3 cand = w;
          (axis == 0 ? cand.x : axis == 1 ? cand.y : cand.z) += sign * step;
          const double r = residual_for_rotation(est, ref, rot(cand));
          if (r < best) {
            best = r;
            w = cand;
            improved = true;
          }
        }
    }
  }
  const Mat3 r = rot(w);
  Vec3 me, mr;
  for (std::size_t i = 0; i < est.size(); ++i) {
    me = me + est[i];
    mr = mr + ref[i];
  }
  me = me * (1.0 / double(est.size()));
  mr = mr * (1.0 / double(est.size()));
  double num = 0, den = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Vec3 e = r * (est[i] - me);
    num += geom::dot(e, ref[i] - mr);
    den += geom::dot(e, e);
  }
  const double s = num / den;
  double total = 0;
  for (std::size_t i = 0; i < est.size(); ++i) total += geom::norm((ref[i] - mr) - r * (est[i] - me) * s);
  return total / double(est.size());
}

geom::Image blank(int w, int h) { return geom::Image(w, h, {0.3, 0.3, 0.3}); }

cond::BoxSequence2D constant_sequence(const cond::Box2D& b, int n) {
  cond::BoxSequence2D s;
  s.boxes.assign(n, b);
  s.visible.assign(n, 1);
  return s;
}

}  // namespace

TEST_CASE("umeyama examples") {
  const auto ref = curve(12);
  SUBCASE("identity") {
    const auto sim = umeyama_align(ref, ref);
    CHECK(sim.scale == doctest::Approx(1).epsilon(1e-12));
    CHECK(max_abs_diff(sim.rotation, Mat3{}) < 1e-9);
    CHECK(geom::norm(sim.translation) < 1e-9);
    CHECK_FALSE(sim.translation_only);
  }
  SUBCASE("scaled and rotated") {
    const Mat3 rz = geom::rotation_z(std::numbers::pi / 2);
    std::vector<Vec3> est;
    for (const auto& p : ref) est.push_back(rz * p * 2.0);
    const auto sim = umeyama_align(est, ref);
    CHECK(sim.scale == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(max_abs_diff(sim.rotation, rz.transposed()) < 1e-9);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(geom::norm(sim.apply(est[i]) - ref[i]) <= 1e-6);
  }
  SUBCASE("offset") {
    std::vector<Vec3> est;
    for (const auto& p : ref) est.push_back(p + Vec3{0.4, -1, 2});
    const auto sim = umeyama_align(est, ref);
    CHECK(sim.scale == doctest::Approx(1).epsilon(1e-9));
    CHECK(max_abs_diff(sim.rotation, Mat3{}) < 1e-9);
    CHECK(geom::norm(sim.translation - Vec3{-0.4, 1, -2}) < 1e-9);
  }
  SUBCASE("degenerate") {
    const std::vector<Vec3> two = {ref[0], ref[1]};
    CHECK(umeyama_align(two, two).translation_only);
    const std::vector<Vec3> still(5, Vec3{1, 2, 3});
    const auto sim = umeyama_align(still, std::vector<Vec3>(5, Vec3{0, 0, 1}));
    CHECK(sim.translation_only);
    CHECK(geom::norm(sim.apply({1, 2, 3}) - Vec3{0, 0, 1}) < 1e-12);
    CHECK_THROWS_AS(umeyama_align(two, ref), DimensionError);
  }
}

TEST_CASE("cam_trans_err") {
  const auto ref = trajectory_from_centers(curve(10));
  CHECK(cam_trans_err({ref, ref}) < 1e-9);

  auto scaled = ref;
  for (auto& p : scaled.poses) p.translation = p.translation * 2.0;
  CHECK(cam_trans_err({scaled, ref}) < 1e-9);

  SUBCASE("one frame offset matches least-squares oracle") {
    auto est = ref;
    est.poses[4].translation = est.poses[4].translation + Vec3{1, 0, 0};
    CHECK(geom::norm(est.poses[4].center() - ref.poses[4].center() - Vec3{1, 0, 0}) < 1e-12);
    const double got = cam_trans_err({est, ref});
    const double want = oracle_trans_err(centers_of(est), centers_of(ref));
    CHECK(got > 0.01);
    CHECK(got == doctest::Approx(want).epsilon(1e-6));
  }

  SUBCASE("invariant under global similarity of the estimate") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 20; ++trial) {
      auto est = ref;
      est.poses[3].translation = est.poses[3].translation + Vec3{0.3, -0.2, 0.1};
      est.poses[7].rotation = est.poses[7].rotation * geom::rotation_x(0.1);
      const double base = cam_trans_err({est, ref});
      const Vec3 axis = geom::normalized({u(rng), u(rng), u(rng)});
      geom::CameraPose g;
      g.rotation = geom::rotation_axis_angle(axis, 3 * u(rng));
      g.translation = {u(rng), u(rng), u(rng)};
      const double s = 0.3 + 2 * std::abs(u(rng));
      auto moved = est;
      for (auto& p : moved.poses) {
        p = geom::compose(g, p);
        p.translation = p.translation * s;
      }
      CHECK(std::abs(cam_trans_err({moved, ref}) - base) <= 1e-6);
    }
  }

  geom::CameraTrajectory short_traj = ref;
  short_traj.poses.pop_back();
  CHECK_THROWS_AS(cam_trans_err({short_traj, ref}), DimensionError);
}

TEST_CASE("cam_rot_err") {
  const auto ref = trajectory_from_centers(curve(8));
  CHECK(cam_rot_err({ref, ref}) < 1e-12);

  auto est = ref;
  for (std::size_t j = 1; j < est.size(); ++j) est.poses[j].rotation = est.poses[j].rotation * geom::rotation_z(std::numbers::pi / 2);
  CHECK(cam_rot_err({est, ref}) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-9));

  geom::CameraTrajectory single{{geom::CameraPose::identity()}, ref.intrinsics};
  CHECK(cam_rot_err({single, single}) == 0);

  // A global rotation of the estimate cancels in first-frame-relative terms.
  auto moved = est;
  geom::CameraPose g;
  g.rotation = geom::rotation_axis_angle(geom::normalized({1, 2, 3}), 0.7);
  for (auto& p : moved.poses) p = geom::compose(g, p);
  CHECK(cam_rot_err({moved, ref}) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-9));

  auto shorter = ref;
  shorter.poses.pop_back();
  CHECK_THROWS_AS(cam_rot_err({shorter, ref}), DimensionError);
}

TEST_CASE("recover_boxes") {
  std::vector<geom::Image> video(3, blank(32, 24));
  for (int y = 5; y < 15; ++y)
    for (int x = 8; x < 18; ++x) video[0].set(x, y, {1, 0, 0});
  // Frame 2: a 1x3 sliver is below the minimum area.
  for (int x = 0; x < 3; ++x) video[2].set(x, 0, {1, 0, 0});
  const auto seq = recover_boxes(video, {1, 0, 0}, 7);
  CHECK(seq.object_id == 7);
  REQUIRE(seq.size() == 3);
  CHECK(seq.visible[0]);
  CHECK(seq.boxes[0] == cond::Box2D{7.5, 4.5, 17.5, 14.5});
  CHECK(seq.boxes[0].width() == 10);
  CHECK_FALSE(seq.visible[1]);
  CHECK_FALSE(seq.visible[2]);

  SUBCASE("noise within 8/255 keeps boxes within a pixel") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> noise(-8.0 / 255, 8.0 / 255);
    std::uniform_int_distribution<int> pos(0, 20);
    for (int trial = 0; trial < 50; ++trial) {
      geom::Image img = blank(40, 32);
      const int x0 = pos(rng), y0 = pos(rng) / 2, w = 4 + pos(rng) / 2, h = 4 + pos(rng) / 3;
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) img.set(x, y, {0, 1, 0});
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          auto p = img.at(x, y);
          img.set(x, y,
                  {std::clamp(p.r + float(noise(rng)), 0.0f, 1.0f), std::clamp(p.g + float(noise(rng)), 0.0f, 1.0f),
                   std::clamp(p.b + float(noise(rng)), 0.0f, 1.0f)});
        }
      const auto got = recover_boxes({img}, {0, 1, 0});
      REQUIRE(got.visible[0]);
      const cond::Box2D want{x0 - 0.5, y0 - 0.5, x0 + w - 0.5, y0 + h - 0.5};
      CHECK(std::abs(got.boxes[0].x0 - want.x0) <= 1);
      CHECK(std::abs(got.boxes[0].y0 - want.y0) <= 1);
      CHECK(std::abs(got.boxes[0].x1 - want.x1) <= 1);
      CHECK(std::abs(got.boxes[0].y1 - want.y1) <= 1);
    }
  }
}

TEST_CASE("snap_to_pixels") {
  CHECK(snap_to_pixels(cond::Box2D{3.2, 1.0, 7.9, 4.5}) == cond::Box2D{3.5, 0.5, 7.5, 4.5});
  // A box covering no pixel center collapses to the nearest pixel.
  CHECK(snap_to_pixels(cond::Box2D{3.2, 1.1, 3.4, 1.3}) == cond::Box2D{2.5, 0.5, 3.5, 1.5});
}

TEST_CASE("box iou values") {
  const cond::Box2D a{0, 0, 2, 2}, b{1, 1, 3, 3}, far{10, 10, 12, 12};
  CHECK(box_iou(a, a) == 1);
  CHECK(std::abs(box_iou(a, b) - 1.0 / 7.0) <= 1e-9);
  CHECK(box_iou(a, far) == 0);
  CHECK(*box_iou_sequence(constant_sequence(a, 5), constant_sequence(a, 5)) == 1);
  CHECK(std::abs(*box_iou_sequence(constant_sequence(a, 5), constant_sequence(b, 5)) - 1.0 / 7.0) <= 1e-9);
  CHECK(*box_iou_sequence(constant_sequence(a, 5), constant_sequence(far, 5)) == 0);

  auto pred = constant_sequence(a, 4), gt = constant_sequence(a, 4);
  pred.visible[1] = 0;
  gt.visible[2] = 0;
  // Frame 1 scores zero, frame 2 is skipped.
  CHECK(*box_iou_sequence(pred, gt) == doctest::Approx(2.0 / 3.0));
  gt.visible.assign(4, 0);
  CHECK_FALSE(box_iou_sequence(pred, gt).has_value());
  CHECK_THROWS_AS(box_iou_sequence(constant_sequence(a, 3), constant_sequence(a, 4)), DimensionError);
}

TEST_CASE("box iou symmetry and translation invariance") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0, 20), sz(0.5, 8), sh(-30, 30);
  std::bernoulli_distribution vis(0.8);
  for (int trial = 0; trial < 200; ++trial) {
    cond::BoxSequence2D p, g;
    for (int j = 0; j < 9; ++j) {
      const double x = u(rng), y = u(rng), x2 = u(rng), y2 = u(rng);
      p.boxes.push_back({x, y, x + sz(rng), y + sz(rng)});
      g.boxes.push_back({x2, y2, x2 + sz(rng), y2 + sz(rng)});
      const bool v = vis(rng);
      p.visible.push_back(v);
      g.visible.push_back(v);
    }
    const auto pg = box_iou_sequence(p, g), gp = box_iou_sequence(g, p);
    REQUIRE(pg.has_value() == gp.has_value());
    if (!pg) continue;
    CHECK(std::abs(*pg - *gp) <= 1e-12);
    CHECK(*pg >= 0);
    CHECK(*pg <= 1);
    const double dx = sh(rng), dy = sh(rng);
    auto shift = [&](cond::BoxSequence2D s) {
      for (auto& b : s.boxes) b = {b.x0 + dx, b.y0 + dy, b.x1 + dx, b.y1 + dy};
      return s;
    };
    CHECK(std::abs(*box_iou_sequence(shift(p), shift(g)) - *pg) <= 1e-9);
  }
}

TEST_CASE("background_shift") {
  geom::Image a(48, 40);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const float v = 0.5 + 0.3 * std::sin(0.4 * x + 0.1 * y) * std::cos(0.3 * y) + 0.05 * u(rng);
      a.set(x, y, {v, v, v});
    }
  for (const auto& [dx, dy] : std::vector<std::pair<int, int>>{{0, 0}, {3, 0}, {-2, 1}, {0, -4}}) {
    geom::Image b(a.width, a.height, {0.5, 0.5, 0.5});
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x)
        if (b.contains(x + dx, y + dy)) b.set(x + dx, y + dy, a.at(x, y));
    // An ignored red object sitting on top of b does not disturb the estimate.
    for (int y = 10; y < 20; ++y)
      for (int x = 20; x < 30; ++x) b.set(x, y, {1, 0, 0});
    const auto s = background_shift(a, b, 6, {{1, 0, 0}});
    CHECK(s.dx == dx);
    CHECK(s.dy == dy);
    CHECK(s.score > 0.95);
  }
}

TEST_CASE("evaluate against synthetic ground truth") {
  int tested = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    synth::SceneConfig cfg;
    cfg.seed = seed;
    cfg.object_count = 1 + int(seed % 3);
    cfg.camera_motion = seed % 2 ? synth::CameraMotion::kPan : synth::CameraMotion::kDolly;
    cfg.object_motion = seed % 3 ? synth::ObjectMotion::kLinear : synth::ObjectMotion::kCircular;
    const auto scene = synth::generate_scene(cfg);
    const auto spec = synth::spec_from_annotation(scene.annotation, "/nonexistent");
    const auto gt = evaluate(spec, scene.frames, &scene.annotation);
    CHECK(gt.clip_id == scene.annotation.clip_id);
    REQUIRE(gt.box_iou.has_value());
    CHECK(*gt.box_iou >= 0.98);
    CHECK(*gt.cam_trans_err < 1e-9);
    CHECK(*gt.cam_rot_err < 1e-9);
    CHECK(gt.box_iou_per_object.size() == spec.objects.size());

    auto shuffled = scene.frames;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto bad = evaluate(spec, shuffled, &scene.annotation);
    CHECK(*bad.box_iou < *gt.box_iou);
    ++tested;

    auto wrong = scene.frames;
    wrong.pop_back();
    CHECK_THROWS_AS(evaluate(spec, wrong, &scene.annotation), DimensionError);
  }
  CHECK(tested == 6);

  SUBCASE("empty object list") {
    synth::SceneConfig cfg;
    cfg.seed = 9;
    cfg.object_count = 0;
    cfg.camera_motion = synth::CameraMotion::kOrbit;
    const auto scene = synth::generate_scene(cfg);
    const auto spec = synth::spec_from_annotation(scene.annotation, "/nonexistent");
    const auto r = evaluate(spec, scene.frames, &scene.annotation, "c0");
    CHECK_FALSE(r.box_iou.has_value());
    REQUIRE(r.cam_trans_err.has_value());
    const auto j = nlohmann::json::parse(report_to_json(r));
    CHECK_FALSE(j.contains("box_iou"));
    CHECK(j.contains("cam_trans_err"));
    CHECK(j.contains("cam_rot_err"));
    CHECK(j["fid"].is_null());
    CHECK(j["fvd"].is_null());
    CHECK(j["clipsim"].is_null());
    CHECK(j["clip_id"] == "c0");
  }
}

TEST_CASE("report output") {
  MetricsReport a{"clip_00000", 0.5, 0.1, 0.8, {0.8}};
  MetricsReport b{"clip_00001", std::nullopt, std::nullopt, 0.4, {0.4}};
  const auto j = nlohmann::ordered_json::parse(report_to_json(a));
  CHECK(j["box_iou"].get<double>() == 0.8);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"clip_id", "cam_trans_err", "cam_rot_err", "box_iou", "fid", "fvd", "clipsim"});
  CHECK(reports_to_csv({a, b}) ==
        "clip_id,cam_trans_err,cam_rot_err,box_iou\n"
        "clip_00000,0.500000,0.100000,0.800000\n"
        "clip_00001,,,0.400000\n"
        "mean,0.500000,0.100000,0.600000\n");
}
