#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mf/common/error.hpp"
#include "mf/conditioning/package.hpp"
#include "mf/conditioning/vocabulary.hpp"
#include "mf/geometry/io.hpp"
#include "mf/geometry/render.hpp"
#include "mf/synth/dataset.hpp"
#include "mf/synth/manifest.hpp"

using namespace mf;
using namespace mf::synth;
namespace fs = std::filesystem;

namespace {

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

std::vector<SceneConfig> sweep(int count) {
  std::vector<SceneConfig> out;
  const CameraMotion cams[] = {CameraMotion::kStatic, CameraMotion::kPan, CameraMotion::kDolly, CameraMotion::kOrbit,
                               CameraMotion::kRandomSmooth};
  const ObjectMotion objs[] = {ObjectMotion::kStatic, ObjectMotion::kLinear, ObjectMotion::kCircular,
                               ObjectMotion::kRandomSmooth};
  for (int i = 0; i < count; ++i) {
    SceneConfig c;
    c.seed = 100 + static_cast<std::uint64_t>(i);
    c.camera_motion = cams[i % 5];
    c.object_motion = objs[(i / 5) % 4];
    c.object_count = i % 4;
    out.push_back(c);
  }
  return out;
}

}  // namespace

TEST_CASE("generate_scene: static empty scene has identical frames") {
  SceneConfig c;
  c.object_count = 0;
  c.camera_motion = CameraMotion::kStatic;
  const auto s = generate_scene(c);
  REQUIRE(s.frames.size() == 17);
  for (const auto& f : s.frames) CHECK(f == s.frames[0]);
  CHECK(s.annotation.caption.find("static") != std::string::npos);
}

TEST_CASE("generate_scene: same seed gives byte-identical output") {
  for (const auto& c : sweep(10)) {
    const auto a = generate_scene(c), b = generate_scene(c);
    CHECK(a.frames == b.frames);
    CHECK(a.depth0.depth == b.depth0.depth);
    CHECK(annotation_to_json(a.annotation) == annotation_to_json(b.annotation));
  }
  SceneConfig c;
  c.seed = 1;
  auto d = c;
  d.seed = 2;
  CHECK_FALSE(generate_scene(c).frames == generate_scene(d).frames);
}

TEST_CASE("generate_scene: linear motion under a static camera translates boxes monotonically") {
  SceneConfig c;
  c.seed = 31;
  c.object_count = 1;
  c.object_motion = ObjectMotion::kLinear;
  const auto s = generate_scene(c);
  const auto& o = s.annotation.objects.at(0);
  const auto recomputed = cond::fit_boxes(
      cond::project_trajectory(o.points, {s.annotation.poses, s.annotation.intrinsics}), 0, c.width, c.height);
  const double dir = o.points.at(16, 0).x - o.points.at(0, 0).x;
  REQUIRE(std::abs(dir) > 0.4);
  for (int j = 1; j < 17; ++j) {
    const double cx = (o.boxes.boxes[j].x0 + o.boxes.boxes[j].x1) / 2;
    const double px = (o.boxes.boxes[j - 1].x0 + o.boxes.boxes[j - 1].x1) / 2;
    CHECK((cx - px) * dir > 0);
    CHECK(o.boxes.boxes[j] == recomputed.boxes[j]);
  }
}

TEST_CASE("annotations are consistent with geometry on 40 clips") {
  const float tau = 60.0f / 255.0f;
  for (const auto& c : sweep(40)) {
    CAPTURE(c.seed);
    const auto s = generate_scene(c);
    const auto& a = s.annotation;
    const geom::CameraTrajectory cam{a.poses, a.intrinsics};
    REQUIRE(a.objects.size() == static_cast<std::size_t>(c.object_count));
    std::size_t inside = 0, total = 0;
    for (const auto& o : a.objects) {
      CHECK(a.caption.find(o.label) != std::string::npos);
      const auto proj = cond::project_trajectory(o.points, cam);
      CHECK(cond::fit_boxes(proj, 0, c.width, c.height, o.object_id) == o.boxes);
      for (int j = 0; j < c.num_frames; ++j)
        for (int p = 0; p < o.points.points_per_frame; ++p) {
          const auto& q = proj.at(j, p);
          ++total;
          inside += o.masks[j].at(geom::pixel_index(q.u), geom::pixel_index(q.v));
        }
    }
    CHECK(inside >= 0.99 * total);

    // object pixels carry the exact label color; nothing else comes within tau of it
    for (int j = 0; j < c.num_frames; j += 4)
      for (int y = 0; y < c.height; ++y)
        for (int x = 0; x < c.width; ++x) {
          const auto px = s.frames[j].at(x, y);
          for (int l = 1; l < 5; ++l) {
            const auto col = *cond::label_color(l);
            const float d = std::hypot(px.r - col.r, px.g - col.g, px.b - col.b);
            CHECK((d == 0 || d > tau));
          }
        }

    // frame-1 depth re-rendered from the reference pose reproduces frame 1
    const auto ref = geom::quantize8(s.frames[0]);
    const auto cloud = geom::unproject_depth(s.depth0, a.intrinsics, geom::CameraPose::identity(), ref);
    const auto r = geom::splat_render(cloud, a.intrinsics, geom::CameraPose::identity(), 0);
    CHECK(r.valid.count() == static_cast<std::size_t>(c.width * c.height));
    CHECK(r.image == ref);
  }
}

TEST_CASE("manifest round trip, required fields, unknown fields") {
  SceneConfig c;
  c.seed = 4;
  c.object_count = 2;
  auto a = generate_scene(c).annotation;
  a.clip_id = "clip_x";
  const auto text = annotation_to_json(a);
  CHECK(annotation_to_json(annotation_from_json(text)) == text);
  const auto back = annotation_from_json(text);
  CHECK(back.poses == a.poses);
  CHECK(back.objects[1].points == a.objects[1].points);
  CHECK(back.objects[1].masks == a.objects[1].masks);

  auto j = nlohmann::json::parse(text);
  j.erase("depth");
  try {
    annotation_from_json(j.dump());
    FAIL("missing depth accepted");
  } catch (const SchemaError& e) {
    CHECK(e.path() == "/depth");
  }

  j = nlohmann::json::parse(text);
  j["producer"] = {{"tool", "other"}, {"rev", 3}};
  j["objects"][0]["score"] = 0.5;
  const auto extended = annotation_from_json(j.dump());
  const auto out = nlohmann::json::parse(annotation_to_json(extended));
  CHECK(out["producer"] == j["producer"]);
  CHECK(out["objects"][0]["score"] == 0.5);

  j = nlohmann::json::parse(text);
  j["version"] = "rc-0";
  CHECK_THROWS_AS(annotation_from_json(j.dump()), SchemaError);
}

TEST_CASE("mask run-length encoding round trips") {
  geom::Mask m(5, 3);
  m.set(0, 0, true);
  m.set(4, 1, true);
  m.set(0, 2, true);
  CHECK(mask_from_runs(mask_to_runs(m), 5, 3) == m);
  CHECK(mask_to_runs(geom::Mask(2, 2)) == std::vector<int>{4});
  CHECK_THROWS_AS(mask_from_runs({3}, 2, 2), SchemaError);
}

TEST_CASE("make_dataset: layout, idempotent rerun, spec export") {
  TempDir tmp("mf_test_synth_ds");
  const auto one = make_dataset(1, 7, tmp.path);
  CHECK(one.clips.size() == 1);
  const fs::path clip = tmp.path / "clip_00000";
  for (const char* f : {"frames/000.png", "frames/016.png", "depth0.pfm", "annotation.json", "caption.txt"})
    CHECK(fs::exists(clip / f));
  CHECK(read_index(tmp.path / "index.json").clips.size() == 1);

  const auto index_bytes = slurp(tmp.path / "index.json");
  const auto stamp = fs::last_write_time(clip / "frames" / "000.png");
  make_dataset(1, 7, tmp.path);
  CHECK(slurp(tmp.path / "index.json") == index_bytes);
  CHECK(fs::last_write_time(clip / "frames" / "000.png") == stamp);

  const auto ann = read_manifest(clip / "annotation.json");
  const auto spec = spec_from_annotation(ann, clip);
  CHECK_NOTHROW(cond::validate_spec(spec));
  const auto pkg = cond::build_control_package(spec);
  for (std::size_t i = 0; i < ann.objects.size(); ++i) CHECK(pkg.boxes[i] == ann.objects[i].boxes);
  CHECK(pkg.guidance.frames.size() == 17);
}

TEST_CASE("make_dataset: 256 clips within the time budget") {
  TempDir tmp("mf_test_synth_256");
  const auto t0 = std::chrono::steady_clock::now();
  const auto index = make_dataset(256, 11, tmp.path);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("256 clips in " << seconds << " s");
  CHECK(index.clips.size() == 256);
  CHECK(seconds < 300);
}
