#include "mf/synth/scene.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "mf/common/error.hpp"
#include "mf/conditioning/vocabulary.hpp"

namespace mf::synth {

using geom::CameraPose;
using geom::Mat3;
using geom::Rgb;
using geom::Vec3;

namespace {

constexpr double kGroundY = 1.0;  // y points down; camera sits 1 unit above the floor
constexpr double kBackZ = 7.0;
constexpr double kDeg = std::numbers::pi / 180.0;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double lattice(std::int64_t a, std::int64_t b, std::uint64_t seed) {
  const auto h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(a) * 0x632BE59BD9B4E019ull +
                                          static_cast<std::uint64_t>(b)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(double x, double y, double scale, std::uint64_t seed) {
  const double fx = x / scale, fy = y / scale;
  const double ix = std::floor(fx), iy = std::floor(fy);
  double tx = fx - ix, ty = fy - iy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const auto a = static_cast<std::int64_t>(ix), b = static_cast<std::int64_t>(iy);
  const double v00 = lattice(a, b, seed), v10 = lattice(a + 1, b, seed);
  const double v01 = lattice(a, b + 1, seed), v11 = lattice(a + 1, b + 1, seed);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

struct Texture {
  std::uint64_t seed;
  Rgb tint;

  Rgb at(double a, double b) const {
    const double n = 0.6 * value_noise(a, b, 0.35, seed) + 0.4 * value_noise(a, b, 0.12, seed + 1);
    const float g = static_cast<float>(0.2 + 0.5 * n);
    return {std::clamp(g + tint.r, 0.0f, 1.0f), std::clamp(g + tint.g, 0.0f, 1.0f), std::clamp(g + tint.b, 0.0f, 1.0f)};
  }
};

struct Cuboid {
  Vec3 lo, hi;
  Rgb color;
};

struct Hit {
  double t = INFINITY;
  int object = -1;  // -1 background
  Rgb color;
};

bool slab(const Vec3& o, const Vec3& d, const Cuboid& c, double& t_hit) {
  double t0 = 0, t1 = INFINITY;
  for (int a = 0; a < 3; ++a) {
    const double oa = o[a], da = d[a];
    const double lo = a == 0 ? c.lo.x : a == 1 ? c.lo.y : c.lo.z;
    const double hi = a == 0 ? c.hi.x : a == 1 ? c.hi.y : c.hi.z;
    if (da == 0) {
      if (oa < lo || oa > hi) return false;
      continue;
    }
    double ta = (lo - oa) / da, tb = (hi - oa) / da;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  t_hit = t0;
  return t0 > 1e-9;
}

// d is R * ((u-cx)/fx, (v-cy)/fy, 1), so t is camera depth.
Hit trace(const Vec3& o, const Vec3& d, const std::vector<Cuboid>& cuboids, const Texture& back,
          const Texture& floor) {
  Hit h;
  if (d.z > 0) {
    const double t = (kBackZ - o.z) / d.z;
    if (t > 0) {
      const Vec3 p = o + d * t;
      h = {t, -1, back.at(p.x, p.y)};
    }
  }
  if (d.y > 0) {
    const double t = (kGroundY - o.y) / d.y;
    if (t > 0 && t < h.t) {
      const Vec3 p = o + d * t;
      h = {t, -1, floor.at(p.x, p.z)};
    }
  }
  for (std::size_t i = 0; i < cuboids.size(); ++i) {
    double t;
    if (slab(o, d, cuboids[i], t) && t < h.t) h = {t, static_cast<int>(i), cuboids[i].color};
  }
  return h;
}

struct P2 {
  double x, y;
};

double cross2(const P2& o, const P2& a, const P2& b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

std::vector<P2> convex_hull(std::vector<P2> p) {
  std::sort(p.begin(), p.end(), [](const P2& a, const P2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  std::vector<P2> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross2(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross2(h[k - 2], h[k - 1], p[i - 1]) <= 0) --k;
    h[k++] = p[i - 1];
  }
  h.resize(k - 1);
  return h;
}

bool square_touches_hull(double cx, double cy, const std::vector<P2>& hull) {
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const P2& a = hull[i];
    const P2& b = hull[(i + 1) % hull.size()];
    const double nx = b.y - a.y, ny = a.x - b.x;
    double hmin = INFINITY, hmax = -INFINITY;
    for (const auto& q : hull) {
      const double s = q.x * nx + q.y * ny;
      hmin = std::min(hmin, s);
      hmax = std::max(hmax, s);
    }
    const double c = cx * nx + cy * ny, r = 0.5 * (std::abs(nx) + std::abs(ny));
    if (c + r < hmin || c - r > hmax) return false;
  }
  return true;
}

std::vector<CameraPose> camera_path(const SceneConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  auto sign = [&] { return u(rng) < 0.5 ? -1.0 : 1.0; };
  const int n = cfg.num_frames;
  std::vector<CameraPose> poses;
  switch (cfg.camera_motion) {
    case CameraMotion::kStatic:
      poses.assign(static_cast<std::size_t>(n), CameraPose::identity());
      break;
    case CameraMotion::kPan: {
      const double total = sign() * (6 + 6 * u(rng)) * kDeg;
      for (int j = 0; j < n; ++j) poses.push_back({geom::rotation_y(total * j / (n - 1)), {}});
      break;
    }
    case CameraMotion::kDolly: {
      const double total = sign() * (0.4 + 0.5 * u(rng));
      for (int j = 0; j < n; ++j) poses.push_back(CameraPose::translate(0, 0, total * j / (n - 1)));
      break;
    }
    case CameraMotion::kOrbit: {
      const double total = sign() * (8 + 7 * u(rng)) * kDeg;
      const Vec3 pivot{0, 0, 3.5};
      for (int j = 0; j < n; ++j) {
        const Mat3 r = geom::rotation_y(total * j / (n - 1));
        poses.push_back({r, pivot + r * Vec3{0, 0, -pivot.z}});
      }
      break;
    }
    case CameraMotion::kRandomSmooth: {
      std::array<double, 8> amp, freq, phase;
      const std::array<double, 4> scale{0.3, 0.05, 0.3, 6 * kDeg};  // x, y, z, yaw
      for (int k = 0; k < 8; ++k) {
        amp[k] = scale[k / 2] * (u(rng) - 0.5);
        freq[k] = 1 + 2 * u(rng);
        phase[k] = 2 * std::numbers::pi * u(rng);
      }
      auto curve = [&](int axis, double s) {
        double v = 0;
        for (int k = 2 * axis; k < 2 * axis + 2; ++k)
          v += amp[k] * (std::sin(freq[k] * s + phase[k]) - std::sin(phase[k]));
        return v;
      };
      for (int j = 0; j < n; ++j) {
        const double s = 2.0 * j / (n - 1);
        poses.push_back({geom::rotation_y(curve(3, s)), {curve(0, s), curve(1, s), curve(2, s)}});
      }
      break;
    }
  }
  return poses;
}

// amplitude shrinks with object count so lanes stay separable
std::vector<Vec3> object_path(const SceneConfig& cfg, const Vec3& start, double amplitude, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  auto sign = [&] { return u(rng) < 0.5 ? -1.0 : 1.0; };
  const int n = cfg.num_frames;
  std::vector<Vec3> c(static_cast<std::size_t>(n), start);
  switch (cfg.object_motion) {
    case ObjectMotion::kStatic:
      break;
    case ObjectMotion::kLinear: {
      const Vec3 delta{sign() * (0.5 + 0.5 * u(rng)) * amplitude, 0, (u(rng) - 0.5) * amplitude};
      for (int j = 0; j < n; ++j) c[j] = start + delta * (double(j) / (n - 1));
      break;
    }
    case ObjectMotion::kCircular: {
      const double r = (0.3 + 0.2 * u(rng)) * amplitude, w = sign() * (0.5 + 0.5 * u(rng)) * std::numbers::pi;
      const double p = 2 * std::numbers::pi * u(rng);
      for (int j = 0; j < n; ++j) {
        const double a = w * j / (n - 1) + p;
        c[j] = start + Vec3{r * (std::cos(a) - std::cos(p)), 0, r * (std::sin(a) - std::sin(p))};
      }
      break;
    }
    case ObjectMotion::kRandomSmooth: {
      std::array<double, 4> amp, freq, phase;
      for (int k = 0; k < 4; ++k) {
        amp[k] = 0.5 * (u(rng) - 0.5) * amplitude;
        freq[k] = 1 + 2 * u(rng);
        phase[k] = 2 * std::numbers::pi * u(rng);
      }
      for (int j = 0; j < n; ++j) {
        const double s = 2.0 * j / (n - 1);
        auto axis = [&](int a) {
          double v = 0;
          for (int k = 2 * a; k < 2 * a + 2; ++k) v += amp[k] * (std::sin(freq[k] * s + phase[k]) - std::sin(phase[k]));
          return v;
        };
        c[j] = start + Vec3{axis(0), 0, axis(1)};
      }
      break;
    }
  }
  return c;
}

std::string camera_phrase(CameraMotion m, const std::vector<CameraPose>& poses) {
  const auto& last = poses.back();
  const double yaw = std::atan2(last.rotation(0, 2), last.rotation(2, 2));
  switch (m) {
    case CameraMotion::kStatic: return "the camera is static";
    case CameraMotion::kPan: return yaw > 0 ? "the camera pans right" : "the camera pans left";
    case CameraMotion::kDolly: return last.translation.z > 0 ? "the camera dollies forward" : "the camera dollies backward";
    case CameraMotion::kOrbit: return yaw > 0 ? "the camera orbits right" : "the camera orbits left";
    case CameraMotion::kRandomSmooth: return "the camera drifts";
  }
  return "";
}

std::string object_phrase(ObjectMotion m, const std::vector<Vec3>& path) {
  const Vec3 d = path.back() - path.front();
  switch (m) {
    case ObjectMotion::kStatic: return "stays still";
    case ObjectMotion::kLinear:
      if (std::abs(d.x) >= std::abs(d.z)) return d.x > 0 ? "moves right" : "moves left";
      return d.z > 0 ? "moves away" : "moves closer";
    case ObjectMotion::kCircular: return "circles";
    case ObjectMotion::kRandomSmooth: return "wanders";
  }
  return "";
}

struct Attempt {
  Scene scene;
  bool feasible = false;
};

Attempt try_generate(const SceneConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  const auto k = cfg.intrinsics();
  Attempt out;
  auto& ann = out.scene.annotation;
  ann.config = cfg;
  ann.intrinsics = k;
  ann.poses = camera_path(cfg, rng);
  const geom::CameraTrajectory cam{ann.poses, k};

  const Texture back{splitmix(seed ^ 0xB0), {float(0.04 * (u(rng) - 0.5)), float(0.04 * (u(rng) - 0.5)),
                                             float(0.04 * (u(rng) - 0.5))}};
  const Texture floor{splitmix(seed ^ 0xF1), back.tint};

  std::array<int, 4> labels{1, 2, 3, 4};
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<std::vector<Vec3>> centers;
  std::vector<Vec3> halves;
  std::vector<std::string> phrases;
  const int m = cfg.object_count;
  const double size = m <= 1 ? 1.0 : (m == 2 ? 0.8 : 0.6);
  const double amplitude = 1.0 / std::max(m, 1);
  for (int i = 0; i < m; ++i) {
    const Vec3 h{(0.3 + 0.2 * u(rng)) * size, (0.3 + 0.2 * u(rng)) * size, (0.3 + 0.2 * u(rng)) * size};
    const double z = cfg.depth_min + (cfg.depth_max - cfg.depth_min) * u(rng);
    const double y = kGroundY - h.y;
    // x-interval at this depth that every camera pose keeps in view
    double lo = INFINITY, hi = -INFINITY;
    for (int g = -400; g <= 400; ++g) {
      const double x = g * z / 400.0;
      bool seen = true;
      for (const auto& pose : ann.poses) {
        const auto q = geom::project_point({x, y, z}, k, pose);
        const double margin = 2 + h.x * k.fx / std::max(q.depth, 1e-3);
        if (!q.valid || q.u < margin || q.u > cfg.width - 1 - margin) {
          seen = false;
          break;
        }
      }
      if (seen) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
    if (!(hi > lo)) return out;
    auto path = object_path(cfg, {0, y, z}, amplitude, rng);
    double pmin = INFINITY, pmax = -INFINITY;
    for (const auto& c : path) {
      pmin = std::min(pmin, c.x);
      pmax = std::max(pmax, c.x);
    }
    const double lane = lo + (hi - lo) * (i + 0.5 + 0.3 * (u(rng) - 0.5)) / m;
    const Vec3 shift{lane - (pmin + pmax) / 2, 0, 0};
    for (auto& c : path) c += shift;
    const Vec3 start = path.front();
    centers.push_back(std::move(path));
    halves.push_back(h);

    ObjectAnnotation o;
    o.object_id = i;
    o.label_index = labels[static_cast<std::size_t>(i)];
    o.label = std::string(cond::label_text(o.label_index));
    o.color = *cond::label_color(o.label_index);
    o.box = {start, h};
    o.points = cond::ObjectTrajectory3D(i, cfg.num_frames, cond::kDefaultPointsPerObject);
    const auto local = cond::sample_object_points({{0, 0, 0}, h}, cond::kDefaultPointsPerObject);
    for (int j = 0; j < cfg.num_frames; ++j)
      for (int p = 0; p < cond::kDefaultPointsPerObject; ++p) o.points.at(j, p) = centers.back()[j] + local[p];
    const auto proj = cond::project_trajectory(o.points, cam);
    for (const auto& q : proj.points)
      if (!q.valid || q.u < 0 || q.v < 0 || q.u > cfg.width - 1 || q.v > cfg.height - 1) return out;
    o.boxes = cond::fit_boxes(proj, 0, cfg.width, cfg.height, i);
    phrases.push_back(fmt::format("a {} {}", o.label, object_phrase(cfg.object_motion, centers.back())));
    ann.objects.push_back(std::move(o));
  }
  for (std::size_t a = 0; a < ann.objects.size(); ++a)
    for (std::size_t b = 0; b < a; ++b)
      for (int j = 0; j < cfg.num_frames; ++j) {
        const auto& p = ann.objects[a].boxes.boxes[j];
        const auto& q = ann.objects[b].boxes.boxes[j];
        if (p.x0 <= q.x1 + 1 && q.x0 <= p.x1 + 1 && p.y0 <= q.y1 + 1 && q.y0 <= p.y1 + 1) return out;
      }

  std::string caption;
  for (std::size_t i = 0; i < phrases.size(); ++i) caption += (i == 0 ? "" : " and ") + phrases[i];
  ann.caption = (caption.empty() ? std::string("an empty room") : caption) + " while " +
                camera_phrase(cfg.camera_motion, ann.poses);

  const int w = cfg.width, h = cfg.height;
  out.scene.depth0 = geom::DepthMap(w, h);
  for (auto& o : ann.objects) o.masks.assign(static_cast<std::size_t>(cfg.num_frames), geom::Mask(w, h));
  for (int j = 0; j < cfg.num_frames; ++j) {
    const auto& pose = ann.poses[static_cast<std::size_t>(j)];
    std::vector<Cuboid> cuboids;
    for (std::size_t i = 0; i < centers.size(); ++i)
      cuboids.push_back({centers[i][j] - halves[i], centers[i][j] + halves[i], ann.objects[i].color});
    geom::Image frame(w, h);
    std::vector<int> owner(static_cast<std::size_t>(w) * h, -1);
    std::vector<double> depth(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Vec3 d = pose.rotation * Vec3{(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0};
        const Hit hit = trace(pose.translation, d, cuboids, back, floor);
        frame.set(x, y, hit.color);
        owner[static_cast<std::size_t>(y) * w + x] = hit.object;
        depth[static_cast<std::size_t>(y) * w + x] = hit.t;
        if (j == 0) out.scene.depth0.set(x, y, static_cast<float>(hit.t));
      }
    out.scene.frames.push_back(std::move(frame));

    for (std::size_t i = 0; i < ann.objects.size(); ++i) {
      auto& o = ann.objects[i];
      std::vector<P2> corners;
      for (int p = 1; p < 9; ++p) {
        const auto q = geom::project_point(o.points.at(j, p), k, pose);
        corners.push_back({q.u, q.v});
      }
      const auto hull = convex_hull(corners);
      const auto& b = o.boxes.boxes[static_cast<std::size_t>(j)];
      const double center_depth = pose.to_camera(centers[i][j]).z;
      for (int y = std::max(0, int(std::floor(b.y0 - 0.5))); y <= std::min(h - 1, int(std::ceil(b.y1 + 0.5))); ++y)
        for (int x = std::max(0, int(std::floor(b.x0 - 0.5))); x <= std::min(w - 1, int(std::ceil(b.x1 + 0.5)));
             ++x) {
          if (!square_touches_hull(x, y, hull)) continue;
          const auto idx = static_cast<std::size_t>(y) * w + x;
          // another object in front at this pixel center hides it
          if (owner[idx] >= 0 && owner[idx] != static_cast<int>(i) && depth[idx] < center_depth) continue;
          o.masks[static_cast<std::size_t>(j)].set(x, y, true);
        }
    }
  }
  out.feasible = true;
  return out;
}

}  // namespace

std::string to_string(CameraMotion m) {
  switch (m) {
    case CameraMotion::kStatic: return "static";
    case CameraMotion::kPan: return "pan";
    case CameraMotion::kDolly: return "dolly";
    case CameraMotion::kOrbit: return "orbit";
    case CameraMotion::kRandomSmooth: return "random-smooth";
  }
  return "";
}

std::string to_string(ObjectMotion m) {
  switch (m) {
    case ObjectMotion::kStatic: return "static";
    case ObjectMotion::kLinear: return "linear";
    case ObjectMotion::kCircular: return "circular";
    case ObjectMotion::kRandomSmooth: return "random-smooth";
  }
  return "";
}

CameraMotion camera_motion_from_string(const std::string& s) {
  for (auto m : {CameraMotion::kStatic, CameraMotion::kPan, CameraMotion::kDolly, CameraMotion::kOrbit,
                 CameraMotion::kRandomSmooth})
    if (to_string(m) == s) return m;
  throw ValidationError(fmt::format("unknown camera motion '{}' (static|pan|dolly|orbit|random-smooth)", s));
}

ObjectMotion object_motion_from_string(const std::string& s) {
  for (auto m : {ObjectMotion::kStatic, ObjectMotion::kLinear, ObjectMotion::kCircular, ObjectMotion::kRandomSmooth})
    if (to_string(m) == s) return m;
  throw ValidationError(fmt::format("unknown object motion '{}' (static|linear|circular|random-smooth)", s));
}

void SceneConfig::validate() const {
  if (num_frames < 2) throw ValidationError(fmt::format("scene needs N >= 2 frames, got {}", num_frames));
  if (width < 8 || height < 8) throw ValidationError(fmt::format("scene extents {}x{} too small", width, height));
  if (!(focal_px > 0)) throw ValidationError("focal length must be positive");
  if (object_count < 0 || object_count > 3)
    throw ValidationError(fmt::format("object count must be in [0,3], got {}", object_count));
  if (!(depth_min > 0.5) || !(depth_max >= depth_min) || depth_max > kBackZ - 1.5)
    throw ValidationError(fmt::format("depth range [{}, {}] outside (0.5, {}]", depth_min, depth_max, kBackZ - 1.5));
}

geom::CameraIntrinsics SceneConfig::intrinsics() const {
  return {focal_px, focal_px, (width - 1) / 2.0, (height - 1) / 2.0, width, height};
}

nlohmann::json config_to_json(const SceneConfig& c) {
  return {{"seed", c.seed},
          {"num_frames", c.num_frames},
          {"width", c.width},
          {"height", c.height},
          {"focal_px", c.focal_px},
          {"camera_motion", to_string(c.camera_motion)},
          {"object_count", c.object_count},
          {"object_motion", to_string(c.object_motion)},
          {"depth_range", {c.depth_min, c.depth_max}}};
}

SceneConfig config_from_json(const nlohmann::json& j, const std::string& path) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(key)) throw SchemaError(path + "/" + key, "required field is missing");
    return j.at(key);
  };
  SceneConfig c;
  try {
    c.seed = need("seed").get<std::uint64_t>();
    c.num_frames = need("num_frames").get<int>();
    c.width = need("width").get<int>();
    c.height = need("height").get<int>();
    c.focal_px = need("focal_px").get<double>();
    c.camera_motion = camera_motion_from_string(need("camera_motion").get<std::string>());
    c.object_count = need("object_count").get<int>();
    c.object_motion = object_motion_from_string(need("object_motion").get<std::string>());
    const auto& d = need("depth_range");
    if (!d.is_array() || d.size() != 2) throw SchemaError(path + "/depth_range", "expected [min, max]");
    c.depth_min = d[0].get<double>();
    c.depth_max = d[1].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path, e.what());
  } catch (const ValidationError& e) {
    throw SchemaError(path, e.what());
  }
  return c;
}

Scene generate_scene(const SceneConfig& config) {
  config.validate();
  std::uint64_t seed = config.seed;
  for (int attempt = 1; attempt <= kMaxSceneAttempts; ++attempt) {
    auto a = try_generate(config, seed);
    if (a.feasible) {
      a.scene.attempts = attempt;
      return std::move(a.scene);
    }
    seed = splitmix(seed + static_cast<std::uint64_t>(attempt));
  }
  throw ValidationError(fmt::format("no feasible layout for seed {} after {} attempts", config.seed,
                                    kMaxSceneAttempts));
}

}  // namespace mf::synth
