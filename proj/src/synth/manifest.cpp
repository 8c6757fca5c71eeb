#include "mf/synth/manifest.hpp"

#include <fmt/format.h>

#include <fstream>
#include <set>
#include <sstream>

#include "mf/common/error.hpp"
#include "mf/conditioning/vocabulary.hpp"

namespace mf::synth {

using nlohmann::json;

namespace {

const std::set<std::string> kTopKeys{"version", "clip_id", "config", "caption", "intrinsics",
                                     "camera",  "depth",   "objects"};
const std::set<std::string> kObjectKeys{"id", "label", "color", "box", "points", "boxes", "masks"};

json vec(const geom::Vec3& v) { return json::array({v.x, v.y, v.z}); }

geom::Vec3 vec(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw SchemaError(path, "expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

const json& need(const json& j, const std::string& path, const char* key) {
  if (!j.is_object()) throw SchemaError(path.empty() ? "/" : path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(path + "/" + key, "required field is missing");
  return *it;
}

}  // namespace

std::vector<int> mask_to_runs(const geom::Mask& mask) {
  std::vector<int> runs;
  std::uint8_t current = 0;
  int run = 0;
  for (auto b : mask.bits) {
    const std::uint8_t v = b ? 1 : 0;
    if (v != current) {
      runs.push_back(run);
      run = 0;
      current = v;
    }
    ++run;
  }
  runs.push_back(run);
  return runs;
}

geom::Mask mask_from_runs(const std::vector<int>& runs, int width, int height) {
  geom::Mask m(width, height);
  std::size_t pos = 0;
  bool value = false;
  for (int r : runs) {
    if (r < 0 || pos + static_cast<std::size_t>(r) > m.bits.size()) throw SchemaError("", "mask runs overflow");
    std::fill_n(m.bits.begin() + static_cast<std::ptrdiff_t>(pos), r, value ? 1 : 0);
    pos += static_cast<std::size_t>(r);
    value = !value;
  }
  if (pos != m.bits.size()) throw SchemaError("", "mask runs do not cover the image");
  return m;
}

std::string annotation_to_json(const SceneAnnotation& a) {
  json j = a.extra.is_object() ? a.extra : json::object();
  j["version"] = a.version;
  j["clip_id"] = a.clip_id;
  j["config"] = config_to_json(a.config);
  j["caption"] = a.caption;
  j["intrinsics"] = {{"fx", a.intrinsics.fx}, {"fy", a.intrinsics.fy},       {"cx", a.intrinsics.cx},
                     {"cy", a.intrinsics.cy}, {"width", a.intrinsics.width}, {"height", a.intrinsics.height}};
  j["camera"] = json::array();
  for (const auto& p : a.poses) j["camera"].push_back({{"rotation", p.rotation.m}, {"translation", vec(p.translation)}});
  j["depth"] = a.depth;
  j["objects"] = json::array();
  for (const auto& o : a.objects) {
    json jo = o.extra.is_object() ? o.extra : json::object();
    jo["id"] = o.object_id;
    jo["label"] = o.label;
    jo["color"] = {o.color.r, o.color.g, o.color.b};
    jo["box"] = {{"center", vec(o.box.center)}, {"half_extents", vec(o.box.half_extents)}};
    json pts = json::array();
    for (int f = 0; f < o.points.frames; ++f) {
      json row = json::array();
      for (int p = 0; p < o.points.points_per_frame; ++p) row.push_back(vec(o.points.at(f, p)));
      pts.push_back(std::move(row));
    }
    jo["points"] = std::move(pts);
    json boxes = json::array();
    for (std::size_t f = 0; f < o.boxes.size(); ++f) {
      const auto& b = o.boxes.boxes[f];
      boxes.push_back(o.boxes.visible[f] ? json::array({b.x0, b.y0, b.x1, b.y1}) : json(nullptr));
    }
    jo["boxes"] = std::move(boxes);
    jo["masks"] = json::array();
    for (const auto& m : o.masks) jo["masks"].push_back(mask_to_runs(m));
    j["objects"].push_back(std::move(jo));
  }
  return j.dump(1) + "\n";
}

SceneAnnotation annotation_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("/", fmt::format("malformed JSON: {}", e.what()));
  }
  SceneAnnotation a;
  try {
    a.version = need(j, "", "version").get<std::string>();
    if (a.version != kManifestVersion)
      throw SchemaError("/version", fmt::format("unsupported version '{}', expected '{}'", a.version, kManifestVersion));
    a.clip_id = need(j, "", "clip_id").get<std::string>();
    a.config = config_from_json(need(j, "", "config"));
    a.caption = need(j, "", "caption").get<std::string>();
    const auto& ji = need(j, "", "intrinsics");
    a.intrinsics = {need(ji, "/intrinsics", "fx").get<double>(),    need(ji, "/intrinsics", "fy").get<double>(),
                    need(ji, "/intrinsics", "cx").get<double>(),    need(ji, "/intrinsics", "cy").get<double>(),
                    need(ji, "/intrinsics", "width").get<int>(), need(ji, "/intrinsics", "height").get<int>()};
    const auto& jc = need(j, "", "camera");
    for (std::size_t i = 0; i < jc.size(); ++i) {
      const std::string path = fmt::format("/camera/{}", i);
      geom::CameraPose p;
      const auto& r = need(jc[i], path, "rotation");
      if (!r.is_array() || r.size() != 9) throw SchemaError(path + "/rotation", "expected 9 numbers");
      for (std::size_t k = 0; k < 9; ++k) p.rotation.m[k] = r[k].get<double>();
      p.translation = vec(need(jc[i], path, "translation"), path + "/translation");
      a.poses.push_back(p);
    }
    if (a.poses.size() != static_cast<std::size_t>(a.config.num_frames))
      throw SchemaError("/camera", fmt::format("{} poses for {} frames", a.poses.size(), a.config.num_frames));
    a.depth = need(j, "", "depth").get<std::string>();
    const auto& jo = need(j, "", "objects");
    for (std::size_t i = 0; i < jo.size(); ++i) {
      const std::string path = fmt::format("/objects/{}", i);
      ObjectAnnotation o;
      o.object_id = need(jo[i], path, "id").get<int>();
      o.label = need(jo[i], path, "label").get<std::string>();
      const auto idx = cond::label_index(o.label);
      if (!idx) throw SchemaError(path + "/label", fmt::format("unknown label '{}'", o.label));
      o.label_index = *idx;
      const auto& c = need(jo[i], path, "color");
      o.color = {c.at(0).get<float>(), c.at(1).get<float>(), c.at(2).get<float>()};
      const auto& b = need(jo[i], path, "box");
      o.box = {vec(need(b, path + "/box", "center"), path + "/box/center"),
               vec(need(b, path + "/box", "half_extents"), path + "/box/half_extents")};
      const auto& pts = need(jo[i], path, "points");
      const int n = static_cast<int>(pts.size());
      if (n != a.config.num_frames)
        throw SchemaError(path + "/points", fmt::format("{} frames, expected {}", n, a.config.num_frames));
      const int np = n ? static_cast<int>(pts[0].size()) : 0;
      o.points = cond::ObjectTrajectory3D(o.object_id, n, np);
      for (int f = 0; f < n; ++f) {
        if (static_cast<int>(pts[f].size()) != np)
          throw SchemaError(fmt::format("{}/points/{}", path, f), "ragged point rows");
        for (int p = 0; p < np; ++p) o.points.at(f, p) = vec(pts[f][p], fmt::format("{}/points/{}/{}", path, f, p));
      }
      o.boxes.object_id = o.object_id;
      const auto& jb = need(jo[i], path, "boxes");
      for (const auto& x : jb) {
        if (x.is_null()) {
          o.boxes.boxes.push_back({});
          o.boxes.visible.push_back(0);
        } else {
          o.boxes.boxes.push_back({x.at(0).get<double>(), x.at(1).get<double>(), x.at(2).get<double>(),
                                   x.at(3).get<double>()});
          o.boxes.visible.push_back(1);
        }
      }
      const auto& jm = need(jo[i], path, "masks");
      for (std::size_t f = 0; f < jm.size(); ++f) {
        try {
          o.masks.push_back(mask_from_runs(jm[f].get<std::vector<int>>(), a.intrinsics.width, a.intrinsics.height));
        } catch (const SchemaError& e) {
          throw SchemaError(fmt::format("{}/masks/{}", path, f), e.what());
        }
      }
      for (auto it = jo[i].begin(); it != jo[i].end(); ++it)
        if (!kObjectKeys.contains(it.key())) o.extra[it.key()] = it.value();
      a.objects.push_back(std::move(o));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("/", fmt::format("type error: {}", e.what()));
  }
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!kTopKeys.contains(it.key())) a.extra[it.key()] = it.value();
  return a;
}

void write_manifest(const SceneAnnotation& a, const std::filesystem::path& path) {
  const std::string text = annotation_to_json(a);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write {}", tmp.string()));
    f << text;
    if (!f) throw IoError(fmt::format("short write to {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

SceneAnnotation read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << f.rdbuf();
  return annotation_from_json(ss.str());
}

}  // namespace mf::synth
