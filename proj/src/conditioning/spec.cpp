#include "mf/conditioning/spec.hpp"

#include <fmt/format.h>

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "mf/common/error.hpp"
#include "mf/conditioning/vocabulary.hpp"

namespace mf::cond {

using nlohmann::json;

bool ControlSpec::operator==(const ControlSpec& o) const {
  return version == o.version && reference_image == o.reference_image && depth_map == o.depth_map &&
         intrinsics == o.intrinsics && num_frames == o.num_frames && camera == o.camera && objects == o.objects &&
         caption == o.caption && seed == o.seed;
}

namespace {

std::string at(const std::string& path, const std::string& key) { return path + "/" + key; }
std::string at(const std::string& path, std::size_t i) { return path + "/" + std::to_string(i); }

const json& field(const json& j, const std::string& path, const char* key) {
  if (!j.is_object()) throw SchemaError(path.empty() ? "/" : path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(at(path, key), "required field is missing");
  return *it;
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw SchemaError(path, "expected a number");
  return j.get<double>();
}

std::int64_t integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw SchemaError(path, "expected an integer");
  return j.get<std::int64_t>();
}

std::string string(const json& j, const std::string& path) {
  if (!j.is_string()) throw SchemaError(path, "expected a string");
  return j.get<std::string>();
}

const json& array(const json& j, const std::string& path, std::optional<std::size_t> size = std::nullopt) {
  if (!j.is_array()) throw SchemaError(path, "expected an array");
  if (size && j.size() != *size) throw SchemaError(path, fmt::format("expected {} elements, got {}", *size, j.size()));
  return j;
}

Vec3 vec3(const json& j, const std::string& path) {
  array(j, path, 3);
  return {number(j[0], at(path, 0)), number(j[1], at(path, 1)), number(j[2], at(path, 2))};
}

json to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

}  // namespace

void validate_spec(const ControlSpec& s) {
  if (s.version != kSpecVersion)
    throw SchemaError("/version", fmt::format("unsupported version '{}'; this build reads '{}'. Re-export the spec "
                                              "from the studio or `condition` to upgrade it",
                                              s.version, kSpecVersion));
  try {
    s.intrinsics.validate();
  } catch (const ValidationError& e) {
    throw SchemaError("/intrinsics", e.what());
  }
  if (s.num_frames < 1) throw SchemaError("/num_frames", "must be >= 1");
  if (s.camera.size() != static_cast<std::size_t>(s.num_frames))
    throw SchemaError("/camera", fmt::format("has {} poses but num_frames is {}", s.camera.size(), s.num_frames));
  for (std::size_t j = 0; j < s.camera.size(); ++j)
    if (!s.camera[j].is_valid()) throw SchemaError(at("/camera", j) + "/rotation", "not a proper rotation");
  std::set<int> ids;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    const std::string path = at("/objects", i);
    if (!ids.insert(o.entity.object_id).second)
      throw SchemaError(path + "/id", fmt::format("duplicate object id {}", o.entity.object_id));
    const auto idx = label_index(o.entity.label);
    if (!idx || *idx != o.entity.label_index)
      throw SchemaError(path + "/label", fmt::format("label '{}' is not in the entity vocabulary", o.entity.label));
    if (o.points.has_value() == o.box.has_value())
      throw SchemaError(path, "exactly one of 'points' or 'box' must be given");
    if (o.points) {
      if (o.points->frames != s.num_frames)
        throw SchemaError(path + "/points",
                          fmt::format("has {} frames but num_frames is {}", o.points->frames, s.num_frames));
      if (o.points->points_per_frame < 1) throw SchemaError(path + "/points", "needs >= 1 point per frame");
      for (const auto& p : o.points->points)
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
          throw SchemaError(path + "/points", "non-finite coordinate");
    } else {
      const auto& h = o.box->half_extents;
      if (!(h.x > 0 && h.y > 0 && h.z > 0)) throw SchemaError(path + "/box/half_extents", "must be positive");
      try {
        box_keyframes_to_trajectory(*o.box, o.keyframes, s.num_frames, 1);
      } catch (const ValidationError& e) {
        throw SchemaError(path + "/keyframes", e.what());
      }
    }
  }
}

std::string spec_to_json(const ControlSpec& s) {
  json j;
  j["version"] = s.version;
  j["reference_image"] = s.reference_image.generic_string();
  j["depth_map"] = s.depth_map.generic_string();
  j["intrinsics"] = {{"fx", s.intrinsics.fx}, {"fy", s.intrinsics.fy},       {"cx", s.intrinsics.cx},
                     {"cy", s.intrinsics.cy}, {"width", s.intrinsics.width}, {"height", s.intrinsics.height}};
  j["num_frames"] = s.num_frames;
  j["camera"] = json::array();
  for (const auto& p : s.camera)
    j["camera"].push_back({{"rotation", p.rotation.m}, {"translation", to_json(p.translation)}});
  j["objects"] = json::array();
  for (const auto& o : s.objects) {
    json jo{{"id", o.entity.object_id}, {"label", o.entity.label}};
    if (o.points) {
      json frames = json::array();
      for (int f = 0; f < o.points->frames; ++f) {
        json row = json::array();
        for (int p = 0; p < o.points->points_per_frame; ++p) row.push_back(to_json(o.points->at(f, p)));
        frames.push_back(std::move(row));
      }
      jo["points"] = std::move(frames);
    }
    if (o.box) {
      jo["box"] = {{"center", to_json(o.box->center)}, {"half_extents", to_json(o.box->half_extents)}};
      jo["keyframes"] = json::array();
      for (const auto& k : o.keyframes) jo["keyframes"].push_back(json::array({k.frame, to_json(k.center)}));
    }
    j["objects"].push_back(std::move(jo));
  }
  j["caption"] = s.caption;
  j["seed"] = s.seed;
  return j.dump(2) + "\n";
}

ControlSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("/", fmt::format("malformed JSON: {}", e.what()));
  }
  ControlSpec s;
  s.version = string(field(j, "", "version"), "/version");
  if (s.version != kSpecVersion) validate_spec(s);  // reports the upgrade hint before anything else
  s.reference_image = string(field(j, "", "reference_image"), "/reference_image");
  s.depth_map = string(field(j, "", "depth_map"), "/depth_map");

  const auto& ji = field(j, "", "intrinsics");
  s.intrinsics = {number(field(ji, "/intrinsics", "fx"), "/intrinsics/fx"),
                  number(field(ji, "/intrinsics", "fy"), "/intrinsics/fy"),
                  number(field(ji, "/intrinsics", "cx"), "/intrinsics/cx"),
                  number(field(ji, "/intrinsics", "cy"), "/intrinsics/cy"),
                  static_cast<int>(integer(field(ji, "/intrinsics", "width"), "/intrinsics/width")),
                  static_cast<int>(integer(field(ji, "/intrinsics", "height"), "/intrinsics/height"))};
  s.num_frames = static_cast<int>(integer(field(j, "", "num_frames"), "/num_frames"));

  const auto& jc = array(field(j, "", "camera"), "/camera");
  for (std::size_t i = 0; i < jc.size(); ++i) {
    const std::string path = at("/camera", i);
    const auto& r = array(field(jc[i], path, "rotation"), path + "/rotation", 9);
    geom::CameraPose pose;
    for (std::size_t k = 0; k < 9; ++k) pose.rotation.m[k] = number(r[k], at(path + "/rotation", k));
    pose.translation = vec3(field(jc[i], path, "translation"), path + "/translation");
    s.camera.push_back(pose);
  }

  const auto& jo = array(field(j, "", "objects"), "/objects");
  for (std::size_t i = 0; i < jo.size(); ++i) {
    const std::string path = at("/objects", i);
    ObjectSpec o;
    o.entity.object_id = static_cast<int>(integer(field(jo[i], path, "id"), path + "/id"));
    o.entity.label = string(field(jo[i], path, "label"), path + "/label");
    o.entity.label_index = label_index(o.entity.label).value_or(-1);
    if (jo[i].contains("points")) {
      const auto& frames = array(jo[i]["points"], path + "/points");
      const std::size_t np = frames.empty() ? 0 : array(frames[0], path + "/points/0").size();
      ObjectTrajectory3D t(o.entity.object_id, static_cast<int>(frames.size()), static_cast<int>(np));
      for (std::size_t f = 0; f < frames.size(); ++f) {
        const std::string fp = at(path + "/points", f);
        const auto& row = array(frames[f], fp, np);
        for (std::size_t p = 0; p < np; ++p) t.at(static_cast<int>(f), static_cast<int>(p)) = vec3(row[p], at(fp, p));
      }
      o.points = std::move(t);
    }
    if (jo[i].contains("box")) {
      const auto& jb = jo[i]["box"];
      o.box = Box3D{vec3(field(jb, path + "/box", "center"), path + "/box/center"),
                    vec3(field(jb, path + "/box", "half_extents"), path + "/box/half_extents")};
      const auto& kf = array(field(jo[i], path, "keyframes"), path + "/keyframes");
      for (std::size_t k = 0; k < kf.size(); ++k) {
        const std::string kp = at(path + "/keyframes", k);
        array(kf[k], kp, 2);
        o.keyframes.push_back({static_cast<int>(integer(kf[k][0], at(kp, 0))), vec3(kf[k][1], at(kp, 1))});
      }
    }
    s.objects.push_back(std::move(o));
  }
  s.caption = string(field(j, "", "caption"), "/caption");
  const auto& seed = field(j, "", "seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0))
    throw SchemaError("/seed", "expected a non-negative integer");
  s.seed = seed.get<std::uint64_t>();
  validate_spec(s);
  return s;
}

void write_spec(const ControlSpec& spec, const std::filesystem::path& path) {
  validate_spec(spec);
  const std::string text = spec_to_json(spec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write {}", tmp.string()));
    f << text;
  }
  std::filesystem::rename(tmp, path);
}

ControlSpec read_spec(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot open spec {}", path.string()));
  std::ostringstream ss;
  ss << f.rdbuf();
  ControlSpec s = spec_from_json(ss.str());
  s.base_dir = path.parent_path();
  return s;
}

}  // namespace mf::cond
