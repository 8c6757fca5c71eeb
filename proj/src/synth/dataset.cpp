#include "mf/synth/dataset.hpp"

#include <fmt/format.h>

#include <fstream>
#include <random>
#include <sstream>

#include "mf/common/error.hpp"
#include "mf/geometry/io.hpp"
#include "mf/synth/manifest.hpp"

namespace mf::synth {

namespace fs = std::filesystem;
using nlohmann::json;

std::string clip_id(std::size_t index) { return fmt::format("clip_{:05d}", index); }

SceneConfig clip_config(const DatasetOptions& options, std::uint64_t base_seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base_seed), static_cast<std::uint32_t>(base_seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5C3E7u};
  std::mt19937_64 rng(seq);
  SceneConfig c = options.base;
  c.seed = rng();
  c.camera_motion = options.camera_motions.at(rng() % options.camera_motions.size());
  c.object_motion = options.object_motions.at(rng() % options.object_motions.size());
  std::discrete_distribution<int> count(options.object_count_weights.begin(), options.object_count_weights.end());
  c.object_count = count(rng);
  return c;
}

void write_frames(const std::vector<geom::Image>& frames, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t j = 0; j < frames.size(); ++j) geom::write_png(dir / fmt::format("{:03d}.png", j), frames[j]);
}

std::vector<geom::Image> read_frames(const fs::path& dir) {
  std::vector<geom::Image> frames;
  for (std::size_t j = 0;; ++j) {
    const auto p = dir / fmt::format("{:03d}.png", j);
    if (!fs::exists(p)) break;
    frames.push_back(geom::read_png(p));
  }
  if (frames.empty()) throw IoError(fmt::format("no frames (000.png...) in {}", dir.string()));
  return frames;
}

namespace {

json index_json(const DatasetIndex& index) {
  json j{{"version", kManifestVersion}, {"base_seed", index.base_seed}, {"clips", json::array()}};
  for (const auto& c : index.clips) j["clips"].push_back({{"id", c.id}, {"config", config_to_json(c.config)}});
  return j;
}

}  // namespace

DatasetIndex make_dataset(std::size_t count, std::uint64_t base_seed, const fs::path& out_dir,
                          const DatasetOptions& options,
                          const std::function<void(std::size_t, std::size_t)>& progress) {
  if (count < 1) throw ValidationError("make_dataset: count must be >= 1");
  fs::create_directories(out_dir);
  DatasetIndex index{base_seed, {}};
  for (std::size_t i = 0; i < count; ++i) {
    const auto id = clip_id(i);
    const auto cfg = clip_config(options, base_seed, i);
    index.clips.push_back({id, cfg});
    const fs::path dir = out_dir / id;
    if (fs::exists(dir / "annotation.json")) {
      if (progress) progress(i + 1, count);
      continue;
    }
    try {
      auto scene = generate_scene(cfg);
      scene.annotation.clip_id = id;
      fs::create_directories(dir);
      write_frames(scene.frames, dir / "frames");
      geom::write_pfm(dir / "depth0.pfm", scene.depth0);
      std::ofstream(dir / "caption.txt", std::ios::trunc) << scene.annotation.caption << "\n";
      write_manifest(scene.annotation, dir / "annotation.json");  // last: marks the clip complete
    } catch (const std::exception& e) {
      throw IoError(fmt::format("{}: {}", id, e.what()));
    }
    if (progress) progress(i + 1, count);
  }
  const std::string text = index_json(index).dump(1) + "\n";
  const auto tmp = out_dir / "index.json.tmp";
  std::ofstream(tmp, std::ios::trunc) << text;
  fs::rename(tmp, out_dir / "index.json");
  return index;
}

DatasetIndex read_index(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError(fmt::format("cannot open {}", path.string()));
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw SchemaError("/", e.what());
  }
  if (j.value("version", "") != kManifestVersion) throw SchemaError("/version", "expected 'rc-1'");
  DatasetIndex index;
  index.base_seed = j.at("base_seed").get<std::uint64_t>();
  const auto& clips = j.at("clips");
  for (std::size_t i = 0; i < clips.size(); ++i)
    index.clips.push_back({clips[i].at("id").get<std::string>(),
                           config_from_json(clips[i].at("config"), fmt::format("/clips/{}/config", i))});
  return index;
}

cond::ControlSpec spec_from_annotation(const SceneAnnotation& a, const fs::path& clip_dir) {
  cond::ControlSpec s;
  s.reference_image = "frames/000.png";
  s.depth_map = a.depth;
  s.intrinsics = a.intrinsics;
  s.num_frames = a.config.num_frames;
  s.camera = a.poses;
  for (const auto& o : a.objects) {
    cond::ObjectSpec os;
    os.entity = {o.object_id, o.label, o.label_index};
    os.points = o.points;
    s.objects.push_back(std::move(os));
  }
  s.caption = a.caption;
  s.seed = a.config.seed;
  s.base_dir = clip_dir;
  return s;
}

}  // namespace mf::synth
