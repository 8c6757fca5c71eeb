#include "mf/eval/report.hpp"

#include <fmt/format.h>

#include <json.hpp>

#include "mf/common/error.hpp"
#include "mf/conditioning/package.hpp"
#include "mf/conditioning/vocabulary.hpp"

namespace mf::eval {

std::vector<cond::BoxSequence2D> commanded_boxes(const cond::ControlSpec& spec, int points_per_object) {
  const auto camera = geom::canonicalize({spec.camera, spec.intrinsics});
  std::vector<cond::BoxSequence2D> out;
  for (const auto& t : cond::object_trajectories(spec, points_per_object))
    out.push_back(snap_to_pixels(cond::fit_boxes(cond::project_trajectory(t, camera), 0, spec.intrinsics.width,
                                                 spec.intrinsics.height, t.object_id)));
  return out;
}

MetricsReport evaluate(const cond::ControlSpec& spec, const std::vector<geom::Image>& video,
                       const synth::SceneAnnotation* annotation, const std::string& clip_id) {
  cond::validate_spec(spec);
  if (video.size() != static_cast<std::size_t>(spec.num_frames))
    throw DimensionError(fmt::format("evaluate: video has {} frames, spec has {}", video.size(), spec.num_frames));
  for (const auto& f : video)
    if (f.width != spec.intrinsics.width || f.height != spec.intrinsics.height)
      throw DimensionError(fmt::format("evaluate: frame is {}x{}, spec is {}x{}", f.width, f.height,
                                       spec.intrinsics.width, spec.intrinsics.height));
  MetricsReport r;
  r.clip_id = clip_id.empty() && annotation ? annotation->clip_id : clip_id;

  if (!spec.objects.empty()) {
    const auto gt = commanded_boxes(spec);
    IouTally pooled;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const auto color = cond::label_color(spec.objects[i].entity.label_index);
      if (!color) {
        r.box_iou_per_object.push_back(std::nullopt);
        continue;
      }
      const auto t = box_iou_tally(recover_boxes(video, *color, gt[i].object_id), gt[i]);
      pooled.sum += t.sum;
      pooled.frames += t.frames;
      r.box_iou_per_object.push_back(t.mean());
    }
    r.box_iou = pooled.mean();
  }

  if (annotation) {
    if (annotation->poses.size() != spec.camera.size())
      throw DimensionError(fmt::format("evaluate: annotation has {} poses, spec has {}", annotation->poses.size(),
                                       spec.camera.size()));
    const TrajectoryPair pair{{spec.camera, spec.intrinsics}, {annotation->poses, annotation->intrinsics}};
    r.cam_trans_err = cam_trans_err(pair);
    r.cam_rot_err = cam_rot_err(pair);
  }
  return r;
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : ""; }

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["clip_id"] = r.clip_id;
  if (r.cam_trans_err) j["cam_trans_err"] = *r.cam_trans_err;
  if (r.cam_rot_err) j["cam_rot_err"] = *r.cam_rot_err;
  if (r.box_iou) j["box_iou"] = *r.box_iou;
  j["fid"] = nullptr;
  j["fvd"] = nullptr;
  j["clipsim"] = nullptr;
  return j.dump(2) + "\n";
}

std::string reports_to_csv(const std::vector<MetricsReport>& reports) {
  std::string out = "clip_id,cam_trans_err,cam_rot_err,box_iou\n";
  double sums[3] = {0, 0, 0};
  int counts[3] = {0, 0, 0};
  for (const auto& r : reports) {
    const std::optional<double> v[3] = {r.cam_trans_err, r.cam_rot_err, r.box_iou};
    for (int k = 0; k < 3; ++k)
      if (v[k]) {
        sums[k] += *v[k];
        ++counts[k];
      }
    out += fmt::format("{},{},{},{}\n", r.clip_id, cell(v[0]), cell(v[1]), cell(v[2]));
  }
  auto mean = [&](int k) { return counts[k] ? std::optional(sums[k] / counts[k]) : std::nullopt; };
  out += fmt::format("mean,{},{},{}\n", cell(mean(0)), cell(mean(1)), cell(mean(2)));
  return out;
}

}  // namespace mf::eval
