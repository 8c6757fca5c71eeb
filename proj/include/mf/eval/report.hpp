#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mf/conditioning/spec.hpp"
#include "mf/eval/metrics.hpp"
#include "mf/synth/scene.hpp"

namespace mf::eval {

struct MetricsReport {
  std::string clip_id;
  std::optional<double> cam_trans_err;
  std::optional<double> cam_rot_err;
  std::optional<double> box_iou;
  std::vector<std::optional<double>> box_iou_per_object;
};

// Commanded boxes of every object in the spec, snapped to the pixel lattice.
std::vector<cond::BoxSequence2D> commanded_boxes(const cond::ControlSpec& spec,
                                                 int points_per_object = cond::kDefaultPointsPerObject);

// Box-IoU of color-recovered boxes against commanded boxes, pooled over
// objects and gt-visible frames. Camera errors compare the commanded path with
// the annotation's ground truth when an annotation is given; without a pose
// estimator they stay empty for generated video.
MetricsReport evaluate(const cond::ControlSpec& spec, const std::vector<geom::Image>& video,
                       const synth::SceneAnnotation* annotation, const std::string& clip_id = "");

// Metrics that do not apply are omitted; fid, fvd and clipsim are always null.
std::string report_to_json(const MetricsReport& report);
// One row per report plus a trailing "mean" row over present values.
std::string reports_to_csv(const std::vector<MetricsReport>& reports);

}  // namespace mf::eval
