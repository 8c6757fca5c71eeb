#include "mf/eval/metrics.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mf/common/error.hpp"

namespace mf::eval {

namespace {

constexpr double kDegenerateVariance = 1e-12;

Eigen::Vector3d to_eigen(const Vec3& v) { return {v.x, v.y, v.z}; }
Vec3 from_eigen(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

void check_pair(const TrajectoryPair& pair, const char* what) {
  if (pair.estimated.size() != pair.reference.size())
    throw DimensionError(fmt::format("{}: estimated has {} frames, reference has {}", what, pair.estimated.size(),
                                     pair.reference.size()));
  if (pair.estimated.size() == 0) throw DimensionError(fmt::format("{}: empty trajectories", what));
}

}  // namespace

Similarity umeyama_align(std::span<const Vec3> est, std::span<const Vec3> ref) {
  if (est.size() != ref.size())
    throw DimensionError(fmt::format("umeyama_align: {} estimated vs {} reference points", est.size(), ref.size()));
  const std::size_t n = est.size();
  if (n == 0) throw DimensionError("umeyama_align: no points");

  Eigen::Vector3d mu_e = Eigen::Vector3d::Zero(), mu_r = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_e += to_eigen(est[i]);
    mu_r += to_eigen(ref[i]);
  }
  mu_e /= double(n);
  mu_r /= double(n);

  double var_e = 0, var_r = 0;
  Eigen::Matrix3d sigma = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d e = to_eigen(est[i]) - mu_e, r = to_eigen(ref[i]) - mu_r;
    var_e += e.squaredNorm();
    var_r += r.squaredNorm();
    sigma += r * e.transpose();
  }
  var_e /= double(n);
  var_r /= double(n);
  sigma /= double(n);

  Similarity out;
  if (n < 3 || var_e < kDegenerateVariance || var_r < kDegenerateVariance) {
    out.translation = from_eigen(mu_r - mu_e);
    out.translation_only = true;
    return out;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2, 2) = -1;
  const Eigen::Matrix3d r = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = (svd.singularValues().asDiagonal() * s).trace() / var_e;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.rotation(i, j) = r(i, j);
  out.translation = from_eigen(mu_r - out.scale * r * mu_e);
  return out;
}

double cam_trans_err(const TrajectoryPair& pair) {
  check_pair(pair, "cam_trans_err");
  const auto est = geom::canonicalize(pair.estimated), ref = geom::canonicalize(pair.reference);
  std::vector<Vec3> ce, cr;
  for (std::size_t j = 0; j < est.size(); ++j) {
    ce.push_back(est.poses[j].center());
    cr.push_back(ref.poses[j].center());
  }
  const auto sim = umeyama_align(ce, cr);
  double total = 0;
  for (std::size_t j = 0; j < ce.size(); ++j) total += geom::norm(sim.apply(ce[j]) - cr[j]);
  return total / double(ce.size());
}

double cam_rot_err(const TrajectoryPair& pair) {
  check_pair(pair, "cam_rot_err");
  const auto est = geom::canonicalize(pair.estimated), ref = geom::canonicalize(pair.reference);
  if (est.size() < 2) return 0;
  double total = 0;
  for (std::size_t j = 1; j < est.size(); ++j) total += geom::rotation_angle(est.poses[j].rotation, ref.poses[j].rotation);
  return total / double(est.size() - 1);
}

cond::BoxSequence2D recover_boxes(const std::vector<geom::Image>& video, geom::Rgb color, int object_id,
                                  double tolerance) {
  cond::BoxSequence2D out;
  out.object_id = object_id;
  const double tol2 = tolerance * tolerance;
  for (const auto& frame : video) {
    int x0 = std::numeric_limits<int>::max(), y0 = x0, x1 = -1, y1 = -1, area = 0;
    for (int y = 0; y < frame.height; ++y)
      for (int x = 0; x < frame.width; ++x) {
        const auto p = frame.at(x, y);
        const double dr = p.r - color.r, dg = p.g - color.g, db = p.b - color.b;
        if (dr * dr + dg * dg + db * db > tol2) continue;
        ++area;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    if (area < kMinBoxArea) {
      out.boxes.push_back({});
      out.visible.push_back(0);
    } else {
      out.boxes.push_back({x0 - 0.5, y0 - 0.5, x1 + 0.5, y1 + 0.5});
      out.visible.push_back(1);
    }
  }
  return out;
}

cond::Box2D snap_to_pixels(const cond::Box2D& b) {
  double xa = std::ceil(b.x0), xb = std::floor(b.x1), ya = std::ceil(b.y0), yb = std::floor(b.y1);
  if (xa > xb) xa = xb = std::floor((b.x0 + b.x1) / 2 + 0.5);
  if (ya > yb) ya = yb = std::floor((b.y0 + b.y1) / 2 + 0.5);
  return {xa - 0.5, ya - 0.5, xb + 0.5, yb + 0.5};
}

cond::BoxSequence2D snap_to_pixels(const cond::BoxSequence2D& seq) {
  auto out = seq;
  for (std::size_t j = 0; j < out.size(); ++j)
    if (out.visible[j]) out.boxes[j] = snap_to_pixels(out.boxes[j]);
  return out;
}

double box_iou(const cond::Box2D& a, const cond::Box2D& b) {
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = a.width() * a.height() + b.width() * b.height() - inter;
  if (uni <= 0) return a == b ? 1.0 : 0.0;
  return inter / uni;
}

IouTally box_iou_tally(const cond::BoxSequence2D& pred, const cond::BoxSequence2D& gt) {
  if (pred.size() != gt.size())
    throw DimensionError(fmt::format("box_iou_sequence: pred has {} frames, gt has {}", pred.size(), gt.size()));
  IouTally t;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    if (!gt.visible[j]) continue;
    ++t.frames;
    if (pred.visible[j]) t.sum += box_iou(pred.boxes[j], gt.boxes[j]);
  }
  return t;
}

std::optional<double> box_iou_sequence(const cond::BoxSequence2D& pred, const cond::BoxSequence2D& gt) {
  return box_iou_tally(pred, gt).mean();
}

Shift background_shift(const geom::Image& a, const geom::Image& b, int max_shift,
                       const std::vector<geom::Rgb>& ignore, double tolerance) {
  if (a.width != b.width || a.height != b.height)
    throw DimensionError(fmt::format("background_shift: {}x{} vs {}x{}", a.width, a.height, b.width, b.height));
  const int w = a.width, h = a.height;
  const double tol2 = tolerance * tolerance;
  auto prepare = [&](const geom::Image& img, std::vector<double>& lum, std::vector<std::uint8_t>& keep) {
    lum.resize(static_cast<std::size_t>(w) * h);
    keep.assign(lum.size(), 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto p = img.at(x, y);
        const auto i = static_cast<std::size_t>(y) * w + x;
        lum[i] = 0.299 * p.r + 0.587 * p.g + 0.114 * p.b;
        for (const auto& c : ignore) {
          const double dr = p.r - c.r, dg = p.g - c.g, db = p.b - c.b;
          if (dr * dr + dg * dg + db * db <= tol2) keep[i] = 0;
        }
      }
  };
  std::vector<double> la, lb;
  std::vector<std::uint8_t> ka, kb;
  prepare(a, la, ka);
  prepare(b, lb, kb);

  Shift best{0, 0, -std::numeric_limits<double>::infinity()};
  const std::size_t min_pairs = static_cast<std::size_t>(w) * h / 4;
  for (int dy = -max_shift; dy <= max_shift; ++dy)
    for (int dx = -max_shift; dx <= max_shift; ++dx) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      std::size_t n = 0;
      for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y)
        for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) {
          const auto i = static_cast<std::size_t>(y) * w + x;
          const auto k = static_cast<std::size_t>(y + dy) * w + (x + dx);
          if (!ka[i] || !kb[k]) continue;
          const double va = la[i], vb = lb[k];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
          ++n;
        }
      if (n < min_pairs) continue;
      const double cov = sab - sa * sb / double(n);
      const double var = (saa - sa * sa / double(n)) * (sbb - sb * sb / double(n));
      const double score = var > 0 ? cov / std::sqrt(var) : 0;
      const bool better = score > best.score ||
                          (score == best.score && std::abs(dx) + std::abs(dy) < std::abs(best.dx) + std::abs(best.dy));
      if (better) best = {dx, dy, score};
    }
  return best;
}

}  // namespace mf::eval
