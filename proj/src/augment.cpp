#include "hgn/data.hpp"

#include <cmath>
#include <numbers>

namespace hgn {

namespace {

constexpr int kMaxRedraws = 100;

Landmarks transform_points(const Landmarks& pts, const Eigen::Matrix3d& m) {
  Landmarks out(pts.rows(), 2);
  for (Index i = 0; i < pts.rows(); ++i) {
    const Eigen::Vector3d p = m * Eigen::Vector3d(pts(i, 0), pts(i, 1), 1.0);
    out(i, 0) = p.x();
    out(i, 1) = p.y();
  }
  return out;
}

LabelImage warp_labels(const LabelImage& labels, const Eigen::Matrix3d& forward) {
  const Eigen::Matrix3d inv = forward.inverse();
  LabelImage out = LabelImage::Zero(labels.rows(), labels.cols());
  for (Index y = 0; y < out.rows(); ++y)
    for (Index x = 0; x < out.cols(); ++x) {
      const Eigen::Vector3d s = inv * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0);
      const auto xs = static_cast<Index>(std::floor(s.x()));
      const auto ys = static_cast<Index>(std::floor(s.y()));
      if (xs >= 0 && ys >= 0 && xs < labels.cols() && ys < labels.rows()) out(y, x) = labels(ys, xs);
    }
  return out;
}

}  // namespace

void AugmentationParams::validate() const {
  if (!(gamma >= 0.60 && gamma <= 1.40))
    throw std::invalid_argument("augmentation gamma must lie in [0.60, 1.40]");
  if (!(std::abs(rotation_deg) <= 3.0))
    throw std::invalid_argument("augmentation rotation must lie in [-3, 3] degrees");
  if (!(scale_x > 0.0 && scale_y > 0.0))
    throw std::invalid_argument("augmentation scales must be positive");
  if (!std::isfinite(offset_x) || !std::isfinite(offset_y))
    throw std::invalid_argument("augmentation offsets must be finite");
}

AugmentationParams draw_augmentation(std::mt19937_64& rng, const AugmentationRanges& r) {
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  AugmentationParams p;
  p.gamma = uniform(r.gamma_min, r.gamma_max);
  p.rotation_deg = uniform(-r.rotation_max_deg, r.rotation_max_deg);
  p.scale_x = uniform(r.scale_min, r.scale_max);
  p.scale_y = uniform(r.scale_min, r.scale_max);
  p.offset_x = uniform(-r.offset_max, r.offset_max);
  p.offset_y = uniform(-r.offset_max, r.offset_max);
  return p;
}

Eigen::Matrix3d augmentation_matrix(const AugmentationParams& p, double width, double height) {
  const double theta = p.rotation_deg * std::numbers::pi / 180.0;
  Eigen::Matrix3d to_center = Eigen::Matrix3d::Identity();
  to_center(0, 2) = -width / 2.0;
  to_center(1, 2) = -height / 2.0;
  Eigen::Matrix3d from_center = Eigen::Matrix3d::Identity();
  from_center(0, 2) = width / 2.0 + p.offset_x;
  from_center(1, 2) = height / 2.0 + p.offset_y;
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  rot(0, 0) = std::cos(theta);
  rot(0, 1) = -std::sin(theta);
  rot(1, 0) = std::sin(theta);
  rot(1, 1) = std::cos(theta);
  Eigen::Matrix3d scl = Eigen::Matrix3d::Identity();
  scl(0, 0) = p.scale_x;
  scl(1, 1) = p.scale_y;
  return from_center * rot * scl * to_center;
}

bool landmarks_inside(const Landmarks& pts, double width, double height) {
  return (pts.col(0).array() > 0.0).all() && (pts.col(0).array() < width).all() &&
         (pts.col(1).array() > 0.0).all() && (pts.col(1).array() < height).all();
}

Eigen::MatrixXd warp_image(const Eigen::MatrixXd& image, const Eigen::Matrix3d& forward,
                           Index out_rows, Index out_cols) {
  if (forward.isIdentity(0.0) && out_rows == image.rows() && out_cols == image.cols()) return image;
  const Eigen::Matrix3d inv = forward.inverse();
  const Index h = image.rows(), w = image.cols();
  auto at = [&](Index y, Index x) {
    return (x < 0 || y < 0 || x >= w || y >= h) ? 0.0 : image(y, x);
  };
  Eigen::MatrixXd out(out_rows, out_cols);
  for (Index y = 0; y < out_rows; ++y)
    for (Index x = 0; x < out_cols; ++x) {
      const Eigen::Vector3d s = inv * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0);
      const double sx = s.x() - 0.5, sy = s.y() - 0.5;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const auto x0 = static_cast<Index>(fx), y0 = static_cast<Index>(fy);
      const double tx = sx - fx, ty = sy - fy;
      out(y, x) = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                  ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
    }
  return out;
}

Sample augment(const Sample& sample, const AugmentationParams& params, std::mt19937_64& rng,
               const AugmentationRanges& ranges) {
  params.validate();
  const double w = static_cast<double>(sample.image.cols());
  const double h = static_cast<double>(sample.image.rows());

  Eigen::Matrix3d m = augmentation_matrix(params, w, h);
  Landmarks moved = transform_points(sample.landmarks, m);
  int attempt = 0;
  while (!landmarks_inside(moved, w, h) && attempt < kMaxRedraws) {
    AugmentationParams redraw = draw_augmentation(rng, ranges);
    redraw.gamma = params.gamma;
    m = augmentation_matrix(redraw, w, h);
    moved = transform_points(sample.landmarks, m);
    ++attempt;
  }
  if (!landmarks_inside(moved, w, h)) {
    m = Eigen::Matrix3d::Identity();
    moved = sample.landmarks;
  }

  Sample out = sample;
  if (params.gamma != 1.0) out.image = sample.image.array().max(0.0).pow(params.gamma).matrix();
  out.image = warp_image(out.image, m, sample.image.rows(), sample.image.cols());
  out.landmarks = moved;
  if (sample.mask && !m.isIdentity(0.0)) out.mask = warp_labels(*sample.mask, m);
  return out;
}

}  // namespace hgn
