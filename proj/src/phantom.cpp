#include "hgn/data.hpp"

#include <cmath>
#include <numbers>

namespace hgn {

namespace {

// Reference layout on a 128 px canvas: right lung (image left), left lung, heart.
constexpr OrganShape kReference[3] = {
    {38.0, 60.0, 22.0, 38.0, 2.6},
    {90.0, 60.0, 22.0, 38.0, 2.6},
    {66.0, 80.0, 20.0, 16.0, 2.0},
};
constexpr Index kCounts[3] = {kRightLungPoints, kLeftLungPoints, kHeartPoints};
constexpr double kCenterJitter = 3.0;
constexpr double kAxisJitter = 0.08;

double superellipse_radius(const OrganShape& o, double x, double y) {
  const double u = std::abs(x - o.cx) / o.ax, v = std::abs(y - o.cy) / o.ay;
  return std::pow(std::pow(u, o.exponent) + std::pow(v, o.exponent), 1.0 / o.exponent);
}

double soft_inside(double r, double sharpness) { return 1.0 / (1.0 + std::exp((r - 1.0) * sharpness)); }

}  // namespace

PhantomShape draw_phantom_shape(std::mt19937_64& rng, int size) {
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const double s = size / 128.0;
  PhantomShape shape;
  shape.size = size;
  for (std::size_t i = 0; i < 3; ++i) {
    const OrganShape& ref = kReference[i];
    shape.organs[i] = {s * (ref.cx + uniform(-kCenterJitter, kCenterJitter)),
                       s * (ref.cy + uniform(-kCenterJitter, kCenterJitter)),
                       s * ref.ax * uniform(1.0 - kAxisJitter, 1.0 + kAxisJitter),
                       s * ref.ay * uniform(1.0 - kAxisJitter, 1.0 + kAxisJitter), ref.exponent};
  }
  shape.lung_intensity = uniform(0.12, 0.22);
  shape.body_intensity = uniform(0.50, 0.60);
  shape.heart_intensity = uniform(0.70, 0.80);
  for (double& p : shape.texture_phase) p = uniform(0.0, 2.0 * std::numbers::pi);
  return shape;
}

Landmarks organ_contour(const OrganShape& o, Index count) {
  Landmarks pts(count, 2);
  const double e = 2.0 / o.exponent;
  for (Index i = 0; i < count; ++i) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count);
    const double sn = std::sin(t), cs = std::cos(t);
    pts(i, 0) = o.cx + o.ax * std::copysign(std::pow(std::abs(sn), e), sn);
    pts(i, 1) = o.cy - o.ay * std::copysign(std::pow(std::abs(cs), e), cs);
  }
  return pts;
}

Landmarks phantom_landmarks(const PhantomShape& shape) {
  Landmarks pts(kLandmarkCount, 2);
  Index row = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    pts.middleRows(row, kCounts[i]) = organ_contour(shape.organs[i], kCounts[i]);
    row += kCounts[i];
  }
  return pts;
}

Sample render_phantom(const PhantomShape& shape, std::mt19937_64& rng) {
  const int n = shape.size;
  const double s = n / 128.0;
  const OrganShape body{n / 2.0, n / 2.0, 60.0 * s, 62.0 * s, 2.0};
  const auto& ph = shape.texture_phase;
  std::normal_distribution<double> noise(0.0, 0.015);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  Sample out;
  out.image.resize(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double in_body = soft_inside(superellipse_radius(body, px, py), 20.0);
      double v = in_body * shape.body_intensity * (0.85 + 0.15 * py / n);
      const double lung = std::max(soft_inside(superellipse_radius(shape.organs[0], px, py), 14.0),
                                   soft_inside(superellipse_radius(shape.organs[1], px, py), 14.0));
      const double ribs = 0.04 * std::sin(two_pi * px / (16.0 * s) + ph[0]) *
                          std::sin(two_pi * py / (12.0 * s) + ph[1]);
      v += lung * (shape.lung_intensity + ribs - v);
      const double heart = soft_inside(superellipse_radius(shape.organs[2], px, py), 10.0);
      const double mottling = 0.03 * std::sin(two_pi * (px + py) / (20.0 * s) + ph[2]) *
                              std::cos(two_pi * (px - py) / (18.0 * s) + ph[3]);
      v += heart * (shape.heart_intensity + mottling - v);
      out.image(y, x) = std::clamp(v + noise(rng), 0.0, 1.0);
    }
  }
  out.landmarks = phantom_landmarks(shape);
  out.spacing_mm = 0.35 * 1024.0 / n;
  out.source = "phantom";
  return out;
}

Sample synthesize_phantom(std::mt19937_64& rng, int size) {
  const PhantomShape shape = draw_phantom_shape(rng, size);
  return render_phantom(shape, rng);
}

}  // namespace hgn
