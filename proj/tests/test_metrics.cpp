#include "hgn/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

using namespace hgn;
namespace fs = std::filesystem;

namespace {

// Classic crossing-number test at a single point.
bool point_in_polygon(const Landmarks& poly, double x, double y) {
  bool inside = false;
  for (Index i = 0, j = poly.rows() - 1; i < poly.rows(); j = i++) {
    const double xi = poly(i, 0), yi = poly(i, 1), xj = poly(j, 0), yj = poly(j, 1);
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

BoolMask brute_fill(const Landmarks& poly, Index rows, Index cols) {
  BoolMask m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = point_in_polygon(poly, c + 0.5, r + 0.5);
  return m;
}

Landmarks random_star(std::mt19937_64& rng, Index n, double cx, double cy, double rmax) {
  std::uniform_real_distribution<double> radius(0.3 * rmax, rmax);
  Landmarks p(n, 2);
  for (Index i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    const double r = radius(rng);
    p(i, 0) = cx + r * std::cos(t);
    p(i, 1) = cy + r * std::sin(t);
  }
  return p;
}

BoolMask random_mask(std::mt19937_64& rng, Index rows, Index cols, double density) {
  std::bernoulli_distribution on(density);
  BoolMask m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = on(rng);
  return m;
}

// Lungs span x in [x0, x1]; heart spans [h0, h1].
Landmarks chest_with_spans(double x0, double x1, double h0, double h1) {
  const auto& organs = chest_topology().organs();
  Landmarks lm(kLandmarkCount, 2);
  auto ellipse = [&](const OrganRange& o, double lo, double hi, double cy) {
    for (Index i = 0; i < o.size(); ++i) {
      const double t = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(o.size());
      lm(o.begin + i, 0) = 0.5 * (lo + hi) + 0.5 * (hi - lo) * std::cos(t);
      lm(o.begin + i, 1) = cy + 100.0 * std::sin(t);
    }
  };
  const double mid = 0.5 * (x0 + x1);
  ellipse(organs[0], x0, mid - 10, 400);
  ellipse(organs[1], mid + 10, x1, 400);
  ellipse(organs[2], h0, h1, 500);
  return lm;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

}  // namespace

TEST_CASE("polygon fill") {
  SUBCASE("square with collinear intermediates") {
    Landmarks sq(8, 2);
    sq << 3, 3, 8, 3, 13, 3, 13, 8, 13, 13, 8, 13, 3, 13, 3, 8;
    const BoolMask m = fill_polygon(sq, 20, 20);
    CHECK(m.count() == 100);
    CHECK(m.count() == brute_fill(sq, 20, 20).count());
    CHECK((m == brute_fill(sq, 20, 20)).all());
  }
  SUBCASE("outside the frame") {
    Landmarks sq(4, 2);
    sq << 40, 40, 50, 40, 50, 50, 40, 50;
    CHECK(fill_polygon(sq, 20, 20).count() == 0);
  }
  SUBCASE("random star polygons agree with point-in-polygon") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      const Landmarks p = random_star(rng, 5 + trial % 20, 16.3, 15.7, 14.0);
      CHECK((fill_polygon(p, 32, 32) == brute_fill(p, 32, 32)).all());
    }
  }
  SUBCASE("integer translation commutes with rasterization") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 30; ++trial) {
      const Landmarks p = random_star(rng, 12, 20.0, 20.0, 10.0);
      Landmarks moved = p;
      moved.col(0).array() += 3.0;
      moved.col(1).array() -= 2.0;
      const BoolMask a = fill_polygon(p, 40, 40);
      const BoolMask b = fill_polygon(moved, 40, 40);
      CHECK((b.block(8, 13, 24, 24) == a.block(10, 10, 24, 24)).all());
      CHECK(a.count() == b.count());
    }
  }
  SUBCASE("heart overwrites lungs") {
    const Landmarks lm = chest_with_spans(100, 900, 350, 650);
    const LabelImage labels = rasterize(lm / 8.0, 128, 128);
    CHECK((labels.array() == kLabelHeart).count() > 0);
    CHECK((labels.array() == kLabelLungs).count() > 0);
    CHECK(labels.maxCoeff() == 2);
    CHECK_THROWS_AS(rasterize(lm.topRows(10), 128, 128), std::invalid_argument);
  }
}

TEST_CASE("dice") {
  BoolMask a = BoolMask::Constant(4, 4, false), b = a;
  CHECK(dice(a, b) == 1.0);
  a.topRows(2) = true;
  CHECK(dice(a, a) == 1.0);
  b.bottomRows(2) = true;
  CHECK(dice(a, b) == 0.0);
  b.setConstant(false);
  b.middleRows(1, 2) = true;
  CHECK(dice(a, b) == 0.5);
  CHECK_THROWS_AS(dice(a, BoolMask(3, 4)), std::invalid_argument);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Index rows = 1 + trial % 32, cols = 32 - trial % 31;
    const BoolMask x = random_mask(rng, rows, cols, 0.4), y = random_mask(rng, rows, cols, 0.6);
    long nx = 0, ny = 0, both = 0;
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) {
        nx += x(r, c);
        ny += y(r, c);
        both += x(r, c) && y(r, c);
      }
    const double expect = nx + ny == 0 ? 1.0 : 2.0 * both / static_cast<double>(nx + ny);
    const double d = dice(x, y);
    CHECK(d == expect);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("hausdorff") {
  Landmarks a(1, 2), b(1, 2);
  a << 0, 0;
  b << 3, 4;
  CHECK(hausdorff(a, b, 0.35) == doctest::Approx(1.75).epsilon(1e-12));
  CHECK(hausdorff(a, a) == 0.0);
  CHECK_THROWS_AS(hausdorff(a, Landmarks(0, 2)), MetricError);

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const BoolMask ma = random_mask(rng, 32, 32, 0.1 + 0.005 * trial);
    const BoolMask mb = random_mask(rng, 32, 32, 0.3);
    if (ma.count() == 0 || mb.count() == 0) continue;
    const Landmarks pa = boundary_points(ma), pb = boundary_points(mb);
    double worst = 0.0;
    for (int pass = 0; pass < 2; ++pass) {
      const Landmarks& from = pass ? pb : pa;
      const Landmarks& to = pass ? pa : pb;
      for (Index i = 0; i < from.rows(); ++i) {
        double best = 1e300;
        for (Index j = 0; j < to.rows(); ++j)
          best = std::min(best, std::hypot(from(i, 0) - to(j, 0), from(i, 1) - to(j, 1)));
        worst = std::max(worst, best);
      }
    }
    const double h = hausdorff(pa, pb);
    CHECK(std::abs(h - worst) < 1e-9);
    CHECK(hausdorff(pb, pa) == h);
    CHECK(h >= 0.0);
  }

  SUBCASE("boundary extraction uses 4-neighbours") {
    BoolMask m = BoolMask::Constant(5, 5, false);
    m.block(1, 1, 3, 3) = true;
    const Landmarks pts = boundary_points(m);
    CHECK(pts.rows() == 8);
    for (Index i = 0; i < pts.rows(); ++i) CHECK_FALSE((pts(i, 0) == 2.5 && pts(i, 1) == 2.5));
  }
}

TEST_CASE("landmark error") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 10.0);
  Landmarks gt(kLandmarkCount, 2);
  for (Index i = 0; i < gt.size(); ++i) gt.data()[i] = 64.0 + n(rng);
  CHECK(landmark_mse(gt, gt) == 0.0);
  Landmarks shifted = gt;
  shifted.col(0).array() += 1.0;
  CHECK(landmark_mse(shifted, gt) == doctest::Approx(0.5).epsilon(1e-12));

  // Same value as the mean over the flattened rho vectors.
  Landmarks other = gt;
  for (Index i = 0; i < other.size(); ++i) other.data()[i] += n(rng);
  const Eigen::Map<const Eigen::VectorXd> va(gt.data(), gt.size()), vb(other.data(), other.size());
  CHECK(landmark_mse(other, gt) == doctest::Approx((va - vb).squaredNorm() / va.size()));
  CHECK_THROWS_AS(landmark_mse(gt.topRows(3), gt), std::invalid_argument);
}

TEST_CASE("occlusion") {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd img = (Eigen::MatrixXd::Random(64, 64).array() + 2.0).matrix();
  CHECK(occlude(img, 0.0, rng).image == img);
  CHECK(occlude(img, 1.0, rng).image.isZero());
  for (double frac : {0.1, 0.25, 0.4}) {
    for (int trial = 0; trial < 20; ++trial) {
      const OccludedImage o = occlude(img, frac, rng);
      CHECK(o.side == std::lround(frac * 64));
      CHECK(o.x + o.side <= 64);
      CHECK(o.y + o.side <= 64);
      CHECK((o.image.array() != img.array()).count() == o.side * o.side);
    }
  }
  CHECK_THROWS_AS(occlude(img, 1.5, rng), std::invalid_argument);
}

TEST_CASE("cardiothoracic ratio") {
  const Landmarks lm = chest_with_spans(100, 900, 350, 650);
  CHECK(compute_ctr(lm) == doctest::Approx(0.375).epsilon(1e-12));
  CHECK_FALSE(ctr_is_normal(0.375));
  CHECK(compute_ctr(chest_with_spans(100, 900, 100, 900)) == doctest::Approx(1.0));
  CHECK(ctr_is_normal(0.42));
  CHECK(ctr_is_normal(0.5));
  CHECK_FALSE(ctr_is_normal(0.51));

  for (double s : {0.1, 0.37, 2.0, 13.0})
    CHECK(compute_ctr(lm * s) == doctest::Approx(0.375).epsilon(1e-12));
}

TEST_CASE("reports") {
  const fs::path dir = fs::temp_directory_path() / "hgn_test_metrics_reports";
  fs::create_directories(dir);

  std::mt19937_64 rng(9);
  std::vector<Sample> samples;
  for (int i = 0; i < 3; ++i) {
    Sample s;
    s.image = Eigen::MatrixXd::Constant(128, 128, 0.5);
    s.landmarks = chest_with_spans(10 + i, 118, 50, 80);
    s.landmarks.col(1) = s.landmarks.col(1).array() / 8.0;
    s.source = "s" + std::to_string(i);
    s.spacing_mm = 0.35;
    samples.push_back(s);
  }
  // Predictions drift with the image mean so occlusion changes them.
  const Predictor predict = [&](const Eigen::MatrixXd& img) {
    Landmarks p = samples[0].landmarks;
    p.col(0).array() += 20.0 * (0.5 - img.mean());
    return p;
  };

  const MetricReport rep = evaluate(predict, samples);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].mse == 0.0);
  CHECK(rep.rows[0].dice_lungs == 1.0);
  CHECK(rep.mean.mse == doctest::Approx((rep.rows[1].mse + rep.rows[2].mse) / 3.0));

  write_metric_report(dir / "m.csv", rep);
  const auto lines = read_lines(dir / "m.csv");
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "sample_id,mse,dice_lungs,hd_lungs,dice_heart,hd_heart");
  CHECK(lines[1].rfind("s0,0,1,", 0) == 0);
  CHECK(lines[4].rfind("mean,", 0) == 0);

  const std::vector<double> fracs{0.0, 0.3, 0.6};
  const auto sweep = occlusion_sweep(predict, samples, fracs, 42);
  REQUIRE(sweep.size() == 3);
  double base_dice = 0.0;
  for (const MetricRow& r : rep.rows) base_dice += 0.5 * (r.dice_lungs + r.dice_heart);
  CHECK(sweep[0].dice_mean == doctest::Approx(base_dice / 3.0).epsilon(1e-15));
  CHECK(sweep[2].dice_mean < sweep[0].dice_mean);

  write_occlusion_report(dir / "o.csv", sweep);
  const auto occ = read_lines(dir / "o.csv");
  REQUIRE(occ.size() == 4);
  CHECK(occ[0] == "frac,dice_mean,dice_std,hd_mean,hd_std");

  const auto again = occlusion_sweep(predict, samples, fracs, 42);
  for (std::size_t i = 0; i < 3; ++i) CHECK(again[i].dice_mean == sweep[i].dice_mean);
  fs::remove_all(dir);
}
