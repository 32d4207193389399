#include "hgn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace hgn {

BoolMask fill_polygon(const Eigen::Ref<const Landmarks>& poly, Index rows, Index cols) {
  BoolMask mask = BoolMask::Constant(rows, cols, false);
  const Index n = poly.rows();
  if (n < 3) return mask;

  double area2 = 0.0;
  for (Index i = 0, j = n - 1; i < n; j = i++)
    area2 += poly(j, 0) * poly(i, 1) - poly(i, 0) * poly(j, 1);
  if (area2 == 0.0) {
    std::clog << "warning: degenerate contour with zero area\n";
    return mask;
  }

  std::vector<double> xs;
  for (Index r = 0; r < rows; ++r) {
    const double yc = static_cast<double>(r) + 0.5;
    xs.clear();
    for (Index i = 0, j = n - 1; i < n; j = i++) {
      const double xi = poly(i, 0), yi = poly(i, 1), xj = poly(j, 0), yj = poly(j, 1);
      if ((yi > yc) != (yj > yc)) xs.push_back((xj - xi) * (yc - yi) / (yj - yi) + xi);
    }
    std::sort(xs.begin(), xs.end());
    // Pixel center xc is inside when an odd number of crossings lie right of it,
    // i.e. xs[2k] <= xc < xs[2k+1].
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const double lo = std::clamp(std::ceil(xs[k] - 0.5), 0.0, static_cast<double>(cols));
      for (auto c = static_cast<Index>(lo); c < cols; ++c) {
        const double xc = static_cast<double>(c) + 0.5;
        if (xc < xs[k]) continue;
        if (xc >= xs[k + 1]) break;
        mask(r, c) = true;
      }
    }
  }
  return mask;
}

LabelImage rasterize(const Landmarks& landmarks, Index rows, Index cols,
                     const GraphTopology& topology) {
  if (landmarks.rows() != topology.num_nodes())
    throw std::invalid_argument("rasterize: landmark count does not match topology");
  LabelImage out = LabelImage::Zero(rows, cols);
  const auto& organs = topology.organs();
  for (std::size_t o = 0; o < organs.size(); ++o) {
    const int label = (o + 1 == organs.size()) ? kLabelHeart : kLabelLungs;
    const BoolMask m = fill_polygon(landmarks.middleRows(organs[o].begin, organs[o].size()), rows, cols);
    out = m.select(LabelImage::Constant(rows, cols, label), out);
  }
  return out;
}

double dice(const BoolMask& a, const BoolMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("dice: mask shapes differ");
  const auto na = a.count(), nb = b.count();
  if (na + nb == 0) return 1.0;
  const auto inter = (a && b).count();
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

Landmarks boundary_points(const BoolMask& m) {
  std::vector<std::pair<Index, Index>> pts;
  const Index h = m.rows(), w = m.cols();
  auto outside = [&](Index y, Index x) { return y < 0 || x < 0 || y >= h || x >= w || !m(y, x); };
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      if (m(y, x) && (outside(y - 1, x) || outside(y + 1, x) || outside(y, x - 1) ||
                      outside(y, x + 1)))
        pts.emplace_back(y, x);
  Landmarks out(static_cast<Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out(static_cast<Index>(i), 0) = static_cast<double>(pts[i].second) + 0.5;
    out(static_cast<Index>(i), 1) = static_cast<double>(pts[i].first) + 0.5;
  }
  return out;
}

double landmark_mse(const Landmarks& pred, const Landmarks& gt) {
  if (pred.rows() != gt.rows() || pred.rows() == 0)
    throw std::invalid_argument("landmark_mse: landmark counts differ (" +
                                std::to_string(pred.rows()) + " vs " + std::to_string(gt.rows()) +
                                ")");
  return (pred - gt).squaredNorm() / static_cast<double>(pred.size());
}

OccludedImage occlude(const Eigen::MatrixXd& image, double box_frac, std::mt19937_64& rng) {
  if (!(box_frac >= 0.0 && box_frac <= 1.0))
    throw std::invalid_argument("occlude: box fraction must lie in [0,1]");
  OccludedImage out{image, 0, 0, 0};
  const Index side_ref = std::min(image.rows(), image.cols());
  out.side = static_cast<Index>(std::lround(box_frac * static_cast<double>(side_ref)));
  if (out.side == 0) return out;
  std::uniform_int_distribution<Index> ux(0, image.cols() - out.side);
  std::uniform_int_distribution<Index> uy(0, image.rows() - out.side);
  out.x = ux(rng);
  out.y = uy(rng);
  out.image.block(out.y, out.x, out.side, out.side).setZero();
  return out;
}

double compute_ctr(const Landmarks& lm, const GraphTopology& topology) {
  const auto& organs = topology.organs();
  if (organs.size() != 3 || lm.rows() != topology.num_nodes())
    throw std::invalid_argument("compute_ctr: expected lungs + heart landmarks");
  const Index lung_end = organs[1].end;
  const auto lungs_x = lm.col(0).head(lung_end);
  const auto heart_x = lm.col(0).segment(organs[2].begin, organs[2].size());
  const double thorax = lungs_x.maxCoeff() - lungs_x.minCoeff();
  if (!(thorax > 0.0)) throw MetricError("compute_ctr: zero thorax width");
  return (heart_x.maxCoeff() - heart_x.minCoeff()) / thorax;
}

bool ctr_is_normal(double ctr) { return ctr >= 0.42 && ctr <= 0.50; }

MetricRow evaluate_prediction(const Landmarks& pred, const Sample& truth,
                              const GraphTopology& topology) {
  const Index rows = truth.image.rows(), cols = truth.image.cols();
  const LabelImage gt_mask = truth.mask ? *truth.mask : rasterize(truth.landmarks, rows, cols, topology);
  const LabelImage pred_mask = rasterize(pred, rows, cols, topology);
  const auto& organs = topology.organs();
  const Index lung_end = organs[1].end;

  MetricRow row;
  row.sample_id = truth.source;
  row.mse = landmark_mse(pred, truth.landmarks);
  const BoolMask gt_lungs = gt_mask.array() == kLabelLungs;
  const BoolMask gt_heart = gt_mask.array() == kLabelHeart;
  row.dice_lungs = dice(pred_mask.array() == kLabelLungs, gt_lungs);
  row.dice_heart = dice(pred_mask.array() == kLabelHeart, gt_heart);
  row.hd_lungs = hausdorff(pred.topRows(lung_end), boundary_points(gt_lungs), truth.spacing_mm);
  row.hd_heart = hausdorff(pred.middleRows(organs[2].begin, organs[2].size()),
                           boundary_points(gt_heart), truth.spacing_mm);
  return row;
}

MetricReport summarize(std::vector<MetricRow> rows) {
  MetricReport rep;
  rep.rows = std::move(rows);
  rep.mean.sample_id = "mean";
  rep.std.sample_id = "std";
  const double n = static_cast<double>(rep.rows.size());
  if (rep.rows.empty()) return rep;
  auto stat = [&](double MetricRow::*field) {
    double m = 0.0;
    for (const MetricRow& r : rep.rows) m += r.*field;
    m /= n;
    double v = 0.0;
    for (const MetricRow& r : rep.rows) v += (r.*field - m) * (r.*field - m);
    rep.mean.*field = m;
    rep.std.*field = std::sqrt(v / n);
  };
  for (auto f : {&MetricRow::mse, &MetricRow::dice_lungs, &MetricRow::hd_lungs,
                 &MetricRow::dice_heart, &MetricRow::hd_heart})
    stat(f);
  return rep;
}

void write_metric_report(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sample_id,mse,dice_lungs,hd_lungs,dice_heart,hd_heart\n" << std::setprecision(10);
  auto line = [&](const MetricRow& r) {
    out << r.sample_id << ',' << r.mse << ',' << r.dice_lungs << ',' << r.hd_lungs << ','
        << r.dice_heart << ',' << r.hd_heart << '\n';
  };
  for (const MetricRow& r : report.rows) line(r);
  line(report.mean);
}

MetricReport evaluate(const Predictor& predict, const std::vector<Sample>& samples,
                      const GraphTopology& topology) {
  std::vector<MetricRow> rows;
  for (const Sample& s : samples) rows.push_back(evaluate_prediction(predict(s.image), s, topology));
  return summarize(std::move(rows));
}

std::vector<OcclusionRow> occlusion_sweep(const Predictor& predict,
                                          const std::vector<Sample>& samples,
                                          const std::vector<double>& fracs, std::uint64_t seed,
                                          const GraphTopology& topology) {
  std::vector<OcclusionRow> out;
  for (double frac : fracs) {
    std::mt19937_64 rng(seed);
    std::vector<double> dices, hds;
    for (const Sample& s : samples) {
      const OccludedImage occ = occlude(s.image, frac, rng);
      const MetricRow r = evaluate_prediction(predict(occ.image), s, topology);
      dices.push_back(0.5 * (r.dice_lungs + r.dice_heart));
      hds.push_back(0.5 * (r.hd_lungs + r.hd_heart));
    }
    auto mean_std = [](const std::vector<double>& v) {
      if (v.empty()) return std::pair{0.0, 0.0};
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - m) * (x - m);
      return std::pair{m, std::sqrt(var / static_cast<double>(v.size()))};
    };
    OcclusionRow row;
    row.frac = frac;
    std::tie(row.dice_mean, row.dice_std) = mean_std(dices);
    std::tie(row.hd_mean, row.hd_std) = mean_std(hds);
    out.push_back(row);
  }
  return out;
}

void write_occlusion_report(const std::filesystem::path& path,
                            const std::vector<OcclusionRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "frac,dice_mean,dice_std,hd_mean,hd_std\n" << std::setprecision(10);
  for (const OcclusionRow& r : rows)
    out << r.frac << ',' << r.dice_mean << ',' << r.dice_std << ',' << r.hd_mean << ','
        << r.hd_std << '\n';
}

}  // namespace hgn
