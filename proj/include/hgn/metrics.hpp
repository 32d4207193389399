#pragma once

#include "hgn/data.hpp"
#include "hgn/graph.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgn {

using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kLabelBackground = 0;
inline constexpr int kLabelLungs = 1;
inline constexpr int kLabelHeart = 2;

/// Even-odd scanline fill; a pixel belongs to the polygon when its center does.
BoolMask fill_polygon(const Eigen::Ref<const Landmarks>& polygon, Index rows, Index cols);

/// Lungs are filled first, the heart overwrites them.
LabelImage rasterize(const Landmarks& landmarks, Index rows, Index cols,
                     const GraphTopology& topology = chest_topology());

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const BoolMask& a, const BoolMask& b);

/// Centers of mask pixels with a 4-neighbour outside the mask.
Landmarks boundary_points(const BoolMask& mask);

/// Symmetric Hausdorff distance between two point sets, scaled by spacing.
template <typename DerivedA, typename DerivedB>
double hausdorff(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                 double spacing = 1.0) {
  if (a.rows() == 0 || b.rows() == 0) throw MetricError("hausdorff: empty point set");
  auto directed = [](const auto& from, const auto& to) {
    double worst = 0.0;
    for (Index i = 0; i < from.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < to.rows(); ++j)
        best = std::min(best, (from.row(i) - to.row(j)).squaredNorm());
      worst = std::max(worst, best);
    }
    return std::sqrt(worst);
  };
  return std::max(directed(a.derived(), b.derived()), directed(b.derived(), a.derived())) *
         spacing;
}

/// Mean squared pixel error over all 2M coordinates.
double landmark_mse(const Landmarks& pred, const Landmarks& gt);

struct OccludedImage {
  Eigen::MatrixXd image;
  Index x = 0, y = 0, side = 0;
};

/// Blacks out a square of side round(frac * image side) at a uniform in-bounds position.
OccludedImage occlude(const Eigen::MatrixXd& image, double box_frac, std::mt19937_64& rng);

/// Max horizontal heart width over max horizontal thorax (both lungs) width.
double compute_ctr(const Landmarks& landmarks, const GraphTopology& topology = chest_topology());
bool ctr_is_normal(double ctr);

struct MetricRow {
  std::string sample_id;
  double mse = 0.0;
  double dice_lungs = 0.0;
  double hd_lungs = 0.0;  // mm
  double dice_heart = 0.0;
  double hd_heart = 0.0;  // mm
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;
  MetricRow std;
};

/// Compares predicted landmarks with a ground-truth sample. The dense
/// reference is the sample mask when present, else its rasterized landmarks.
MetricRow evaluate_prediction(const Landmarks& pred, const Sample& truth,
                              const GraphTopology& topology = chest_topology());
MetricReport summarize(std::vector<MetricRow> rows);
void write_metric_report(const std::filesystem::path& path, const MetricReport& report);

using Predictor = std::function<Landmarks(const Eigen::MatrixXd& image)>;

MetricReport evaluate(const Predictor& predict, const std::vector<Sample>& samples,
                      const GraphTopology& topology = chest_topology());

struct OcclusionRow {
  double frac = 0.0;
  double dice_mean = 0.0, dice_std = 0.0;
  double hd_mean = 0.0, hd_std = 0.0;
};

/// Each fraction re-seeds the box generator with the same seed.
std::vector<OcclusionRow> occlusion_sweep(const Predictor& predict,
                                          const std::vector<Sample>& samples,
                                          const std::vector<double>& fracs, std::uint64_t seed,
                                          const GraphTopology& topology = chest_topology());
void write_occlusion_report(const std::filesystem::path& path,
                            const std::vector<OcclusionRow>& rows);

}  // namespace hgn
