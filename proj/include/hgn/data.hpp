#pragma once

#include "hgn/graph.hpp"

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgn {

/// Ordered M x 2 pixel coordinates (x right, y down); pixel (r, c) covers
/// [c, c+1) x [r, r+1).
using Landmarks = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Label image: 0 background, 1 lungs, 2 heart.
using LabelImage = Eigen::MatrixXi;

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct Sample {
  Eigen::MatrixXd image;  // rows = y, cols = x, values in [0,1]
  Landmarks landmarks;
  std::optional<LabelImage> mask;
  double spacing_mm = 1.0;
  Split split = Split::kTrain;
  std::string source;
};

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- file formats -----------------------------------------------------------

/// Binary PGM (P5), 8 or 16 bit, normalized by maxval.
Eigen::MatrixXd read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& image, int maxval = 255);
LabelImage read_label_pgm(const std::filesystem::path& path);
void write_label_pgm(const std::filesystem::path& path, const LabelImage& labels);

/// Plain text, one "x y" pair per line.
Landmarks read_landmarks(const std::filesystem::path& path);
void write_landmarks(const std::filesystem::path& path, const Landmarks& points);

// --- manifest ---------------------------------------------------------------

struct SampleDescriptor {
  std::filesystem::path image;
  std::filesystem::path landmarks;
  std::optional<std::filesystem::path> mask;
  double spacing_mm = 1.0;
  Split split = Split::kTrain;
  std::string id;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

/// 70/10/20 partition sizes: train rounded to nearest, val floored, test takes
/// the remainder.
SplitCounts split_counts(std::size_t n);

struct Manifest {
  std::vector<SampleDescriptor> entries;
  SplitCounts counts;
};

/// Parses and validates a JSON manifest; relative paths resolve against the
/// manifest's directory. Throws LoadError naming the offending entry.
Manifest load_manifest(const std::filesystem::path& path, Index expected_landmarks = kLandmarkCount);

/// Loads one entry, resampling to image_size x image_size when needed
/// (landmarks and mask follow).
Sample load_sample(const SampleDescriptor& desc, int image_size);

std::vector<Sample> load_split(const Manifest& manifest, Split split, int image_size);

// --- graph construction -----------------------------------------------------

struct LandmarkGraph {
  Eigen::MatrixXd adjacency;
  Eigen::MatrixXd features;  // normalized coordinates, M x 2
};

Eigen::MatrixXd normalize_landmarks(const Landmarks& points, double width, double height);
Landmarks denormalize_landmarks(const Eigen::MatrixXd& normalized, double width, double height);

LandmarkGraph build_graph_from_landmarks(const Landmarks& points, double width, double height,
                                         const GraphTopology& topology = chest_topology());

// --- augmentation -----------------------------------------------------------

struct AugmentationParams {
  double gamma = 1.0;
  double rotation_deg = 0.0;
  double scale_x = 1.0;
  double scale_y = 1.0;
  double offset_x = 0.0;  // crop/pad translation in pixels
  double offset_y = 0.0;
  void validate() const;
};

struct AugmentationRanges {
  double gamma_min = 0.60, gamma_max = 1.40;
  double rotation_max_deg = 3.0;
  double scale_min = 0.9, scale_max = 1.1;
  double offset_max = 8.0;
};

AugmentationParams draw_augmentation(std::mt19937_64& rng, const AugmentationRanges& ranges = {});

/// Homogeneous map from source to output pixel coordinates: scale and rotate
/// about the image center, then translate by the crop/pad offset.
Eigen::Matrix3d augmentation_matrix(const AugmentationParams& params, double width, double height);

bool landmarks_inside(const Landmarks& points, double width, double height);

/// Applies gamma, the geometric map (bilinear resampling, zero fill) and moves
/// landmarks with it. If landmarks leave the frame, rotation/scale/offset are
/// redrawn from rng up to 100 times before falling back to identity geometry.
Sample augment(const Sample& sample, const AugmentationParams& params, std::mt19937_64& rng,
               const AugmentationRanges& ranges = {});

/// Resample an image through the inverse of a source->output map.
Eigen::MatrixXd warp_image(const Eigen::MatrixXd& image, const Eigen::Matrix3d& forward,
                           Index out_rows, Index out_cols);

// --- mask input mode --------------------------------------------------------

/// Replaces the image by mask / 2 so labels {0,1,2} map to {0, 0.5, 1}.
Sample mask_to_input(const Sample& sample);

// --- synthetic phantoms -----------------------------------------------------

struct OrganShape {
  double cx, cy;  // center, pixels
  double ax, ay;  // half-axes, pixels
  double exponent;  // superellipse exponent (2 = ellipse)
};

struct PhantomShape {
  int size = 128;
  std::array<OrganShape, 3> organs;  // right lung, left lung, heart
  double lung_intensity, body_intensity, heart_intensity;
  std::array<double, 4> texture_phase;
};

PhantomShape draw_phantom_shape(std::mt19937_64& rng, int size = 128);
/// Contour points in order, starting at the top and going clockwise on screen.
Landmarks organ_contour(const OrganShape& organ, Index count);
Landmarks phantom_landmarks(const PhantomShape& shape);
Sample render_phantom(const PhantomShape& shape, std::mt19937_64& rng);
Sample synthesize_phantom(std::mt19937_64& rng, int size = 128);

}  // namespace hgn
