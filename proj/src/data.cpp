#include "hgn/data.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace hgn {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "'");
}

SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.train = (7 * n + 5) / 10;
  c.val = n / 10;
  if (c.train + c.val > n) c.val = n - c.train;
  c.test = n - c.train - c.val;
  return c;
}

namespace {

std::size_t count_landmark_rows(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) ++n;
  return n;
}

LabelImage resample_labels(const LabelImage& labels, Index rows, Index cols) {
  LabelImage out(rows, cols);
  const double sy = static_cast<double>(labels.rows()) / rows;
  const double sx = static_cast<double>(labels.cols()) / cols;
  for (Index y = 0; y < rows; ++y)
    for (Index x = 0; x < cols; ++x) {
      const Index ys = std::min<Index>(labels.rows() - 1, static_cast<Index>((y + 0.5) * sy));
      const Index xs = std::min<Index>(labels.cols() - 1, static_cast<Index>((x + 0.5) * sx));
      out(y, x) = labels(ys, xs);
    }
  return out;
}

}  // namespace

Manifest load_manifest(const fs::path& path, Index expected_landmarks) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(path.string() + ": malformed JSON: " + e.what());
  }
  if (!doc.is_array()) throw LoadError(path.string() + ": manifest must be a JSON array");

  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  Manifest m;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& e = doc[i];
    const std::string where = path.string() + ": entry " + std::to_string(i);
    try {
      SampleDescriptor d;
      d.image = resolve(e.at("image").get<std::string>());
      d.landmarks = resolve(e.at("landmarks").get<std::string>());
      if (e.contains("mask") && !e.at("mask").is_null())
        d.mask = resolve(e.at("mask").get<std::string>());
      d.spacing_mm = e.at("spacing_mm").get<double>();
      d.split = parse_split(e.at("split").get<std::string>());
      d.id = e.value("id", d.image.stem().string());
      if (!(d.spacing_mm > 0.0)) throw LoadError("spacing_mm must be positive");
      if (!fs::exists(d.image)) throw LoadError("image " + d.image.string() + " does not exist");
      if (!fs::exists(d.landmarks))
        throw LoadError("landmark file " + d.landmarks.string() + " does not exist");
      if (d.mask && !fs::exists(*d.mask))
        throw LoadError("mask " + d.mask->string() + " does not exist");
      const std::size_t rows = count_landmark_rows(d.landmarks);
      if (rows != static_cast<std::size_t>(expected_landmarks))
        throw LoadError("landmark file " + d.landmarks.string() + " has " + std::to_string(rows) +
                        " lines, expected " + std::to_string(expected_landmarks));
      switch (d.split) {
        case Split::kTrain: ++m.counts.train; break;
        case Split::kVal: ++m.counts.val; break;
        case Split::kTest: ++m.counts.test; break;
      }
      m.entries.push_back(std::move(d));
    } catch (const LoadError& err) {
      throw LoadError(where + ": " + err.what());
    } catch (const std::exception& err) {
      throw LoadError(where + ": malformed entry: " + err.what());
    }
  }
  return m;
}

Sample load_sample(const SampleDescriptor& desc, int image_size) {
  Sample s;
  s.image = read_pgm(desc.image);
  s.landmarks = read_landmarks(desc.landmarks);
  if (desc.mask) s.mask = read_label_pgm(*desc.mask);
  s.spacing_mm = desc.spacing_mm;
  s.split = desc.split;
  s.source = desc.id;
  const Index rows = s.image.rows(), cols = s.image.cols();
  if (rows != image_size || cols != image_size) {
    const double fx = static_cast<double>(image_size) / cols;
    const double fy = static_cast<double>(image_size) / rows;
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 0) = fx;
    m(1, 1) = fy;
    s.image = warp_image(s.image, m, image_size, image_size);
    s.landmarks.col(0) *= fx;
    s.landmarks.col(1) *= fy;
    // Anisotropic resampling keeps the x spacing as the reference.
    s.spacing_mm /= fx;
    if (s.mask) s.mask = resample_labels(*s.mask, image_size, image_size);
  }
  if (s.mask && (s.mask->rows() != image_size || s.mask->cols() != image_size))
    throw LoadError(desc.id + ": mask size differs from image size");
  return s;
}

std::vector<Sample> load_split(const Manifest& manifest, Split split, int image_size) {
  std::vector<Sample> out;
  for (const SampleDescriptor& d : manifest.entries)
    if (d.split == split) out.push_back(load_sample(d, image_size));
  return out;
}

Eigen::MatrixXd normalize_landmarks(const Landmarks& points, double width, double height) {
  Eigen::MatrixXd out(points.rows(), 2);
  out.col(0) = points.col(0) / width;
  out.col(1) = points.col(1) / height;
  return out;
}

Landmarks denormalize_landmarks(const Eigen::MatrixXd& normalized, double width, double height) {
  Landmarks out(normalized.rows(), 2);
  out.col(0) = normalized.col(0) * width;
  out.col(1) = normalized.col(1) * height;
  return out;
}

LandmarkGraph build_graph_from_landmarks(const Landmarks& points, double width, double height,
                                         const GraphTopology& topology) {
  if (points.rows() != topology.num_nodes())
    throw std::invalid_argument("build_graph_from_landmarks: " + std::to_string(points.rows()) +
                                " landmarks, topology has " +
                                std::to_string(topology.num_nodes()) + " nodes");
  for (Index i = 0; i < points.rows(); ++i) {
    const double x = points(i, 0), y = points(i, 1);
    if (!std::isfinite(x) || !std::isfinite(y) || x < 0.0 || y < 0.0 || x > width || y > height)
      throw std::invalid_argument("build_graph_from_landmarks: landmark " + std::to_string(i) +
                                  " lies outside the image");
  }
  return {topology.adjacency(), normalize_landmarks(points, width, height)};
}

Sample mask_to_input(const Sample& sample) {
  if (!sample.mask) throw std::invalid_argument("mask_to_input: sample has no mask");
  const LabelImage& m = *sample.mask;
  if ((m.array() < 0).any() || (m.array() > 2).any())
    throw std::invalid_argument("mask_to_input: labels must be in {0,1,2}");
  Sample out = sample;
  out.image = m.cast<double>() / 2.0;
  return out;
}

}  // namespace hgn
