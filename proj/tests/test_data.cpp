#include "hgn/data.hpp"
#include "hgn/metrics.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace hgn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("hgn_test_data_" + tag + "_" +
                                        std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Landmarks reference_landmarks() {
  std::mt19937_64 rng(3);
  return phantom_landmarks(draw_phantom_shape(rng));
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Writes a valid one-sample dataset and returns the manifest entry for editing.
nlohmann::json write_entry(const fs::path& dir, const std::string& stem) {
  std::mt19937_64 rng(11);
  const Sample s = synthesize_phantom(rng, 32);
  write_pgm(dir / (stem + ".pgm"), s.image);
  write_landmarks(dir / (stem + ".txt"), s.landmarks);
  return {{"image", stem + ".pgm"}, {"landmarks", stem + ".txt"}, {"spacing_mm", 0.5},
          {"split", "train"}};
}

}  // namespace

TEST_CASE("split sizes") {
  CHECK(split_counts(247) == SplitCounts{173, 24, 50});
  CHECK(split_counts(0) == SplitCounts{0, 0, 0});
  CHECK(split_counts(10) == SplitCounts{7, 1, 2});
  for (std::size_t n = 0; n < 500; ++n) {
    const SplitCounts c = split_counts(n);
    CHECK(c.train + c.val + c.test == n);
  }
  CHECK(parse_split("val") == Split::kVal);
  CHECK(to_string(Split::kTest) == "test");
  CHECK_THROWS_AS(parse_split("holdout"), std::invalid_argument);
}

TEST_CASE("PGM round trip") {
  TempDir tmp("pgm");
  Eigen::MatrixXd img(5, 7);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<double>(i) / (img.size() - 1);

  SUBCASE("8 bit") {
    write_pgm(tmp.path / "a.pgm", img, 255);
    const Eigen::MatrixXd back = read_pgm(tmp.path / "a.pgm");
    REQUIRE(back.rows() == 5);
    REQUIRE(back.cols() == 7);
    CHECK((back - img).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);
    CHECK(fs::file_size(tmp.path / "a.pgm") == std::string("P5\n7 5\n255\n").size() + 35);
  }
  SUBCASE("16 bit") {
    write_pgm(tmp.path / "b.pgm", img, 65535);
    const Eigen::MatrixXd back = read_pgm(tmp.path / "b.pgm");
    CHECK((back - img).cwiseAbs().maxCoeff() <= 0.5 / 65535 + 1e-12);
  }
  SUBCASE("header comments and big-endian samples") {
    const std::string bytes = std::string("P5\n# made by hand\n2 1\n1000\n") + '\x01' + '\xF4' +
                              '\x03' + '\xE8';
    std::ofstream(tmp.path / "c.pgm", std::ios::binary) << bytes;
    const Eigen::MatrixXd back = read_pgm(tmp.path / "c.pgm");
    CHECK(back(0, 0) == doctest::Approx(0.5));
    CHECK(back(0, 1) == doctest::Approx(1.0));
  }
  SUBCASE("labels") {
    LabelImage labels(3, 4);
    labels << 0, 1, 2, 1, 2, 2, 0, 0, 1, 1, 1, 0;
    write_label_pgm(tmp.path / "m.pgm", labels);
    CHECK(read_label_pgm(tmp.path / "m.pgm") == labels);
  }
  SUBCASE("errors") {
    write_text(tmp.path / "ascii.pgm", "P2\n1 1\n255\n0\n");
    CHECK_THROWS_AS(read_pgm(tmp.path / "ascii.pgm"), LoadError);
    std::ofstream(tmp.path / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nabc";
    CHECK_THROWS_AS(read_pgm(tmp.path / "short.pgm"), LoadError);
    CHECK_THROWS_AS(read_pgm(tmp.path / "missing.pgm"), LoadError);
  }
}

TEST_CASE("landmark files") {
  TempDir tmp("lm");
  const Landmarks pts = reference_landmarks();
  write_landmarks(tmp.path / "a.txt", pts);
  const Landmarks back = read_landmarks(tmp.path / "a.txt");
  REQUIRE(back.rows() == kLandmarkCount);
  CHECK(back == pts);

  write_text(tmp.path / "bad.txt", "1 2\n3 four\n");
  try {
    read_landmarks(tmp.path / "bad.txt");
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  write_text(tmp.path / "extra.txt", "1 2 3\n");
  CHECK_THROWS_AS(read_landmarks(tmp.path / "extra.txt"), LoadError);
}

TEST_CASE("manifest validation") {
  TempDir tmp("manifest");
  const nlohmann::json good = write_entry(tmp.path, "s0");
  auto write_manifest = [&](const nlohmann::json& doc) {
    write_text(tmp.path / "manifest.json", doc.dump());
    return tmp.path / "manifest.json";
  };

  const Manifest m = load_manifest(write_manifest(nlohmann::json::array({good})));
  REQUIRE(m.entries.size() == 1);
  CHECK(m.entries[0].image == tmp.path / "s0.pgm");
  CHECK(m.entries[0].spacing_mm == 0.5);
  CHECK(m.counts == SplitCounts{1, 0, 0});

  auto rejects = [&](nlohmann::json doc, const std::string& fragment) {
    try {
      load_manifest(write_manifest(doc));
      FAIL("manifest accepted: " << doc.dump());
    } catch (const LoadError& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };

  auto edited = [&](auto mutate) {
    nlohmann::json e = good;
    mutate(e);
    return nlohmann::json::array({good, e});
  };
  rejects(edited([](auto& e) { e["image"] = "nope.pgm"; }), "entry 1");
  rejects(edited([](auto& e) { e["spacing_mm"] = -1.0; }), "spacing_mm");
  rejects(edited([](auto& e) { e["split"] = "dev"; }), "entry 1");
  rejects(edited([](auto& e) { e.erase("landmarks"); }), "malformed entry");
  rejects(edited([](auto& e) { e["mask"] = "absent.pgm"; }), "mask");
  rejects(nlohmann::json::object(), "JSON array");

  write_text(tmp.path / "short.txt", "1 1\n2 2\n");
  rejects(edited([](auto& e) { e["landmarks"] = "short.txt"; }), "expected 120");

  write_text(tmp.path / "manifest.json", "[{");
  CHECK_THROWS_AS(load_manifest(tmp.path / "manifest.json"), LoadError);
}

TEST_CASE("loading resamples to the network size") {
  TempDir tmp("load");
  std::mt19937_64 rng(5);
  Sample s = synthesize_phantom(rng, 64);
  s.mask = rasterize(s.landmarks, 64, 64);
  write_pgm(tmp.path / "i.pgm", s.image, 65535);
  write_landmarks(tmp.path / "l.txt", s.landmarks);
  write_label_pgm(tmp.path / "m.pgm", *s.mask);

  SampleDescriptor d{tmp.path / "i.pgm", tmp.path / "l.txt", tmp.path / "m.pgm", 1.0,
                     Split::kVal, "x"};
  const Sample same = load_sample(d, 64);
  CHECK((same.landmarks - s.landmarks).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(*same.mask == *s.mask);

  const Sample up = load_sample(d, 128);
  CHECK(up.image.rows() == 128);
  CHECK(up.mask->rows() == 128);
  CHECK((up.landmarks - 2.0 * s.landmarks).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(up.spacing_mm == doctest::Approx(0.5));
  CHECK(up.split == Split::kVal);
}

TEST_CASE("graph from landmarks") {
  const Landmarks pts = reference_landmarks();
  const LandmarkGraph g = build_graph_from_landmarks(pts, 128, 128);
  CHECK(g.adjacency.rows() == 120);
  CHECK(g.adjacency.sum() == doctest::Approx(240.0));
  CHECK((g.adjacency.rowwise().sum().array() == 2.0).all());
  CHECK(g.features.minCoeff() >= 0.0);
  CHECK(g.features.maxCoeff() <= 1.0);

  std::mt19937_64 rng(9);
  const LandmarkGraph other =
      build_graph_from_landmarks(phantom_landmarks(draw_phantom_shape(rng)), 128, 128);
  CHECK(other.adjacency == g.adjacency);

  const Landmarks back = denormalize_landmarks(normalize_landmarks(pts, 128, 96), 128, 96);
  CHECK((back - pts).cwiseAbs().maxCoeff() < 1e-9);

  Landmarks outside = pts;
  outside(7, 0) = 140.0;
  CHECK_THROWS_AS(build_graph_from_landmarks(outside, 128, 128), std::invalid_argument);
  CHECK_THROWS_AS(build_graph_from_landmarks(pts.topRows(100), 128, 128), std::invalid_argument);
}

TEST_CASE("augmentation") {
  std::mt19937_64 gen(21);
  Sample s = synthesize_phantom(gen, 64);
  s.mask = rasterize(s.landmarks, 64, 64);

  SUBCASE("identity parameters leave the sample unchanged") {
    std::mt19937_64 rng(1);
    const Sample out = augment(s, AugmentationParams{}, rng);
    CHECK(out.image == s.image);
    CHECK(out.landmarks == s.landmarks);
    CHECK(*out.mask == *s.mask);
  }

  SUBCASE("rotation fixes the center") {
    AugmentationParams p;
    p.rotation_deg = 3.0;
    const Eigen::Matrix3d m = augmentation_matrix(p, 64, 64);
    const Eigen::Vector3d c = m * Eigen::Vector3d(32, 32, 1);
    CHECK(std::abs(c.x() - 32) < 1e-9);
    CHECK(std::abs(c.y() - 32) < 1e-9);
  }

  SUBCASE("landmarks follow the composed affine map") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      AugmentationParams p = draw_augmentation(rng);
      p.offset_x = std::clamp(p.offset_x, -2.0, 2.0);
      p.offset_y = std::clamp(p.offset_y, -2.0, 2.0);
      const double t = p.rotation_deg * M_PI / 180.0;
      // Built independently: translate(c + o) * R * S * translate(-c).
      Eigen::Matrix3d oracle;
      oracle << p.scale_x * std::cos(t), -p.scale_y * std::sin(t), 0,  //
          p.scale_x * std::sin(t), p.scale_y * std::cos(t), 0,         //
          0, 0, 1;
      const Eigen::Vector2d c(32, 32);
      oracle.topRightCorner<2, 1>() =
          c + Eigen::Vector2d(p.offset_x, p.offset_y) - oracle.topLeftCorner<2, 2>() * c;
      std::mt19937_64 unused(0);
      const Sample out = augment(s, p, unused);
      for (Index i = 0; i < s.landmarks.rows(); ++i) {
        const Eigen::Vector3d q = oracle * Eigen::Vector3d(s.landmarks(i, 0), s.landmarks(i, 1), 1);
        CHECK(std::abs(out.landmarks(i, 0) - q.x()) < 1e-9);
        CHECK(std::abs(out.landmarks(i, 1) - q.y()) < 1e-9);
      }
    }
  }

  SUBCASE("accepted draws keep every landmark in frame") {
    std::mt19937_64 rng(8);
    AugmentationRanges wide;
    wide.offset_max = 30.0;
    for (int trial = 0; trial < 100; ++trial) {
      AugmentationParams p = draw_augmentation(rng, wide);
      const Sample out = augment(s, p, rng, wide);
      CHECK(landmarks_inside(out.landmarks, 64, 64));
      CHECK(out.image.minCoeff() >= 0.0);
      CHECK(out.image.maxCoeff() <= 1.0 + 1e-12);
    }
  }

  SUBCASE("impossible ranges fall back to identity geometry") {
    AugmentationRanges far;
    far.offset_max = 1000.0;
    far.scale_min = 3.0;
    far.scale_max = 4.0;
    AugmentationParams p;
    p.scale_x = p.scale_y = 3.5;
    p.gamma = 1.2;
    std::mt19937_64 rng(2);
    const Sample out = augment(s, p, rng, far);
    CHECK(out.landmarks == s.landmarks);
    CHECK((out.image - s.image.array().pow(1.2).matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("gamma only touches intensities") {
    AugmentationParams p;
    p.gamma = 0.7;
    std::mt19937_64 rng(2);
    const Sample out = augment(s, p, rng);
    CHECK(out.landmarks == s.landmarks);
    CHECK(out.image(10, 10) == doctest::Approx(std::pow(s.image(10, 10), 0.7)));
  }

  SUBCASE("invalid parameters") {
    AugmentationParams p;
    p.gamma = 2.0;
    std::mt19937_64 rng(2);
    CHECK_THROWS_AS(augment(s, p, rng), std::invalid_argument);
  }
}

TEST_CASE("mask input mode") {
  Sample s;
  s.image = Eigen::MatrixXd::Constant(4, 4, 0.3);
  s.mask = LabelImage::Zero(4, 4);
  CHECK(mask_to_input(s).image.isZero());
  (*s.mask)(1, 2) = 2;
  (*s.mask)(3, 0) = 1;
  const Sample in = mask_to_input(s);
  CHECK(in.image(1, 2) == 1.0);
  CHECK(in.image(3, 0) == 0.5);
  (*s.mask)(0, 0) = 3;
  CHECK_THROWS_AS(mask_to_input(s), std::invalid_argument);
  s.mask.reset();
  CHECK_THROWS_AS(mask_to_input(s), std::invalid_argument);
}

TEST_CASE("phantom generator") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const PhantomShape shape = draw_phantom_shape(rng);
    const Sample s = render_phantom(shape, rng);
    REQUIRE(s.landmarks.rows() == kLandmarkCount);
    CHECK(landmarks_inside(s.landmarks, 128, 128));
    CHECK(s.image.minCoeff() >= 0.0);
    CHECK(s.image.maxCoeff() <= 1.0);

    // Landmark counts per organ, contour closed by the cycle.
    const auto& organs = chest_topology().organs();
    REQUIRE(organs.size() == 3);
    CHECK(organs[0].size() == 44);
    CHECK(organs[1].size() == 50);
    CHECK(organs[2].size() == 26);

    // Rasterized heart width reproduces the generator's axis.
    const BoolMask heart = fill_polygon(s.landmarks.middleRows(organs[2].begin, organs[2].size()),
                                        128, 128);
    Index widest = 0;
    for (Index r = 0; r < 128; ++r) widest = std::max<Index>(widest, heart.row(r).count());
    CHECK(std::abs(static_cast<double>(widest) - 2.0 * shape.organs[2].ax) <= 2.0);
  }

  std::mt19937_64 a(99), b(99);
  CHECK(synthesize_phantom(a).image == synthesize_phantom(b).image);
}
