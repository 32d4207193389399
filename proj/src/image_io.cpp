#include "hgn/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hgn {

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int parse_header_int(std::istream& in, const std::filesystem::path& path, const char* what) {
  const std::string tok = pgm_token(in);
  int v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || v <= 0)
    throw LoadError(path.string() + ": bad PGM " + what + " '" + tok + "'");
  return v;
}

struct RawPgm {
  int width, height, maxval;
  std::vector<int> pixels;
};

RawPgm read_raw_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image " + path.string());
  if (pgm_token(in) != "P5") throw LoadError(path.string() + ": not a binary PGM (P5) file");
  RawPgm img;
  img.width = parse_header_int(in, path, "width");
  img.height = parse_header_int(in, path, "height");
  img.maxval = parse_header_int(in, path, "maxval");
  if (img.maxval > 65535) throw LoadError(path.string() + ": maxval above 65535");
  const int bytes = img.maxval < 256 ? 1 : 2;
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
  std::vector<unsigned char> buf(count * bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw LoadError(path.string() + ": truncated pixel data");
  img.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    img.pixels[i] = bytes == 1 ? buf[i] : (buf[2 * i] << 8) | buf[2 * i + 1];
  return img;
}

void write_raw_pgm(const std::filesystem::path& path, int width, int height, int maxval,
                   const std::vector<int>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << '\n' << maxval << '\n';
  const int bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> buf(pixels.size() * bytes);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (bytes == 1) {
      buf[i] = static_cast<unsigned char>(pixels[i]);
    } else {
      buf[2 * i] = static_cast<unsigned char>(pixels[i] >> 8);
      buf[2 * i + 1] = static_cast<unsigned char>(pixels[i] & 0xff);
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace

Eigen::MatrixXd read_pgm(const std::filesystem::path& path) {
  const RawPgm raw = read_raw_pgm(path);
  Eigen::MatrixXd img(raw.height, raw.width);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      img(y, x) = static_cast<double>(raw.pixels[static_cast<std::size_t>(y) * raw.width + x]) /
                  raw.maxval;
  return img;
}

void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& image, int maxval) {
  if (maxval < 1 || maxval > 65535) throw std::invalid_argument("write_pgm: maxval out of range");
  std::vector<int> px(static_cast<std::size_t>(image.size()));
  for (Index y = 0; y < image.rows(); ++y)
    for (Index x = 0; x < image.cols(); ++x) {
      const double v = std::clamp(image(y, x), 0.0, 1.0);
      px[static_cast<std::size_t>(y * image.cols() + x)] =
          static_cast<int>(std::lround(v * maxval));
    }
  write_raw_pgm(path, static_cast<int>(image.cols()), static_cast<int>(image.rows()), maxval, px);
}

LabelImage read_label_pgm(const std::filesystem::path& path) {
  const RawPgm raw = read_raw_pgm(path);
  LabelImage labels(raw.height, raw.width);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      labels(y, x) = raw.pixels[static_cast<std::size_t>(y) * raw.width + x];
  return labels;
}

void write_label_pgm(const std::filesystem::path& path, const LabelImage& labels) {
  std::vector<int> px(static_cast<std::size_t>(labels.size()));
  for (Index y = 0; y < labels.rows(); ++y)
    for (Index x = 0; x < labels.cols(); ++x)
      px[static_cast<std::size_t>(y * labels.cols() + x)] = labels(y, x);
  write_raw_pgm(path, static_cast<int>(labels.cols()), static_cast<int>(labels.rows()), 255, px);
}

Landmarks read_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open landmark file " + path.string());
  std::vector<std::array<double, 2>> pts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double x, y;
    std::string rest;
    if (!(ls >> x >> y) || (ls >> rest))
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": expected 'x y', got '" +
                      line + "'");
    pts.push_back({x, y});
  }
  Landmarks out(static_cast<Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out(static_cast<Index>(i), 0) = pts[i][0];
    out(static_cast<Index>(i), 1) = pts[i][1];
  }
  return out;
}

void write_landmarks(const std::filesystem::path& path, const Landmarks& points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Index i = 0; i < points.rows(); ++i)
    out << format_double(points(i, 0)) << ' ' << format_double(points(i, 1)) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace hgn
