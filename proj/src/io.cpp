#include "bpnet/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bpnet/error.hpp"

namespace bpnet {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

void put_f32_le(std::ostream& os, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                     static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
  os.write(b, 4);
}

float get_f32(std::istream& is, bool little) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("PFM: truncated pixel data");
  std::uint32_t u = little ? (b[0] | b[1] << 8 | b[2] << 16 | static_cast<std::uint32_t>(b[3]) << 24)
                           : (b[3] | b[2] << 8 | b[1] << 16 | static_cast<std::uint32_t>(b[0]) << 24);
  return std::bit_cast<float>(u);
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const Tensor& image) {
  Tensor t = image.rank() == 2 ? Tensor::from({1, image.dim(0), image.dim(1)},
                                              std::vector<double>(image.data().begin(), image.data().end()))
                               : image;
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw ShapeError("write_pfm", "need 1 or 3 channels, got " + shape_str(image.shape()));
  }
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  auto out = open_out(path);
  out << (c == 3 ? "PF" : "Pf") << '\n' << w << ' ' << h << '\n' << "-1.0" << '\n';
  for (std::size_t y = h; y-- > 0;)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) put_f32_le(out, static_cast<float>(t[(ch * h + y) * w + x]));
  if (!out) throw DataError("write failed: " + path.string());
}

Tensor read_pfm(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string magic;
  std::size_t w = 0, h = 0;
  double scale = 0.0;
  if (!(in >> magic >> w >> h >> scale)) throw DataError("PFM: bad header in " + path.string());
  in.get();  // single whitespace before the raster
  std::size_t c;
  if (magic == "Pf") c = 1;
  else if (magic == "PF") c = 3;
  else throw DataError("PFM: bad magic '" + magic + "' in " + path.string());
  if (w == 0 || h == 0 || scale == 0.0) throw DataError("PFM: bad extents or scale in " + path.string());
  const bool little = scale < 0.0;
  std::vector<double> v(c * h * w);
  for (std::size_t y = h; y-- > 0;)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) v[(ch * h + y) * w + x] = get_f32(in, little);
  return Tensor::from({c, h, w}, std::move(v));
}

void write_pfm(const std::filesystem::path& path, const Grid& grid) {
  write_pfm(path, grid.to_tensor());
}

Grid read_pfm_grid(const std::filesystem::path& path) {
  Tensor t = read_pfm(path);
  if (t.dim(0) != 1) throw DataError("PFM: expected a single-channel map in " + path.string());
  return Grid::from_tensor(t);
}

void write_pgm(const std::filesystem::path& path, const Grid& grid) {
  double lo = INFINITY, hi = -INFINITY;
  for (double v : grid.values)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  auto out = open_out(path);
  out << "P5\n" << grid.width << ' ' << grid.height << "\n255\n";
  for (double v : grid.values) {
    double n = (std::isfinite(v) && hi > lo) ? (v - lo) / (hi - lo) : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * n))));
  }
}

SparseDepthMap read_sparse_csv(const std::filesystem::path& path, std::size_t height,
                               std::size_t width) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("sparse CSV is empty: " + path.string());
  if (line.rfind("x,y,depth_m", 0) != 0) {
    throw DataError("sparse CSV header must be 'x,y,depth_m' in " + path.string());
  }
  SparseDepthMap map(height, width);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    long long x = -1, y = -1;
    double d = 0.0;
    char c1 = 0, c2 = 0;
    std::istringstream ss(line);
    const std::string where = path.string() + ":" + std::to_string(row);
    if (!(ss >> x >> c1 >> y >> c2 >> d) || c1 != ',' || c2 != ',') {
      throw DataError("sparse CSV: cannot parse '" + line + "' at " + where);
    }
    if (x < 0 || y < 0 || x >= static_cast<long long>(width) || y >= static_cast<long long>(height)) {
      throw DataError("sparse CSV: pixel (" + std::to_string(x) + "," + std::to_string(y) +
                      ") outside " + std::to_string(width) + "x" + std::to_string(height) + " at " + where);
    }
    if (!(d > 0.0) || !std::isfinite(d)) throw DataError("sparse CSV: depth must be positive at " + where);
    const auto ux = static_cast<std::size_t>(x), uy = static_cast<std::size_t>(y);
    if (map.is_valid(uy, ux)) throw DataError("sparse CSV: duplicate pixel at " + where);
    map.set(uy, ux, d);
  }
  return map;
}

void write_sparse_csv(const std::filesystem::path& path, const SparseDepthMap& map) {
  std::string text = "x,y,depth_m\n";
  char buf[96];
  for (std::size_t y = 0; y < map.height(); ++y)
    for (std::size_t x = 0; x < map.width(); ++x)
      if (map.is_valid(y, x)) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", x, y, map.at(y, x));
        text += buf;
      }
  write_text(path, text);
}

std::string loss_csv_text(std::span<const double> losses) {
  std::string text = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, losses[i]);
    text += buf;
  }
  return text;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses) {
  write_text(path, loss_csv_text(losses));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace bpnet
