#include "form/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "form/errors.hpp"

namespace form {

static_assert(std::endian::native == std::endian::little,
              "FGRID writer assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'G', 'R', 'D'};
constexpr std::uint8_t kVersion = 0x01;

void write_header(std::ostream& os, const std::vector<std::uint32_t>& dims) {
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  os.put(static_cast<char>(dims.size()));
  os.write(reinterpret_cast<const char*>(dims.data()),
           static_cast<std::streamsize>(dims.size() * sizeof(std::uint32_t)));
}

std::vector<std::uint32_t> read_header(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("FGRID: bad magic");
  int version = is.get();
  if (version != kVersion) throw IoError("FGRID: unsupported version");
  int ndim = is.get();
  if (ndim != 2 && ndim != 3) throw IoError("FGRID: ndim must be 2 or 3");
  std::vector<std::uint32_t> dims(static_cast<std::size_t>(ndim));
  is.read(reinterpret_cast<char*>(dims.data()),
          static_cast<std::streamsize>(dims.size() * sizeof(std::uint32_t)));
  if (!is) throw IoError("FGRID: truncated header");
  return dims;
}

}  // namespace

void write_fgrid_stream(std::ostream& os, const std::vector<std::uint32_t>& dims,
                        const float* data, std::size_t n) {
  write_header(os, dims);
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(n * sizeof(float)));
  if (!os) throw IoError("FGRID: write failed");
}

std::vector<float> read_fgrid_stream(std::istream& is,
                                     std::vector<std::uint32_t>& dims) {
  dims = read_header(is);
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  std::vector<float> data(n);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw IoError("FGRID: truncated payload");
  return data;
}

void write_fgrid(const std::string& path, const Grid2D& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  write_fgrid_stream(os, {static_cast<std::uint32_t>(g.rows),
                          static_cast<std::uint32_t>(g.cols)},
                     g.v.data(), g.v.size());
}

void write_fgrid(const std::string& path, const Grid3D& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  write_fgrid_stream(os, {static_cast<std::uint32_t>(g.depth),
                          static_cast<std::uint32_t>(g.rows),
                          static_cast<std::uint32_t>(g.cols)},
                     g.v.data(), g.v.size());
}

Grid2D read_fgrid2(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<std::uint32_t> dims;
  auto data = read_fgrid_stream(is, dims);
  if (dims.size() != 2) throw IoError("expected 2D grid: " + path);
  Grid2D g;
  g.rows = static_cast<int>(dims[0]);
  g.cols = static_cast<int>(dims[1]);
  g.v = std::move(data);
  return g;
}

Grid3D read_fgrid3(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<std::uint32_t> dims;
  auto data = read_fgrid_stream(is, dims);
  if (dims.size() != 3) throw IoError("expected 3D grid: " + path);
  Grid3D g;
  g.depth = static_cast<int>(dims[0]);
  g.rows = static_cast<int>(dims[1]);
  g.cols = static_cast<int>(dims[2]);
  g.v = std::move(data);
  return g;
}

float bilinear(const Grid2D& g, float r, float c) {
  r = std::clamp(r, 0.0f, static_cast<float>(g.rows - 1));
  c = std::clamp(c, 0.0f, static_cast<float>(g.cols - 1));
  int r0 = static_cast<int>(std::floor(r));
  int c0 = static_cast<int>(std::floor(c));
  int r1 = std::min(r0 + 1, g.rows - 1);
  int c1 = std::min(c0 + 1, g.cols - 1);
  float fr = r - static_cast<float>(r0);
  float fc = c - static_cast<float>(c0);
  float top = g.at(r0, c0) * (1.0f - fc) + g.at(r0, c1) * fc;
  float bot = g.at(r1, c0) * (1.0f - fc) + g.at(r1, c1) * fc;
  return top * (1.0f - fr) + bot * fr;
}

Grid2D resample(const Grid2D& g, int out_rows, int out_cols) {
  if (g.empty()) throw ValidationError("resample: empty grid");
  Grid2D out(out_rows, out_cols);
  const float sr = static_cast<float>(g.rows) / static_cast<float>(out_rows);
  const float sc = static_cast<float>(g.cols) / static_cast<float>(out_cols);
  for (int r = 0; r < out_rows; ++r) {
    for (int c = 0; c < out_cols; ++c) {
      // align sample points to pixel centers
      float src_r = (static_cast<float>(r) + 0.5f) * sr - 0.5f;
      float src_c = (static_cast<float>(c) + 0.5f) * sc - 0.5f;
      out.at(r, c) = bilinear(g, src_r, src_c);
    }
  }
  return out;
}

}  // namespace form
