#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace form {

// Row-major 2D scalar grid (rows, cols).
struct Grid2D {
  int rows = 0;
  int cols = 0;
  std::vector<float> v;

  Grid2D() = default;
  Grid2D(int r, int c, float fill = 0.0f)
      : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

  float& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const {
    return v[static_cast<std::size_t>(r) * cols + c];
  }
  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
};

// Row-major 3D grid, slowest axis first: (depth, rows, cols).
struct Grid3D {
  int depth = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> v;

  Grid3D() = default;
  Grid3D(int d, int r, int c, float fill = 0.0f)
      : depth(d),
        rows(r),
        cols(c),
        v(static_cast<std::size_t>(d) * r * c, fill) {}

  float& at(int d, int r, int c) {
    return v[(static_cast<std::size_t>(d) * rows + r) * cols + c];
  }
  float at(int d, int r, int c) const {
    return v[(static_cast<std::size_t>(d) * rows + r) * cols + c];
  }
  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
};

// FGRID binary format: magic "FGRD", version 0x01, ndim byte (2 or 3),
// ndim u32 little-endian dims, then f32 little-endian values row-major.
void write_fgrid(const std::string& path, const Grid2D& g);
void write_fgrid(const std::string& path, const Grid3D& g);
Grid2D read_fgrid2(const std::string& path);
Grid3D read_fgrid3(const std::string& path);

// Raw-buffer variants (also used by the model serializer).
void write_fgrid_stream(std::ostream& os, const std::vector<std::uint32_t>& dims,
                        const float* data, std::size_t n);
std::vector<float> read_fgrid_stream(std::istream& is,
                                     std::vector<std::uint32_t>& dims);

// Bilinear sample at fractional (row, col); clamps to borders.
float bilinear(const Grid2D& g, float r, float c);

// Resample to (out_rows, out_cols) with bilinear interpolation.
Grid2D resample(const Grid2D& g, int out_rows, int out_cols);

}  // namespace form
