#include "form/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "form/errors.hpp"

namespace form::preprocess {

PhantomCrop detect_phantom_crop(const Grid3D& volume) {
  if (volume.empty()) throw ValidationError("detect_phantom_crop: empty volume");
  const int rows = volume.rows, cols = volume.cols, depth = volume.depth;

  // mean axial projection
  Grid2D proj(rows, cols);
  for (int d = 0; d < depth; ++d)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) proj.at(r, c) += volume.at(d, r, c);
  for (auto& v : proj.v) v /= static_cast<float>(depth);

  // vertical-gradient edge map; g(r,c) is the edge between rows r and r+1
  double gmax = 0.0;
  float pmin = proj.v[0], pmax = proj.v[0];
  for (float v : proj.v) {
    pmin = std::min(pmin, v);
    pmax = std::max(pmax, v);
  }
  std::vector<double> grad(static_cast<std::size_t>(rows - 1) * cols);
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double g = std::fabs(proj.at(r + 1, c) - proj.at(r, c));
      grad[static_cast<std::size_t>(r) * cols + c] = g;
      gmax = std::max(gmax, g);
    }
  PhantomCrop out;
  if (gmax < 1e-9) return out;  // uniform volume: no edges at all
  const double edge_thresh = std::max(0.35 * gmax, 0.02 * (pmax - pmin));

  // Hough accumulator for near-horizontal lines r = b + m*c with small
  // integer rise over the full width
  constexpr int kSlopes = 5;  // rise of -2..2 pixels across the image
  std::vector<int> acc(static_cast<std::size_t>(kSlopes) * rows, 0);
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (grad[static_cast<std::size_t>(r) * cols + c] < edge_thresh) continue;
      for (int k = 0; k < kSlopes; ++k) {
        double m = static_cast<double>(k - 2) / std::max(1, cols - 1);
        int b = static_cast<int>(std::lround((r + 1) - m * c));
        if (b >= 1 && b < rows) ++acc[static_cast<std::size_t>(k) * rows + b];
      }
    }

  const int vote_thresh = static_cast<int>(std::ceil(0.75 * cols));
  int best = rows;
  for (int k = 0; k < kSlopes; ++k)
    for (int b = 1; b < rows; ++b)
      if (acc[static_cast<std::size_t>(k) * rows + b] >= vote_thresh)
        best = std::min(best, b);
  if (best == rows) return out;  // no full-width line: NoPhantomFound
  out.found = true;
  out.crop_row = best;
  return out;
}

Grid3D crop_volume(const Grid3D& volume, int crop_row) {
  if (crop_row < 1 || crop_row > volume.rows)
    throw ValidationError("crop_volume: crop row out of range");
  Grid3D out(volume.depth, crop_row, volume.cols);
  for (int d = 0; d < volume.depth; ++d)
    for (int r = 0; r < crop_row; ++r)
      for (int c = 0; c < volume.cols; ++c)
        out.at(d, r, c) = volume.at(d, r, c);
  return out;
}

Grid2D project_coronal(const Grid3D& volume, Projection aggregation) {
  if (volume.empty()) throw ValidationError("project_coronal: empty volume");
  Grid2D out(volume.rows, volume.cols);
  if (aggregation == Projection::Mean) {
    for (int d = 0; d < volume.depth; ++d)
      for (int r = 0; r < volume.rows; ++r)
        for (int c = 0; c < volume.cols; ++c)
          out.at(r, c) += volume.at(d, r, c);
    for (auto& v : out.v) v /= static_cast<float>(volume.depth);
  } else {
    for (int r = 0; r < volume.rows; ++r)
      for (int c = 0; c < volume.cols; ++c) {
        float m = volume.at(0, r, c);
        for (int d = 1; d < volume.depth; ++d)
          m = std::max(m, volume.at(d, r, c));
        out.at(r, c) = m;
      }
  }
  return out;
}

RescaleResult rescale(const Grid2D& image, RescaleMode mode, double constant) {
  if (image.empty()) throw ValidationError("rescale: empty image");
  RescaleResult res;
  res.image = image;
  if (mode == RescaleMode::Global) {
    if (constant <= 0.0)
      throw ValidationError("rescale: Global constant must be positive");
    for (auto& v : res.image.v)
      v = std::clamp(v / static_cast<float>(constant), 0.0f, 1.0f);
  } else {
    float lo = image.v[0], hi = image.v[0];
    for (float v : image.v) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi <= lo) {
      std::fill(res.image.v.begin(), res.image.v.end(), 0.0f);
      res.degenerate = true;
    } else {
      for (auto& v : res.image.v) v = (v - lo) / (hi - lo);
    }
  }
  return res;
}

Halves split_halves(const Grid2D& image) {
  if (image.cols < 2) throw ValidationError("split_halves: width < 2");
  const int half = image.cols / 2;
  Halves out{Grid2D(image.rows, half), Grid2D(image.rows, half)};
  for (int r = 0; r < image.rows; ++r)
    for (int c = 0; c < half; ++c) {
      out.right.at(r, c) = image.at(r, c);
      out.left_flipped.at(r, c) = image.at(r, image.cols - 1 - c);
    }
  return out;
}

Grid2D flip_horizontal(const Grid2D& image) {
  Grid2D out(image.rows, image.cols);
  for (int r = 0; r < image.rows; ++r)
    for (int c = 0; c < image.cols; ++c)
      out.at(r, c) = image.at(r, image.cols - 1 - c);
  return out;
}

double completeness_threshold(Modality modality) {
  return modality == Modality::Xray ? 0.01 : 0.2;
}

bool completeness_filter(const KeyPointSet& kps, Modality modality) {
  return kps.completeness == Completeness::Complete &&
         kps.confidence > completeness_threshold(modality);
}

CropBox femur_crop_box(const KeyPointSet& kps) {
  CropBox box;
  bool first = true;
  for (int idx : kCropKeyPoints) {
    const auto& p = kps.points[static_cast<std::size_t>(idx)];
    if (first) {
      box.r0 = box.r1 = p.row;
      box.c0 = box.c1 = p.col;
      first = false;
    } else {
      box.r0 = std::min(box.r0, p.row);
      box.r1 = std::max(box.r1, p.row);
      box.c0 = std::min(box.c0, p.col);
      box.c1 = std::max(box.c1, p.col);
    }
  }
  double h = box.r1 - box.r0, w = box.c1 - box.c0;
  if (h <= 1e-9 || w <= 1e-9)
    throw ValidationError("femur_crop_box: degenerate keypoint box");
  box.r0 -= 0.15 * h;
  box.r1 += 0.15 * h;
  box.c0 -= 0.15 * w;
  box.c1 += 0.15 * w;
  // square around the center
  double side = std::max(box.r1 - box.r0, box.c1 - box.c0);
  double rc = 0.5 * (box.r0 + box.r1), cc = 0.5 * (box.c0 + box.c1);
  box.r0 = rc - side / 2;
  box.r1 = rc + side / 2;
  box.c0 = cc - side / 2;
  box.c1 = cc + side / 2;
  return box;
}

Grid2D crop_femur(const Grid2D& half, const KeyPointSet& kps,
                  int target_size) {
  if (target_size < 2) throw ValidationError("crop_femur: bad target size");
  CropBox box = femur_crop_box(kps);
  Grid2D out(target_size, target_size);
  for (int i = 0; i < target_size; ++i)
    for (int j = 0; j < target_size; ++j) {
      double r = box.r0 + i * (box.r1 - box.r0) / (target_size - 1);
      double c = box.c0 + j * (box.c1 - box.c0) / (target_size - 1);
      out.at(i, j) =
          bilinear(half, static_cast<float>(r), static_cast<float>(c));
    }
  return out;
}

}  // namespace form::preprocess
