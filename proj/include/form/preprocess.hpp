#pragma once

#include <array>
#include <string>

#include "form/anatomy.hpp"
#include "form/grid.hpp"

namespace form::preprocess {

// --- CT phantom/table removal -----------------------------------------------

struct PhantomCrop {
  int crop_row = -1;   // rows at/below this index are discarded
  bool found = false;  // false: no qualifying Hough line, pass through
};

/// Locates the top edge of the phantom/table complex via a Hough transform
/// for near-horizontal lines on the vertical-gradient edge map of the mean
/// axial projection. `found == false` means the volume should pass through
/// uncropped (callers log a warning).
PhantomCrop detect_phantom_crop(const Grid3D& volume);

/// Keeps rows [0, crop_row) of every slice.
Grid3D crop_volume(const Grid3D& volume, int crop_row);

// --- projection / rescale / split -------------------------------------------

enum class Projection { Mean, Max };

Grid2D project_coronal(const Grid3D& volume,
                       Projection aggregation = Projection::Mean);

enum class RescaleMode { Global, PerPatient };

struct RescaleResult {
  Grid2D image;            // values in [0,1]
  bool degenerate = false; // PerPatient on a constant image -> all zeros
};

RescaleResult rescale(const Grid2D& image, RescaleMode mode,
                      double constant = 1.0);

struct Halves {
  Grid2D right;
  Grid2D left_flipped;  // mirrored so orientation matches the right hip
};

/// Vertical midline split; an odd-width center column is dropped.
Halves split_halves(const Grid2D& image);

Grid2D flip_horizontal(const Grid2D& image);

// --- completeness filtering and cropping ------------------------------------

struct KeyPointSet {
  std::array<PointRC, kNumKeyPoints> points;  // half-frame coordinates
  Completeness completeness = Completeness::Complete;
  double confidence = 0.0;  // softmax probability of `completeness`
};

/// Complete-class confidence floor: 0.01 for X-ray, 0.2 for CT.
double completeness_threshold(Modality modality);

/// Include iff the half is Complete with confidence above the modality
/// threshold.
bool completeness_filter(const KeyPointSet& kps, Modality modality);

/// Axis-aligned bounding box of the crop keypoint subset, padded 15% per
/// side, squared around its center, bilinearly resampled to target_size²
/// (96 for CT, 224 for X-ray).
Grid2D crop_femur(const Grid2D& half, const KeyPointSet& kps, int target_size);

/// Continuous crop box in half-frame pixel coordinates (exposed so tests can
/// check marker containment without resampling).
struct CropBox {
  double r0 = 0, r1 = 0, c0 = 0, c1 = 0;
  bool contains(const PointRC& p) const {
    return p.row >= r0 && p.row <= r1 && p.col >= c0 && p.col <= c1;
  }
};
CropBox femur_crop_box(const KeyPointSet& kps);

}  // namespace form::preprocess
