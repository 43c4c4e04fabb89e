#pragma once

#include <array>
#include <string>

#include "form/errors.hpp"

namespace form {

// Shared anatomical vocabulary for the generator, preprocessing, and the
// keypoint detector.

constexpr int kNumKeyPoints = 12;
// keypoint subset spanning the proximal-femur crop box: head apex, greater
// trochanter tip, lesser trochanter, and the two lower shaft edge points
constexpr std::array<int, 5> kCropKeyPoints = {0, 5, 6, 9, 10};

struct PointRC {
  double row = 0.0;
  double col = 0.0;
};

enum class Modality { Xray, Ct3D };
enum class Side { Right = 0, Left = 1 };
enum class Completeness { Complete, Incomplete, Implant };

inline std::string modality_name(Modality m) {
  return m == Modality::Xray ? "xray" : "ct";
}

inline std::string side_name(Side s) {
  return s == Side::Right ? "right" : "left";
}

inline std::string completeness_name(Completeness c) {
  switch (c) {
    case Completeness::Complete: return "complete";
    case Completeness::Incomplete: return "incomplete";
    case Completeness::Implant: return "implant";
  }
  return "complete";
}

inline Completeness parse_completeness(const std::string& s) {
  if (s == "complete") return Completeness::Complete;
  if (s == "incomplete") return Completeness::Incomplete;
  if (s == "implant") return Completeness::Implant;
  throw ValidationError("unknown completeness class: " + s);
}

}  // namespace form
