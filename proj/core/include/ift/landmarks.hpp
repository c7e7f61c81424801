#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "ift/tensor.hpp"

namespace ift::landmarks {

constexpr int kLandmarks = 51;

enum class Frame { RawPixels, Normalized };

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// The 51 inner-face points of the standard 68-point annotation scheme
// (indices 17..67: brows, nose, eyes, mouth), re-indexed from 0.
struct LandmarkIndices {
  int nose_tip = 13;         // 68-pt index 30
  int left_outer_eye = 19;   // 68-pt index 36
  int right_outer_eye = 28;  // 68-pt index 45
};

struct LandmarkSet {
  std::array<Point, kLandmarks> points{};
  Frame frame = Frame::RawPixels;
};

// Parameters of the similarity transform that maps raw pixels into the
// canonical frame; kept per frame so predictions can be mapped back.
struct NormalizationRecord {
  Point nose;
  double theta = 0.0;  // rotation of the eye-corner axis in raw pixels
  double d = 1.0;      // outer eye-corner distance in raw pixels
};

struct MetricConfig {
  double d_real_mm = 90.0;  // measured outer eye-corner distance
  double d_norm = 1.0;      // canonical-frame eye-corner distance
};

// CSV with header frame,x0..x50,y0..y50; one row per video frame.
std::vector<LandmarkSet> ingest_landmarks(const std::filesystem::path& path);
void write_landmarks(const std::filesystem::path& path, const std::vector<LandmarkSet>& sets);

// Canonicalization: nose tip to the origin, eye-corner axis onto +x, outer
// eye-corner distance scaled to 1.
std::pair<LandmarkSet, NormalizationRecord> normalize(const LandmarkSet& raw,
                                                      const LandmarkIndices& idx = {});
LandmarkSet denormalize(const LandmarkSet& normalized, const NormalizationRecord& rec);

// Mean per-landmark Euclidean error scaled to millimeters.
double mae(const LandmarkSet& g, const LandmarkSet& r, const MetricConfig& cfg);
// Mean normalized error in percent.
double nme(const LandmarkSet& g, const LandmarkSet& r, const MetricConfig& cfg = {});

struct ErrorBreakdown {
  std::array<double, kLandmarks> per_landmark_mae_mm{};
  std::vector<double> frame_mae_mm_sorted;  // CDF samples
};

ErrorBreakdown per_landmark_errors(const std::vector<LandmarkSet>& g,
                                   const std::vector<LandmarkSet>& r, const MetricConfig& cfg);

// [51,2] tensor <-> landmark set (x then y per point).
Tensor to_tensor(const LandmarkSet& set);
LandmarkSet from_tensor(const Tensor& t, Frame frame);

}  // namespace ift::landmarks
