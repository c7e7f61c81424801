#include "ift/landmarks.hpp"

#include <cmath>

#include "ift/csv.hpp"
#include "ift/error.hpp"

namespace ift::landmarks {

namespace {

std::vector<std::string> landmark_header() {
  std::vector<std::string> h;
  h.push_back("frame");
  for (int i = 0; i < kLandmarks; ++i) h.push_back("x" + std::to_string(i));
  for (int i = 0; i < kLandmarks; ++i) h.push_back("y" + std::to_string(i));
  return h;
}

void require_normalized(const LandmarkSet& s, const char* what) {
  if (s.frame != Frame::Normalized) {
    throw Error(ErrorKind::Data, std::string(what) + " requires landmark sets in the normalized frame");
  }
}

}  // namespace

std::vector<LandmarkSet> ingest_landmarks(const std::filesystem::path& path) {
  const io::CsvTable table = io::read_numeric_csv(path);
  const size_t expected = 1 + 2 * kLandmarks;
  if (table.header.size() != expected) {
    throw Error(ErrorKind::Data, path.string() + ": expected " + std::to_string(expected) +
                                     " columns (frame index plus " + std::to_string(2 * kLandmarks) +
                                     " coordinates), got " + std::to_string(table.header.size()));
  }
  std::vector<LandmarkSet> sets;
  sets.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    LandmarkSet s;
    s.frame = Frame::RawPixels;
    for (int i = 0; i < kLandmarks; ++i) {
      s.points[static_cast<size_t>(i)].x = row[static_cast<size_t>(1 + i)];
      s.points[static_cast<size_t>(i)].y = row[static_cast<size_t>(1 + kLandmarks + i)];
    }
    sets.push_back(s);
  }
  return sets;
}

void write_landmarks(const std::filesystem::path& path, const std::vector<LandmarkSet>& sets) {
  std::vector<std::vector<double>> rows;
  rows.reserve(sets.size());
  for (size_t f = 0; f < sets.size(); ++f) {
    std::vector<double> row;
    row.reserve(1 + 2 * kLandmarks);
    row.push_back(static_cast<double>(f));
    for (const auto& p : sets[f].points) row.push_back(p.x);
    for (const auto& p : sets[f].points) row.push_back(p.y);
    rows.push_back(std::move(row));
  }
  io::write_numeric_csv(path, landmark_header(), rows);
}

std::pair<LandmarkSet, NormalizationRecord> normalize(const LandmarkSet& raw, const LandmarkIndices& idx) {
  const Point nose = raw.points[static_cast<size_t>(idx.nose_tip)];
  const Point left = raw.points[static_cast<size_t>(idx.left_outer_eye)];
  const Point right = raw.points[static_cast<size_t>(idx.right_outer_eye)];

  const double ex = right.x - left.x;
  const double ey = right.y - left.y;
  const double d = std::hypot(ex, ey);
  if (d < 1e-12) {
    throw Error(ErrorKind::Numeric, "degenerate geometry: outer eye corners coincide");
  }
  // full-quadrant angle of the left->right eye-corner axis
  const double theta = std::atan2(ey, ex);
  const double c = std::cos(theta), s = std::sin(theta);

  LandmarkSet out;
  out.frame = Frame::Normalized;
  for (int i = 0; i < kLandmarks; ++i) {
    const double px = raw.points[static_cast<size_t>(i)].x - nose.x;
    const double py = raw.points[static_cast<size_t>(i)].y - nose.y;
    // rotate by -theta so the eye axis lands on +x, then scale to unit
    const double rx = c * px + s * py;
    const double ry = -s * px + c * py;
    out.points[static_cast<size_t>(i)] = {rx / d, ry / d};
  }
  return {out, NormalizationRecord{nose, theta, d}};
}

LandmarkSet denormalize(const LandmarkSet& normalized, const NormalizationRecord& rec) {
  const double c = std::cos(rec.theta), s = std::sin(rec.theta);
  LandmarkSet out;
  out.frame = Frame::RawPixels;
  for (int i = 0; i < kLandmarks; ++i) {
    const double px = normalized.points[static_cast<size_t>(i)].x * rec.d;
    const double py = normalized.points[static_cast<size_t>(i)].y * rec.d;
    const double rx = c * px - s * py;
    const double ry = s * px + c * py;
    out.points[static_cast<size_t>(i)] = {rx + rec.nose.x, ry + rec.nose.y};
  }
  return out;
}

double mae(const LandmarkSet& g, const LandmarkSet& r, const MetricConfig& cfg) {
  require_normalized(g, "mae");
  require_normalized(r, "mae");
  double sum = 0.0;
  for (int i = 0; i < kLandmarks; ++i) {
    sum += std::hypot(g.points[static_cast<size_t>(i)].x - r.points[static_cast<size_t>(i)].x,
                      g.points[static_cast<size_t>(i)].y - r.points[static_cast<size_t>(i)].y);
  }
  return sum / kLandmarks * cfg.d_real_mm / cfg.d_norm;
}

double nme(const LandmarkSet& g, const LandmarkSet& r, const MetricConfig& cfg) {
  require_normalized(g, "nme");
  require_normalized(r, "nme");
  double sum = 0.0;
  for (int i = 0; i < kLandmarks; ++i) {
    sum += std::hypot(g.points[static_cast<size_t>(i)].x - r.points[static_cast<size_t>(i)].x,
                      g.points[static_cast<size_t>(i)].y - r.points[static_cast<size_t>(i)].y);
  }
  return sum / kLandmarks / cfg.d_norm * 100.0;
}

ErrorBreakdown per_landmark_errors(const std::vector<LandmarkSet>& g, const std::vector<LandmarkSet>& r,
                                   const MetricConfig& cfg) {
  if (g.size() != r.size()) {
    throw Error(ErrorKind::Data, "per_landmark_errors: sequence lengths differ (" +
                                     std::to_string(g.size()) + " vs " + std::to_string(r.size()) + ")");
  }
  if (g.empty()) throw Error(ErrorKind::Data, "per_landmark_errors: empty sequences");
  ErrorBreakdown out;
  out.frame_mae_mm_sorted.reserve(g.size());
  for (size_t f = 0; f < g.size(); ++f) {
    require_normalized(g[f], "per_landmark_errors");
    require_normalized(r[f], "per_landmark_errors");
    double frame_sum = 0.0;
    for (int i = 0; i < kLandmarks; ++i) {
      const double d = std::hypot(g[f].points[static_cast<size_t>(i)].x - r[f].points[static_cast<size_t>(i)].x,
                                  g[f].points[static_cast<size_t>(i)].y - r[f].points[static_cast<size_t>(i)].y) *
                       cfg.d_real_mm / cfg.d_norm;
      out.per_landmark_mae_mm[static_cast<size_t>(i)] += d;
      frame_sum += d;
    }
    out.frame_mae_mm_sorted.push_back(frame_sum / kLandmarks);
  }
  for (auto& v : out.per_landmark_mae_mm) v /= static_cast<double>(g.size());
  std::sort(out.frame_mae_mm_sorted.begin(), out.frame_mae_mm_sorted.end());
  return out;
}

Tensor to_tensor(const LandmarkSet& set) {
  Tensor t({kLandmarks, 2});
  for (int i = 0; i < kLandmarks; ++i) {
    t.at(i, 0) = set.points[static_cast<size_t>(i)].x;
    t.at(i, 1) = set.points[static_cast<size_t>(i)].y;
  }
  return t;
}

LandmarkSet from_tensor(const Tensor& t, Frame frame) {
  if (t.size() != 2 * kLandmarks) {
    throw Error(ErrorKind::Data, "landmark tensor must hold " + std::to_string(2 * kLandmarks) +
                                     " values, got shape " + t.shape_str());
  }
  LandmarkSet s;
  s.frame = frame;
  for (int i = 0; i < kLandmarks; ++i) {
    s.points[static_cast<size_t>(i)] = {t[2 * i], t[2 * i + 1]};
  }
  return s;
}

}  // namespace ift::landmarks
