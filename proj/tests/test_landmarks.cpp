#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ift/error.hpp"
#include "ift/landmarks.hpp"
#include "ift/rng.hpp"

using namespace ift::landmarks;
using ift::Rng;

namespace {

const LandmarkIndices kIdx{};

LandmarkSet random_raw_set(Rng& rng, double spread = 100.0) {
  LandmarkSet s;
  s.frame = Frame::RawPixels;
  for (auto& p : s.points) p = {rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
  // keep the eye corners well separated
  s.points[static_cast<size_t>(kIdx.left_outer_eye)] = {rng.uniform(-spread, -spread / 2), rng.uniform(-10, 10)};
  s.points[static_cast<size_t>(kIdx.right_outer_eye)] = {rng.uniform(spread / 2, spread), rng.uniform(-10, 10)};
  return s;
}

LandmarkSet similarity_transform(const LandmarkSet& s, double angle, double scale, double tx, double ty) {
  LandmarkSet out = s;
  const double c = std::cos(angle), si = std::sin(angle);
  for (auto& p : out.points) {
    const double x = scale * (c * p.x - si * p.y) + tx;
    const double y = scale * (si * p.x + c * p.y) + ty;
    p = {x, y};
  }
  return out;
}

double max_point_diff(const LandmarkSet& a, const LandmarkSet& b) {
  double m = 0.0;
  for (int i = 0; i < kLandmarks; ++i) {
    m = std::max(m, std::abs(a.points[static_cast<size_t>(i)].x - b.points[static_cast<size_t>(i)].x));
    m = std::max(m, std::abs(a.points[static_cast<size_t>(i)].y - b.points[static_cast<size_t>(i)].y));
  }
  return m;
}

void check_canonical(const LandmarkSet& n) {
  const auto nose = n.points[static_cast<size_t>(kIdx.nose_tip)];
  const auto l = n.points[static_cast<size_t>(kIdx.left_outer_eye)];
  const auto r = n.points[static_cast<size_t>(kIdx.right_outer_eye)];
  CHECK(std::abs(nose.x) < 1e-9);
  CHECK(std::abs(nose.y) < 1e-9);
  CHECK(std::abs(std::hypot(r.x - l.x, r.y - l.y) - 1.0) < 1e-9);
  CHECK(std::abs(r.y - l.y) < 1e-9);  // eye axis parallel to +x
  CHECK(r.x > l.x);
}

}  // namespace

TEST_CASE("normalize axis-aligned case scales by half") {
  LandmarkSet s;
  s.points[static_cast<size_t>(kIdx.nose_tip)] = {0, 0};
  s.points[static_cast<size_t>(kIdx.left_outer_eye)] = {-1, 0};
  s.points[static_cast<size_t>(kIdx.right_outer_eye)] = {1, 0};
  auto [n, rec] = normalize(s);
  CHECK(n.frame == Frame::Normalized);
  CHECK(n.points[static_cast<size_t>(kIdx.left_outer_eye)].x == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(n.points[static_cast<size_t>(kIdx.left_outer_eye)].y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(n.points[static_cast<size_t>(kIdx.right_outer_eye)].x == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(n.points[static_cast<size_t>(kIdx.nose_tip)].x == 0.0);
  CHECK(rec.d == doctest::Approx(2.0));
  CHECK(rec.theta == doctest::Approx(0.0));
}

TEST_CASE("normalize 45-degree case lands eyes on the x axis") {
  LandmarkSet s;
  s.points[static_cast<size_t>(kIdx.nose_tip)] = {1, 1};
  s.points[static_cast<size_t>(kIdx.left_outer_eye)] = {0, 0};
  s.points[static_cast<size_t>(kIdx.right_outer_eye)] = {2, 2};
  auto [n, rec] = normalize(s);
  CHECK(n.points[static_cast<size_t>(kIdx.nose_tip)].x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(n.points[static_cast<size_t>(kIdx.nose_tip)].y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(n.points[static_cast<size_t>(kIdx.left_outer_eye)].x == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(std::abs(n.points[static_cast<size_t>(kIdx.left_outer_eye)].y) < 1e-12);
  CHECK(n.points[static_cast<size_t>(kIdx.right_outer_eye)].x == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rec.theta == doctest::Approx(M_PI / 4.0));
}

TEST_CASE("normalization is invariant under similarity transforms") {
  Rng rng(100);
  for (int trial = 0; trial < 50; ++trial) {
    LandmarkSet s = random_raw_set(rng);
    auto [n0, rec0] = normalize(s);
    const double angle = rng.uniform(-M_PI, M_PI);
    const double scale = rng.uniform(0.1, 10.0);
    LandmarkSet st = similarity_transform(s, angle, scale, rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3));
    auto [n1, rec1] = normalize(st);
    CHECK(max_point_diff(n0, n1) < 1e-9);
    check_canonical(n0);
    check_canonical(n1);
  }
}

TEST_CASE("normalize rejects coincident eye corners") {
  LandmarkSet s;
  for (auto& p : s.points) p = {1.0, 1.0};
  CHECK_THROWS_WITH_AS(normalize(s), doctest::Contains("degenerate"), ift::Error);
}

TEST_CASE("denormalize with the identity record is the identity") {
  Rng rng(101);
  LandmarkSet s = random_raw_set(rng);
  s.frame = Frame::Normalized;
  NormalizationRecord identity{{0, 0}, 0.0, 1.0};
  LandmarkSet back = denormalize(s, identity);
  CHECK(max_point_diff(s, back) == 0.0);
}

TEST_CASE("denormalize inverts normalize within 1e-9") {
  Rng rng(102);
  for (int trial = 0; trial < 20; ++trial) {
    LandmarkSet s = random_raw_set(rng);
    auto [n, rec] = normalize(s);
    LandmarkSet back = denormalize(n, rec);
    CHECK(max_point_diff(s, back) < 1e-9);
    // the canonical eye corners map back onto the original pixels
    const auto l = back.points[static_cast<size_t>(kIdx.left_outer_eye)];
    const auto l0 = s.points[static_cast<size_t>(kIdx.left_outer_eye)];
    CHECK(l.x == doctest::Approx(l0.x).epsilon(1e-9));
    CHECK(l.y == doctest::Approx(l0.y).epsilon(1e-9));
  }
}

TEST_CASE("mae of identical sets is zero and offsets scale to millimeters") {
  Rng rng(103);
  LandmarkSet g = random_raw_set(rng);
  auto [gn, rec] = normalize(g);
  MetricConfig cfg;
  cfg.d_real_mm = 100.0;
  CHECK(mae(gn, gn, cfg) == 0.0);

  LandmarkSet r = gn;
  for (auto& p : r.points) p.x += 0.01;
  CHECK(mae(gn, r, cfg) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mae matches an independent distance-sum oracle") {
  Rng rng(104);
  auto make_norm = [&](double spread) {
    LandmarkSet s;
    s.frame = Frame::Normalized;
    for (auto& p : s.points) p = {rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
    return s;
  };
  MetricConfig cfg;
  cfg.d_real_mm = 87.5;
  for (int trial = 0; trial < 10; ++trial) {
    LandmarkSet g = make_norm(0.6), r = make_norm(0.6);
    double sum = 0.0;
    for (int i = 0; i < kLandmarks; ++i) {
      const double dx = g.points[static_cast<size_t>(i)].x - r.points[static_cast<size_t>(i)].x;
      const double dy = g.points[static_cast<size_t>(i)].y - r.points[static_cast<size_t>(i)].y;
      sum += std::sqrt(dx * dx + dy * dy);
    }
    const double expected = sum / 51.0 * 87.5;
    CHECK(std::abs(mae(g, r, cfg) - expected) < 1e-12);
    // symmetry
    CHECK(mae(g, r, cfg) == mae(r, g, cfg));
  }
}

TEST_CASE("mae rejects raw-frame inputs") {
  Rng rng(105);
  LandmarkSet g = random_raw_set(rng);
  MetricConfig cfg;
  CHECK_THROWS_AS(mae(g, g, cfg), ift::Error);
}

TEST_CASE("nme of a uniform 0.034 offset is 3.4 percent") {
  LandmarkSet g;
  g.frame = Frame::Normalized;
  LandmarkSet r = g;
  for (auto& p : r.points) p.x += 0.034;
  CHECK(nme(g, r) == doctest::Approx(3.4).epsilon(1e-12));
  CHECK(nme(g, g) == 0.0);
}

TEST_CASE("nme equals 100 * mae / d_real") {
  Rng rng(106);
  LandmarkSet g, r;
  g.frame = r.frame = Frame::Normalized;
  for (auto& p : g.points) p = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  for (auto& p : r.points) p = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  MetricConfig cfg;
  cfg.d_real_mm = 93.0;
  CHECK(nme(g, r) == doctest::Approx(mae(g, r, cfg) * 100.0 / cfg.d_real_mm).epsilon(1e-12));
}

TEST_CASE("per-landmark errors aggregate to the overall mae") {
  Rng rng(107);
  std::vector<LandmarkSet> gs, rs;
  MetricConfig cfg;
  for (int f = 0; f < 7; ++f) {
    LandmarkSet g, r;
    g.frame = r.frame = Frame::Normalized;
    for (auto& p : g.points) p = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    for (auto& p : r.points) p = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    gs.push_back(g);
    rs.push_back(r);
  }
  auto breakdown = per_landmark_errors(gs, rs, cfg);

  double overall = 0.0;
  for (size_t f = 0; f < gs.size(); ++f) overall += mae(gs[f], rs[f], cfg);
  overall /= static_cast<double>(gs.size());

  double from_landmarks = 0.0;
  for (double v : breakdown.per_landmark_mae_mm) from_landmarks += v;
  from_landmarks /= kLandmarks;
  CHECK(std::abs(from_landmarks - overall) < 1e-12);

  double from_frames = 0.0;
  for (double v : breakdown.frame_mae_mm_sorted) from_frames += v;
  from_frames /= static_cast<double>(breakdown.frame_mae_mm_sorted.size());
  CHECK(std::abs(from_frames - overall) < 1e-12);

  CHECK(std::is_sorted(breakdown.frame_mae_mm_sorted.begin(), breakdown.frame_mae_mm_sorted.end()));

  SUBCASE("identical sequences give all zeros") {
    auto zero = per_landmark_errors(gs, gs, cfg);
    for (double v : zero.per_landmark_mae_mm) CHECK(v == 0.0);
  }
  SUBCASE("length mismatch is an error") {
    rs.pop_back();
    CHECK_THROWS_AS(per_landmark_errors(gs, rs, cfg), ift::Error);
  }
  SUBCASE("single-frame errors are pointwise distances") {
    std::vector<LandmarkSet> g1{gs[0]}, r1{rs[0]};
    auto b1 = per_landmark_errors(g1, r1, cfg);
    for (int i = 0; i < kLandmarks; ++i) {
      const double d = std::hypot(gs[0].points[static_cast<size_t>(i)].x - rs[0].points[static_cast<size_t>(i)].x,
                                  gs[0].points[static_cast<size_t>(i)].y - rs[0].points[static_cast<size_t>(i)].y);
      CHECK(b1.per_landmark_mae_mm[static_cast<size_t>(i)] == doctest::Approx(d * cfg.d_real_mm).epsilon(1e-12));
    }
  }
}

TEST_CASE("landmark csv round trip and validation") {
  Rng rng(108);
  std::vector<LandmarkSet> sets;
  for (int f = 0; f < 3; ++f) sets.push_back(random_raw_set(rng));
  const auto path = std::filesystem::temp_directory_path() / "ift_landmarks_roundtrip.csv";
  write_landmarks(path, sets);
  auto back = ingest_landmarks(path);
  REQUIRE(back.size() == 3);
  for (size_t f = 0; f < 3; ++f) {
    CHECK(back[f].frame == Frame::RawPixels);
    CHECK(max_point_diff(back[f], sets[f]) == 0.0);
  }
  std::filesystem::remove(path);

  SUBCASE("wrong column count is rejected naming the expectation") {
    const auto bad = std::filesystem::temp_directory_path() / "ift_landmarks_bad.csv";
    std::ofstream os(bad);
    os << "frame";
    for (int i = 0; i < 101; ++i) os << ",c" << i;
    os << "\n";
    os.close();
    CHECK_THROWS_WITH_AS(ingest_landmarks(bad), doctest::Contains("102"), ift::Error);
    std::filesystem::remove(bad);
  }
}

TEST_CASE("landmark tensor conversion round trips") {
  Rng rng(109);
  LandmarkSet s = random_raw_set(rng);
  s.frame = Frame::Normalized;
  auto t = to_tensor(s);
  CHECK(t.shape == std::vector<int64_t>({51, 2}));
  auto back = from_tensor(t, Frame::Normalized);
  CHECK(max_point_diff(s, back) == 0.0);
}
