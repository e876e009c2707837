#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "sqog/chn.hpp"

using namespace sqog;

namespace {

std::vector<Vector> random_points(std::size_t n, std::size_t dim, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<Vector> pts(n, Vector(dim));
  for (auto& p : pts)
    for (auto& v : p) v = uniform(rng, lo, hi);
  return pts;
}

double segment_distance(const Vector& x, const Vector& a, const Vector& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((x[0] - a[0]) * dx + (x[1] - a[1]) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(x[0] - a[0] - t * dx, x[1] - a[1] - t * dy);
}

double cross(const Vector& o, const Vector& a, const Vector& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

bool in_triangle(const Vector& x, const Vector& a, const Vector& b, const Vector& c) {
  const double d1 = cross(a, b, x), d2 = cross(b, c, x), d3 = cross(c, a, x);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

// Planar hull distance by enumeration: inside iff inside some triangle of
// data points; otherwise the nearest hull edge is among all point pairs.
double planar_hull_distance(const Vector& x, const std::vector<Vector>& pts) {
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k)
        if (in_triangle(x, pts[i], pts[j], pts[k])) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    best = std::min(best, euclidean_distance(x, pts[i]));
    for (std::size_t j = i + 1; j < n; ++j) best = std::min(best, segment_distance(x, pts[i], pts[j]));
  }
  return best;
}

}  // namespace

TEST(ProjDataset, MatchesBruteForce) {
  Rng rng(7);
  const auto pts = random_points(500, 6, rng);
  const ChnQuery q(pts);
  for (int rep = 0; rep < 50; ++rep) {
    Vector x(6);
    for (auto& v : x) v = uniform(rng, -1.5, 1.5);
    std::size_t best = 0;
    for (std::size_t i = 1; i < pts.size(); ++i)
      if (squared_distance(x, pts[i]) < squared_distance(x, pts[best])) best = i;
    const Projection p = proj_dataset(x, q);
    EXPECT_EQ(p.index, best);
    EXPECT_EQ(p.point, pts[best]);
    EXPECT_DOUBLE_EQ(p.distance, std::sqrt(squared_distance(x, pts[best])));
  }
}

TEST(ProjDataset, TiesGoToLowestIndex) {
  const ChnQuery q(std::vector<Vector>{{1.0}, {-1.0}, {1.0}});
  const double x[] = {0.0};
  EXPECT_EQ(proj_dataset(x, q).index, 0u);
}

TEST(DistToHull, PlanarEnumerationOracle) {
  Rng rng(31);
  for (int rep = 0; rep < 40; ++rep) {
    const auto pts = random_points(7, 2, rng);
    const ChnQuery q(pts);
    for (int k = 0; k < 10; ++k) {
      const Vector x{uniform(rng, -2.0, 2.0), uniform(rng, -2.0, 2.0)};
      EXPECT_NEAR(dist_to_hull(x, q), planar_hull_distance(x, pts), 1e-6);
    }
  }
}

TEST(DistToHull, SimplexCornerInSixDimensions) {
  // Hull of the origin and the unit vectors is {x >= 0, sum x <= 1}; the
  // all-ones point projects onto the face sum x = 1 at (1/6, ..., 1/6).
  std::vector<Vector> pts{Vector(6, 0.0)};
  for (std::size_t i = 0; i < 6; ++i) {
    Vector e(6, 0.0);
    e[i] = 1.0;
    pts.push_back(e);
  }
  const ChnQuery q(pts);
  const Vector ones(6, 1.0);
  EXPECT_NEAR(dist_to_hull(ones, q), 5.0 / std::sqrt(6.0), 1e-6);
  const Vector inside(6, 0.1);
  EXPECT_EQ(dist_to_hull(inside, q), 0.0);
  const Vector below{-0.5, 0.2, 0.2, 0.0, 0.0, 0.0};
  EXPECT_NEAR(dist_to_hull(below, q), 0.5, 1e-6);
}

TEST(DistToHull, DataPointsAndMixturesAreInside) {
  Rng rng(2);
  const auto pts = random_points(100, 4, rng);
  const ChnQuery q(pts);
  EXPECT_EQ(dist_to_hull(pts[17], q), 0.0);
  Vector mix(4, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 4; ++k) mix[k] += 0.2 * pts[i * 7][k];
  EXPECT_EQ(dist_to_hull(mix, q), 0.0);
}

TEST(DistToHull, SinglePointAndErrors) {
  const ChnQuery q(std::vector<Vector>{{1.0, 2.0}});
  const double x[] = {4.0, 6.0};
  EXPECT_NEAR(dist_to_hull(x, q), 5.0, 1e-12);
  const double bad[] = {1.0};
  EXPECT_THROW(dist_to_hull(bad, q), InvalidArgument);
  EXPECT_THROW(ChnQuery(std::vector<Vector>{}), InvalidArgument);
  EXPECT_THROW(ChnQuery(std::vector<Vector>{{1.0}, {1.0, 2.0}}), InvalidArgument);
}

TEST(ChnContains, OneDimensionalInterval) {
  const ChnQuery q = ChnQuery(std::vector<Vector>{{0.0}, {1.0}}).with_radius(0.2, 1.0);
  for (double x : {-0.19, 0.0, 0.5, 1.0, 1.19}) {
    const double v[] = {x};
    EXPECT_TRUE(chn_contains(v, q)) << x;
  }
  for (double x : {-0.21, 1.21, 5.0}) {
    const double v[] = {x};
    EXPECT_FALSE(chn_contains(v, q)) << x;
  }
}

TEST(ChnContains, AgreesWithDistance) {
  Rng rng(44);
  const auto pts = random_points(60, 3, rng);
  const ChnQuery q = ChnQuery(pts).with_radius(0.3, 10.0);
  for (int rep = 0; rep < 200; ++rep) {
    const Vector x{uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2)};
    const double d = dist_to_hull(x, q);
    if (std::abs(d - 0.3) < 1e-5) continue;
    EXPECT_EQ(chn_contains(x, q), d <= 0.3) << d;
  }
}

TEST(RadiusDiameter, UnitSquareCorners) {
  const std::vector<Vector> corners{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  // Dense-grid oracle for the largest distance from a hull point to its
  // nearest corner.
  double oracle = 0.0;
  for (int i = 0; i <= 200; ++i)
    for (int j = 0; j <= 200; ++j) {
      const Vector x{i / 200.0, j / 200.0};
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& c : corners) nearest = std::min(nearest, euclidean_distance(x, c));
      oracle = std::max(oracle, nearest);
    }
  const ChnQuery q = make_chn_query(corners, 10000, 3);
  EXPECT_DOUBLE_EQ(q.hull_diameter_b(), std::sqrt(2.0));
  EXPECT_LE(q.radius_r(), oracle + 1e-12);
  EXPECT_GE(q.radius_r(), 0.95 * oracle);
}

TEST(RadiusDiameter, RadiusNeverExceedsDiameter) {
  Rng rng(8);
  const ChnQuery q = make_chn_query(random_points(30, 2, rng), 2000, 1);
  EXPECT_LE(q.radius_r(), q.hull_diameter_b());
  EXPECT_GE(q.radius_r(), 0.0);
  const ChnQuery single = make_chn_query(std::vector<Vector>{{3.0, 3.0}}, 10, 1);
  EXPECT_EQ(single.radius_r(), 0.0);
  EXPECT_EQ(single.hull_diameter_b(), 0.0);
  EXPECT_THROW(estimate_radius_and_diameter(single, 0, 1), InvalidArgument);
}

TEST(RadiusDiameter, DeterministicInSeed) {
  Rng rng(9);
  const auto pts = random_points(40, 3, rng);
  EXPECT_EQ(make_chn_query(pts, 500, 5).radius_r(), make_chn_query(pts, 500, 5).radius_r());
}

TEST(Bounds, SmoothnessHandValues) {
  EXPECT_DOUBLE_EQ(smoothness_bound(4.0, 0.25, 3.0), 3.0 * 2.0 * 0.5 + 0.5);
  EXPECT_EQ(smoothness_bound(4.0, 0.0, 3.0), 0.0);
  const double x[] = {3.0, 4.0}, y[] = {0.0, 4.0};
  // min norm 4, d 3
  EXPECT_DOUBLE_EQ(smoothness_bound(x, y, 1.0), 2.0 * std::sqrt(3.0) + 6.0);
  EXPECT_THROW(smoothness_bound(1.0, 1.0, 0.0), InvalidArgument);
}

TEST(Bounds, GapTermsIndependentFormula) {
  NtkBoundParams p;
  p.c = 2.0;
  p.c_r_delta = 0.5;
  p.c_t_delta = 1.5;
  p.dataset_size = 400;
  p.gamma = 0.9;
  p.r_max = 1.0;
  p.epsilon_kl = 0.02;
  p.a_min_norm = 1.0;
  p.a_max_norm = 3.0;
  const double sampling = (0.5 + 0.9 * 1.5 * 1.0 / 0.1) / 20.0;
  EXPECT_NEAR(sampling_error_term(p), sampling, 1e-12);
  const double zeta = 0.9 * 1.5 / 20.0;
  EXPECT_NEAR(p.zeta(), zeta, 1e-15);
  EXPECT_NEAR(ood_overestimation_term(p, 0.04, 9.0), zeta * 2.0 * (3.0 * 0.2 + 0.08), 1e-12);
  EXPECT_NEAR(bellman_gap_bound(p, 0.04, 9.0), sampling + zeta * 2.0 * (0.6 + 0.08), 1e-12);
  EXPECT_NEAR(p.distance_cap(), 5.0 * 0.1, 1e-12);
}

TEST(Bounds, OodTermVanishesAtZeroAndGrows) {
  NtkBoundParams p;
  p.c_t_delta = 1.0;
  p.dataset_size = 100;
  EXPECT_EQ(ood_overestimation_term(p, 0.0, 2.0), 0.0);
  EXPECT_EQ(bellman_gap_bound(p, 0.0, 2.0), sampling_error_term(p));
  double prev = 0.0;
  for (double d = 0.01; d < 2.0; d += 0.01) {
    const double v = bellman_gap_bound(p, d, 2.0);
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_THROW(ood_overestimation_term(p, -0.1, 1.0), InvalidArgument);
  p.gamma = 1.0;
  EXPECT_THROW(sampling_error_term(p), InvalidArgument);
}

TEST(DistToHull, NeverExceedsNearestPointDistance) {
  Rng rng(12);
  const auto pts = random_points(40, 3, rng);
  const ChnQuery q(pts);
  for (int rep = 0; rep < 100; ++rep) {
    const Vector x{uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3)};
    EXPECT_LE(dist_to_hull(x, q), proj_dataset(x, q).distance + 1e-12);
  }
}

TEST(ChnContains, MonotoneInRadius) {
  Rng rng(13);
  const auto pts = random_points(30, 2, rng);
  for (int rep = 0; rep < 50; ++rep) {
    const Vector x{uniform(rng, -2, 2), uniform(rng, -2, 2)};
    bool seen = false;
    for (double r = 0.0; r <= 1.5; r += 0.05) {
      const bool in = chn_contains(x, ChnQuery(pts).with_radius(r, 10.0));
      EXPECT_TRUE(!seen || in) << r;
      seen = seen || in;
    }
  }
}

TEST(RadiusDiameter, SegmentCases) {
  const ChnQuery q = make_chn_query(std::vector<Vector>{{0.0, 0.0}, {1.0, 0.0}}, 1000, 2);
  EXPECT_EQ(q.hull_diameter_b(), 1.0);
  EXPECT_LE(q.radius_r(), 0.5);
}

TEST(Bounds, WorkedExamples) {
  const double x[] = {4.0, 0.0}, y[] = {0.0, 9.0};
  // |x| = 4, |x'| = 9, but d = sqrt(97); use the scalar form for d = 1.
  EXPECT_DOUBLE_EQ(smoothness_bound(4.0, 1.0, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(smoothness_bound(x, y, 1.0), 2.0 * std::sqrt(std::sqrt(97.0)) + 2.0 * std::sqrt(97.0));
  NtkBoundParams p;
  p.dataset_size = 50;
  for (double d : {0.0, 0.3, 2.0}) EXPECT_EQ(bellman_gap_bound(p, d, 3.0), 0.0);
}

TEST(Bounds, RandomDrawsMatchSecondImplementation) {
  Rng rng(14);
  for (int rep = 0; rep < 100; ++rep) {
    NtkBoundParams p;
    p.c = uniform(rng, 0.1, 3.0);
    p.c_r_delta = uniform(rng, 0.0, 2.0);
    p.c_t_delta = uniform(rng, 0.0, 2.0);
    p.dataset_size = 1 + uniform_index(rng, 10000);
    p.gamma = uniform(rng, 0.0, 0.99);
    p.r_max = uniform(rng, 0.0, 5.0);
    const double d = uniform(rng, 0.0, 2.0), m = uniform(rng, 0.0, 4.0);
    const double root_n = std::sqrt(static_cast<double>(p.dataset_size));
    const double c_rt = p.c_r_delta + p.gamma * p.c_t_delta * p.r_max / (1.0 - p.gamma);
    const double zeta = p.gamma * p.c_t_delta / root_n;
    const double expect = c_rt / root_n + zeta * p.c * (std::sqrt(m * d) + 2.0 * d);
    EXPECT_NEAR(bellman_gap_bound(p, d, m), expect, 1e-12 * std::max(1.0, expect));
  }
}
