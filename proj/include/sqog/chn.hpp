#pragma once

// Convex hull + neighborhood (CHN) geometry over dataset (s, a) points:
// nearest-point projection, distance to the convex hull, membership, the
// radius/diameter estimates, and the smoothness and Bellman-gap bounds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sqog/dataset.hpp"
#include "sqog/error.hpp"
#include "sqog/mdp.hpp"
#include "sqog/rng.hpp"

namespace sqog {

class ChnQuery {
 public:
  ChnQuery(std::vector<Vector> points, double radius_r, double hull_diameter_b)
      : points_(std::move(points)), radius_r_(radius_r), diameter_b_(hull_diameter_b) {
    if (points_.empty()) throw InvalidArgument("ChnQuery: point cloud is empty");
    dim_ = points_.front().size();
    for (const auto& p : points_)
      if (p.size() != dim_) throw InvalidArgument("ChnQuery: points have inconsistent dimensions");
    if (!(radius_r_ >= 0.0)) throw InvalidArgument("ChnQuery: radius must be >= 0");
    if (radius_r_ > diameter_b_) throw InvalidArgument("ChnQuery: radius exceeds the hull diameter");
  }

  /// Radius and diameter left at zero; see estimate_radius_and_diameter.
  explicit ChnQuery(std::vector<Vector> points) : ChnQuery(std::move(points), 0.0, 0.0) {}

  const std::vector<Vector>& points() const noexcept { return points_; }
  std::size_t dim() const noexcept { return dim_; }
  double radius_r() const noexcept { return radius_r_; }
  double hull_diameter_b() const noexcept { return diameter_b_; }

  ChnQuery with_radius(double r, double b) const { return ChnQuery(points_, r, b); }
  ChnQuery with_radius(double r) const { return ChnQuery(points_, r, std::max(r, diameter_b_)); }

 private:
  std::vector<Vector> points_;
  std::size_t dim_ = 0;
  double radius_r_;
  double diameter_b_;
};

/// Concatenated (s, a) points of a dataset.
inline std::vector<Vector> state_action_points(const OfflineDataset& ds) {
  std::vector<Vector> pts;
  pts.reserve(ds.size());
  for (const auto& t : ds.transitions) {
    Vector x = t.state;
    x.insert(x.end(), t.action.begin(), t.action.end());
    pts.push_back(std::move(x));
  }
  return pts;
}

struct Projection {
  std::size_t index = 0;
  Vector point;
  double distance = 0.0;
};

/// Nearest dataset point; ties go to the lowest index.
inline Projection proj_dataset(std::span<const double> x, const ChnQuery& query) {
  if (x.size() != query.dim()) throw InvalidArgument("proj_dataset: dimension mismatch");
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  const auto& pts = query.points();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d2 = squared_distance(x, pts[i]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return {best, pts[best], std::sqrt(best_d2)};
}

struct HullDistanceOptions {
  double tol = 1e-7;
  std::size_t max_iter = 5000;
};

class HullConvergenceError : public ConvergenceError {
 public:
  HullConvergenceError(double best, double gap)
      : ConvergenceError("dist_to_hull: no convergence (best distance " + std::to_string(best) + ", duality gap " +
                             std::to_string(gap) + ")",
                         gap),
        best_(best),
        gap_(gap) {}
  double best_distance() const noexcept { return best_; }
  double duality_gap() const noexcept { return gap_; }

 private:
  double best_;
  double gap_;
};

/// min over the simplex of |x - sum_i lambda_i p_i| by Frank-Wolfe with away
/// steps and exact line search, warm-started at the nearest dataset point.
/// Stops once the distance is provably within tol of the optimum; returns 0
/// when the distance itself drops below tol.
namespace detail {

// With decide_at >= 0 the search stops as soon as the distance is known to
// lie on one side of decide_at: it returns an upper bound <= decide_at or a
// lower bound > decide_at.
inline double hull_distance(std::span<const double> x, const ChnQuery& query, const HullDistanceOptions& opt,
                            double decide_at) {
  if (!(opt.tol > 0.0)) throw InvalidArgument("dist_to_hull: tol must be > 0");
  if (x.size() != query.dim()) throw InvalidArgument("dist_to_hull: dimension mismatch");
  const auto& pts = query.points();
  const std::size_t n = pts.size();
  const std::size_t dim = query.dim();

  const Projection start = proj_dataset(x, query);
  std::vector<double> lambda(n, 0.0);
  lambda[start.index] = 1.0;
  std::vector<std::size_t> active{start.index};
  Vector y = start.point;
  Vector resid(dim);
  std::vector<double> grad(n);

  double gap = std::numeric_limits<double>::infinity();
  double dist = start.distance;
  for (std::size_t iter = 0; iter < opt.max_iter; ++iter) {
    for (std::size_t k = 0; k < dim; ++k) resid[k] = y[k] - x[k];
    double dist2 = 0.0;
    double resid_y = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      dist2 += resid[k] * resid[k];
      resid_y += resid[k] * y[k];
    }
    dist = std::sqrt(dist2);
    if (dist < opt.tol) return 0.0;

    std::size_t fw = 0;
    double fw_val = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      double g = 0.0;
      for (std::size_t k = 0; k < dim; ++k) g += pts[i][k] * resid[k];
      grad[i] = g;
      if (g < fw_val) {
        fw_val = g;
        fw = i;
      }
    }
    std::size_t away = active.front();
    for (std::size_t i : active)
      if (grad[i] > grad[away]) away = i;

    // Frank-Wolfe gap bounds f - f* for f = |y - x|^2 / 2, so
    // dist - dist* <= 2 gap / dist.
    gap = resid_y - fw_val;
    if (2.0 * gap <= opt.tol * dist) return dist;
    if (decide_at >= 0.0) {
      if (dist <= decide_at) return dist;
      const double lower2 = dist2 - 2.0 * gap;
      if (lower2 > decide_at * decide_at) return std::sqrt(lower2);
    }
    const double away_gap = grad[away] - resid_y;

    Vector dir(dim);
    double step_max;
    bool fw_step = gap >= away_gap || lambda[away] >= 1.0;
    if (fw_step) {
      for (std::size_t k = 0; k < dim; ++k) dir[k] = pts[fw][k] - y[k];
      step_max = 1.0;
    } else {
      for (std::size_t k = 0; k < dim; ++k) dir[k] = y[k] - pts[away][k];
      step_max = lambda[away] / (1.0 - lambda[away]);
    }
    double dir2 = 0.0;
    double slope = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      dir2 += dir[k] * dir[k];
      slope += resid[k] * dir[k];
    }
    if (dir2 <= 0.0) return dist;
    const double step = std::clamp(-slope / dir2, 0.0, step_max);

    if (fw_step) {
      for (std::size_t i : active) lambda[i] *= (1.0 - step);
      if (lambda[fw] == 0.0) active.push_back(fw);
      lambda[fw] += step;
      if (step == 1.0) {
        for (std::size_t i : active) lambda[i] = 0.0;
        lambda[fw] = 1.0;
        active.assign(1, fw);
      }
    } else {
      for (std::size_t i : active) lambda[i] *= (1.0 + step);
      lambda[away] -= step;
      if (step == step_max) lambda[away] = 0.0;
    }
    std::erase_if(active, [&](std::size_t i) { return lambda[i] <= 0.0; });
    for (auto& l : lambda)
      if (l < 0.0) l = 0.0;

    // Rebuild y from lambda to keep it on the hull despite rounding.
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t i : active)
      for (std::size_t k = 0; k < dim; ++k) y[k] += lambda[i] * pts[i][k];
  }
  throw HullConvergenceError(dist, gap);
}

}  // namespace detail

inline double dist_to_hull(std::span<const double> x, const ChnQuery& query, HullDistanceOptions opt = {}) {
  return detail::hull_distance(x, query, opt, -1.0);
}

/// x in CHN iff dist_to_hull(x) <= r (+ tol).
inline bool chn_contains(std::span<const double> x, const ChnQuery& query, HullDistanceOptions opt = {}) {
  const double limit = query.radius_r() + opt.tol;
  return detail::hull_distance(x, query, opt, limit) <= limit;
}

struct RadiusDiameter {
  double radius_r = 0.0;
  double diameter_b = 0.0;
};

/// B: max pairwise distance among dataset points (the hull diameter is
/// attained at vertices). r: max of |x - Proj_D(x)| over sampled convex
/// combinations x, each mixing 1..dim+1 random points with Dirichlet(1)
/// weights; clamped to B.
inline RadiusDiameter estimate_radius_and_diameter(const ChnQuery& query, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw InvalidArgument("estimate_radius_and_diameter: n_samples must be >= 1");
  const auto& pts = query.points();
  const std::size_t n = pts.size();
  const std::size_t dim = query.dim();

  double b2 = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) b2 = std::max(b2, squared_distance(pts[i], pts[j]));
  const double b = std::sqrt(b2);

  Rng rng(seed);
  double r = 0.0;
  const std::size_t max_k = std::min(n, dim + 1);
  Vector x(dim);
  std::vector<double> w;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t k = 1 + uniform_index(rng, max_k);
    w.assign(k, 0.0);
    double total = 0.0;
    for (auto& wi : w) {
      double u = uniform(rng);
      while (u <= 0.0) u = uniform(rng);
      wi = -std::log(u);
      total += wi;
    }
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const auto& p = pts[uniform_index(rng, n)];
      for (std::size_t c = 0; c < dim; ++c) x[c] += (w[j] / total) * p[c];
    }
    r = std::max(r, proj_dataset(x, query).distance);
  }
  return {std::min(r, b), b};
}

/// Query with r and B filled in by estimate_radius_and_diameter.
inline ChnQuery make_chn_query(std::vector<Vector> points, std::size_t n_samples = 10000, std::uint64_t seed = 0) {
  ChnQuery bare(std::move(points));
  const auto rb = estimate_radius_and_diameter(bare, n_samples, seed);
  return bare.with_radius(rb.radius_r, rb.diameter_b);
}

// ---------------------------------------------------------------------------
// Bound evaluators
// ---------------------------------------------------------------------------

/// |Q(x) - Q(x')| <= C sqrt(min(|x|, |x'|)) sqrt(d) + 2d, d = |x - x'|.
inline double smoothness_bound(double min_norm, double d, double c) {
  if (!(c > 0.0)) throw InvalidArgument("smoothness_bound: C must be > 0");
  if (d < 0.0 || min_norm < 0.0) throw InvalidArgument("smoothness_bound: norms must be >= 0");
  return c * std::sqrt(min_norm) * std::sqrt(d) + 2.0 * d;
}

inline double smoothness_bound(std::span<const double> x, std::span<const double> x_prime, double c) {
  auto norm = [](std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
  };
  return smoothness_bound(std::min(norm(x), norm(x_prime)), euclidean_distance(x, x_prime), c);
}

struct NtkBoundParams {
  double c = 1.0;
  double c_r_delta = 0.0;
  double c_t_delta = 0.0;
  std::size_t dataset_size = 1;
  double gamma = 0.99;
  double r_max = 1.0;
  double epsilon_kl = 0.0;
  double a_min_norm = 0.0;
  double a_max_norm = 0.0;

  void validate() const {
    for (double v : {c, c_r_delta, c_t_delta, gamma, r_max, epsilon_kl, a_min_norm, a_max_norm})
      if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("NtkBoundParams: constants must be finite and >= 0");
    if (!(c > 0.0)) throw InvalidArgument("NtkBoundParams: C must be > 0");
    if (!(gamma < 1.0)) throw InvalidArgument("NtkBoundParams: gamma must be < 1");
    if (dataset_size == 0) throw InvalidArgument("NtkBoundParams: dataset_size must be >= 1");
  }

  /// C_{r,T,delta} = C_{r,delta} + gamma C_{T,delta} R_max / (1 - gamma).
  double sampling_constant() const { return c_r_delta + gamma * c_t_delta * r_max / (1.0 - gamma); }
  /// zeta = gamma C_{T,delta} / sqrt(|D|).
  double zeta() const { return gamma * c_t_delta / std::sqrt(static_cast<double>(dataset_size)); }
  /// Largest admissible policy-to-data distance under the KL constraint:
  /// ((|a_min|^2 + |a_max|^2) / 2) sqrt(eps / 2).
  double distance_cap() const {
    return 0.5 * (a_min_norm * a_min_norm + a_max_norm * a_max_norm) * std::sqrt(epsilon_kl / 2.0);
  }
};

inline double sampling_error_term(const NtkBoundParams& p) {
  p.validate();
  return p.sampling_constant() / std::sqrt(static_cast<double>(p.dataset_size));
}

/// zeta C (sqrt(min_norm) sqrt(d) + 2d); zero at d = 0.
inline double ood_overestimation_term(const NtkBoundParams& p, double d, double min_norm) {
  p.validate();
  if (d < 0.0 || min_norm < 0.0) throw InvalidArgument("bellman_gap_bound: d and min_norm must be >= 0");
  return p.zeta() * p.c * (std::sqrt(min_norm) * std::sqrt(d) + 2.0 * d);
}

/// Sampling term plus OOD overestimation term.
inline double bellman_gap_bound(const NtkBoundParams& p, double d, double min_norm) {
  return sampling_error_term(p) + ood_overestimation_term(p, d, min_norm);
}

}  // namespace sqog
