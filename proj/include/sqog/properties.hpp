#pragma once

// Property suite for the tabular smooth Bellman operator: contraction,
// fixed-point uniqueness, the in-sample gap under shrinking neighbor radius,
// and monotone error decrease of the OOD update.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "sqog/error.hpp"
#include "sqog/mdp.hpp"
#include "sqog/rng.hpp"
#include "sqog/sbo.hpp"

namespace sqog {

/// A tabular MDP, a policy supported on the operator domain, and the spec.
struct SboInstance {
  TabularMdp mdp;
  PolicyTable policy;
  SboSpec spec;
};

/// Random in-sample mask (at least one action per state), CHN covering each
/// remaining action with probability chn_prob, random policy restricted to
/// the domain. Actions sit at coordinates 0, 1, 2, ...
inline SboInstance random_sbo_instance(const TabularMdp& mdp, Rng& rng, double in_sample_prob = 0.5,
                                       double chn_prob = 0.7) {
  const std::size_t ns = mdp.n_states(), na = mdp.n_actions();
  MaskTable in_sample(ns, na), chn(ns, na);
  for (std::size_t s = 0; s < ns; ++s) {
    bool any = false;
    for (std::size_t a = 0; a < na; ++a) {
      in_sample(s, a) = uniform(rng) < in_sample_prob;
      any = any || in_sample(s, a);
    }
    if (!any) in_sample(s, uniform_index(rng, na)) = 1;
    for (std::size_t a = 0; a < na; ++a) chn(s, a) = in_sample(s, a) || uniform(rng) < chn_prob;
  }
  SboSpec spec = make_sbo_spec(std::move(in_sample), std::move(chn), index_action_coords(na));
  PolicyTable policy(ns, na);
  for (std::size_t s = 0; s < ns; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < na; ++a) {
      policy(s, a) = spec.in_domain(s, a) ? uniform(rng, 0.05, 1.0) : 0.0;
      total += policy(s, a);
    }
    for (std::size_t a = 0; a < na; ++a) policy(s, a) /= total;
  }
  return {mdp, std::move(policy), std::move(spec)};
}

inline QTable random_q(std::size_t ns, std::size_t na, Rng& rng, double scale = 10.0) {
  QTable q(ns, na);
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t a = 0; a < na; ++a) q(s, a) = uniform(rng, -scale, scale);
  return q;
}

// ---------------------------------------------------------------------------
// Individual checks
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ContractionSweep {
  double max_ratio = 0.0;
  std::size_t pairs = 0;
  std::size_t violations = 0;
};

inline ContractionSweep contraction_sweep(const SboInstance& inst, std::size_t pairs, Rng& rng,
                                          double slack = 1e-9) {
  ContractionSweep out;
  const double bound = inst.mdp.gamma() + slack;
  while (out.pairs < pairs) {
    const QTable q1 = random_q(inst.mdp.n_states(), inst.mdp.n_actions(), rng);
    const QTable q2 = random_q(inst.mdp.n_states(), inst.mdp.n_actions(), rng);
    const double r = contraction_ratio(q1, q2, inst.spec, inst.mdp, inst.policy);
    out.max_ratio = std::max(out.max_ratio, r);
    out.violations += r > bound;
    ++out.pairs;
  }
  return out;
}

struct FixedPointSweep {
  std::size_t runs = 0;
  std::size_t max_iterations = 0;
  double max_disagreement = 0.0;
  std::size_t failures = 0;
};

inline FixedPointSweep fixed_point_sweep(const SboInstance& inst, std::size_t inits, Rng& rng, double tol = 1e-8,
                                         std::size_t max_iter = 500) {
  FixedPointSweep out;
  std::vector<QTable> points;
  for (std::size_t i = 0; i < inits; ++i) {
    ++out.runs;
    try {
      const auto res = fixed_point(random_q(inst.mdp.n_states(), inst.mdp.n_actions(), rng, 100.0), inst.spec,
                                   inst.mdp, inst.policy, tol, max_iter);
      out.max_iterations = std::max(out.max_iterations, res.iterations);
      points.push_back(res.q);
    } catch (const ConvergenceError&) {
      ++out.failures;
    }
  }
  for (std::size_t i = 1; i < points.size(); ++i)
    out.max_disagreement = std::max(out.max_disagreement, domain_sup_norm(points[0], points[i], inst.spec));
  return out;
}

// In-sample gap. Actions live on a uniform grid over [-1, 1]; the in-sample
// grids are nested (every k-th action), so shrinking the neighbor radius
// never moves an OOD action farther from its neighbor.

struct GapPoint {
  double delta = 0.0;
  double gap = 0.0;
  double bound = 0.0;  // gamma * neighbor spread
};

struct GapSweep {
  std::vector<GapPoint> points;
  bool monotone = true;
  bool bounded = true;
};

inline GapSweep insample_gap_sweep(double gamma, std::uint64_t seed) {
  constexpr std::size_t kStates = 5;
  constexpr std::size_t kActions = 401;  // spacing 0.005
  constexpr std::size_t kPolicyAction = 263;  // a = 0.315, off every in-sample grid
  Rng rng(seed);
  const TabularMdp mdp = random_tabular_mdp(kStates, kActions, gamma, rng);
  std::vector<Vector> coords(kActions);
  for (std::size_t a = 0; a < kActions; ++a) coords[a] = {-1.0 + 0.005 * static_cast<double>(a)};

  QTable q(kStates, kActions);
  for (std::size_t s = 0; s < kStates; ++s)
    for (std::size_t a = 0; a < kActions; ++a) q(s, a) = std::exp(coords[a][0]) + 0.1 * static_cast<double>(s);
  PolicyTable policy(kStates, kActions);
  for (std::size_t s = 0; s < kStates; ++s) policy(s, kPolicyAction) = 1.0;

  GapSweep out;
  const std::pair<double, std::size_t> levels[] = {{0.2, 80}, {0.1, 40}, {0.05, 20}, {0.01, 4}};
  for (const auto& [delta, stride] : levels) {
    MaskTable in_sample(kStates, kActions), chn(kStates, kActions);
    for (std::size_t s = 0; s < kStates; ++s)
      for (std::size_t a = 0; a < kActions; ++a) {
        in_sample(s, a) = a % stride == 0;
        chn(s, a) = 1;
      }
    SboSpec spec = make_sbo_spec(std::move(in_sample), std::move(chn), coords);
    if (spec.delta_neighbor > delta + 1e-12)
      throw InvalidArgument("insample_gap_sweep: neighbor radius exceeds " + std::to_string(delta));
    spec.delta_neighbor = delta;
    spec.validate();
    const double gap = insample_effect_gap(q, spec, mdp, policy);
    const double bound = gamma * neighbor_q_spread(q, spec, policy);
    if (!out.points.empty()) {
      const double prev = out.points.back().gap;
      out.monotone = out.monotone && (gamma > 0.0 ? gap < prev : gap <= prev);
    }
    out.bounded = out.bounded && gap <= bound + 1e-12;
    out.points.push_back({delta, gap, bound});
  }
  return out;
}

// Monotone error decrease. Each instance fixes Q^pi exactly, copies it onto
// the in-sample entries and puts every OOD-in-CHN entry at distance
// (1.1 eps, 3 eps] from Q^pi, where eps bounds |Q^pi(s,a) - Q^pi(s,a_nb)|.

struct OodUpdateSweep {
  std::size_t instances = 0;
  std::size_t updates = 0;
  std::size_t violations = 0;
  std::string first_violation;
};

inline OodUpdateSweep ood_update_sweep(std::size_t instances, double gamma, std::uint64_t seed, double lr = 0.01) {
  OodUpdateSweep out;
  const SeedSplitter split(seed);
  for (std::size_t i = 0; out.instances < instances; ++i) {
    Rng rng = split.rng("instance", i);
    const TabularMdp mdp = random_tabular_mdp(5, 6, gamma, rng);
    const SboInstance inst = random_sbo_instance(mdp, rng);
    const QTable q_pi = exact_policy_q(inst.mdp, inst.policy);

    double eps = 0.0;
    std::vector<StateAction> ood;
    for (std::size_t s = 0; s < 5; ++s)
      for (std::size_t a = 0; a < 6; ++a)
        if (inst.spec.is_ood_in_chn(s, a)) {
          const auto nb = *inst.spec.neighbor(s, a);
          eps = std::max(eps, std::abs(q_pi(s, a) - q_pi(nb.state, nb.action)));
          ood.push_back({s, a});
        }
    if (ood.empty() || eps == 0.0) continue;

    QTable q = q_pi;
    for (const auto& sa : ood) {
      const double sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
      q(sa.state, sa.action) += sign * eps * uniform(rng, 1.1 + 1e-9, 3.0);
    }
    ++out.instances;
    for (const auto& sa : ood) {
      const double before = std::abs(q(sa.state, sa.action) - q_pi(sa.state, sa.action));
      const QTable next = ood_update_step(q, sa, inst.spec, lr);
      const double after = std::abs(next(sa.state, sa.action) - q_pi(sa.state, sa.action));
      ++out.updates;
      if (!(after < before)) {
        if (out.violations++ == 0) {
          std::ostringstream msg;
          msg << "instance " << i << " entry (" << sa.state << "," << sa.action << "): |err| " << before << " -> "
              << after;
          out.first_violation = msg.str();
        }
      }
    }
  }
  return out;
}

}  // namespace sqog
