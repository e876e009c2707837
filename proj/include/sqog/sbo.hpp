#pragma once

// Smooth Bellman operator on finite MDPs.
//
// The operator is the composition G1 . B2 where
//   B2 backs up in-sample entries (mu_hat(a|s) > 0) with the empirical
//      Bellman operator and leaves OOD-in-CHN entries unchanged,
//   G1 leaves in-sample entries unchanged and overwrites every OOD-in-CHN
//      entry with the value of its designated in-sample neighbor.
// Entries outside CHN are left untouched by both; the operator's domain is
// in-sample U (OOD n CHN), and all norms below are taken over that domain.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sqog/error.hpp"
#include "sqog/mdp.hpp"

namespace sqog {

struct StateAction {
  std::size_t state = 0;
  std::size_t action = 0;
  friend bool operator==(const StateAction&, const StateAction&) = default;
};

struct SboSpec {
  MaskTable in_sample;
  MaskTable chn;
  /// Defined exactly on OOD n CHN entries.
  StateActionTable<std::optional<StateAction>> neighbor;
  /// Action coordinates for the neighbor metric, one vector per action index.
  std::vector<Vector> action_coords;
  double delta_neighbor = 0.0;

  std::size_t n_states() const noexcept { return in_sample.n_states(); }
  std::size_t n_actions() const noexcept { return in_sample.n_actions(); }

  bool is_in_sample(std::size_t s, std::size_t a) const { return in_sample(s, a) != 0; }
  bool is_ood_in_chn(std::size_t s, std::size_t a) const { return in_sample(s, a) == 0 && chn(s, a) != 0; }
  bool in_domain(std::size_t s, std::size_t a) const { return in_sample(s, a) != 0 || chn(s, a) != 0; }

  double action_distance(std::size_t a, std::size_t b) const {
    double d = 0.0;
    for (std::size_t k = 0; k < action_coords[a].size(); ++k) {
      const double diff = action_coords[a][k] - action_coords[b][k];
      d += diff * diff;
    }
    return std::sqrt(d);
  }

  /// Throws InvalidArgument naming the first violated invariant.
  void validate() const {
    const std::size_t ns = n_states();
    const std::size_t na = n_actions();
    if (!chn.same_shape(in_sample) || neighbor.n_states() != ns || neighbor.n_actions() != na)
      throw InvalidArgument("SboSpec: mask and neighbor tables disagree in shape");
    if (action_coords.size() != na) throw InvalidArgument("SboSpec: need one coordinate vector per action");
    for (std::size_t s = 0; s < ns; ++s) {
      for (std::size_t a = 0; a < na; ++a) {
        const auto& nb = neighbor(s, a);
        const std::string where = "(" + std::to_string(s) + "," + std::to_string(a) + ")";
        if (!is_ood_in_chn(s, a)) {
          if (nb) throw InvalidArgument("SboSpec: neighbor defined on non-OOD-in-CHN entry " + where);
          continue;
        }
        if (!nb) throw InvalidArgument("SboSpec: OOD entry in CHN " + where + " has no neighbor");
        if (nb->state != s)
          throw InvalidArgument("SboSpec: neighbor of " + where + " lies at state " + std::to_string(nb->state));
        if (nb->action >= na || !is_in_sample(nb->state, nb->action))
          throw InvalidArgument("SboSpec: neighbor of " + where + " is not in-sample");
        if (action_distance(a, nb->action) > delta_neighbor + 1e-12)
          throw InvalidArgument("SboSpec: neighbor of " + where + " is farther than delta_neighbor");
      }
    }
  }
};

/// Neighbor = nearest in-sample action at the same state (Euclidean on
/// action_coords, ties to the lowest index). delta_neighbor is the largest
/// neighbor distance realized.
inline SboSpec make_sbo_spec(MaskTable in_sample, MaskTable chn, std::vector<Vector> action_coords) {
  SboSpec spec;
  spec.in_sample = std::move(in_sample);
  spec.chn = std::move(chn);
  spec.action_coords = std::move(action_coords);
  const std::size_t ns = spec.n_states();
  const std::size_t na = spec.n_actions();
  if (!spec.chn.same_shape(spec.in_sample)) throw InvalidArgument("make_sbo_spec: mask shapes differ");
  if (spec.action_coords.size() != na) throw InvalidArgument("make_sbo_spec: need one coordinate vector per action");
  spec.neighbor = StateActionTable<std::optional<StateAction>>(ns, na);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < na; ++a) {
      if (!spec.is_ood_in_chn(s, a)) continue;
      std::optional<std::size_t> best;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t b = 0; b < na; ++b) {
        if (!spec.is_in_sample(s, b)) continue;
        const double d = spec.action_distance(a, b);
        if (d < best_d) {
          best_d = d;
          best = b;
        }
      }
      if (!best)
        throw InvalidArgument("make_sbo_spec: state " + std::to_string(s) +
                              " has OOD actions in CHN but no in-sample action");
      spec.neighbor(s, a) = StateAction{s, *best};
      spec.delta_neighbor = std::max(spec.delta_neighbor, best_d);
    }
  }
  return spec;
}

/// Evenly spaced scalar action coordinates 0, 1, ..., n-1.
inline std::vector<Vector> index_action_coords(std::size_t n_actions) {
  std::vector<Vector> coords(n_actions);
  for (std::size_t a = 0; a < n_actions; ++a) coords[a] = {static_cast<double>(a)};
  return coords;
}

/// In-sample mask from visit counts: count(s,a) > 0.
inline MaskTable in_sample_from_counts(const StateActionTable<std::size_t>& counts) {
  MaskTable mask(counts.n_states(), counts.n_actions());
  for (std::size_t i = 0; i < counts.size(); ++i) mask.values()[i] = counts.values()[i] > 0 ? 1 : 0;
  return mask;
}

namespace detail {
inline void check_shapes(const QTable& q, const SboSpec& spec) {
  if (q.n_states() != spec.n_states() || q.n_actions() != spec.n_actions())
    throw InvalidArgument("Q shape does not match the SBO spec");
}
}  // namespace detail

/// Sup-norm of (a - b) restricted to the operator's domain.
inline double domain_sup_norm(const QTable& a, const QTable& b, const SboSpec& spec) {
  detail::check_shapes(a, spec);
  detail::check_shapes(b, spec);
  double m = 0.0;
  for (std::size_t s = 0; s < spec.n_states(); ++s)
    for (std::size_t a_i = 0; a_i < spec.n_actions(); ++a_i)
      if (spec.in_domain(s, a_i)) m = std::max(m, std::abs(a(s, a_i) - b(s, a_i)));
  return m;
}

/// Tabular empirical Bellman operator (exact transition model).
inline QTable empirical_bellman(const QTable& q, const TabularMdp& mdp, const PolicyTable& policy) {
  return policy_backup(mdp, policy, q);
}

inline QTable g1_apply(const QTable& q, const SboSpec& spec) {
  detail::check_shapes(q, spec);
  QTable out = q;
  for (std::size_t s = 0; s < spec.n_states(); ++s) {
    for (std::size_t a = 0; a < spec.n_actions(); ++a) {
      if (!spec.is_ood_in_chn(s, a)) continue;
      const auto& nb = spec.neighbor(s, a);
      if (!nb) throw InvalidArgument("g1_apply: OOD entry in CHN without a neighbor");
      out(s, a) = q(nb->state, nb->action);
    }
  }
  return out;
}

inline QTable b2_apply(const QTable& q, const SboSpec& spec, const TabularMdp& mdp, const PolicyTable& policy) {
  detail::check_shapes(q, spec);
  const QTable backed = empirical_bellman(q, mdp, policy);
  QTable out = q;
  for (std::size_t s = 0; s < spec.n_states(); ++s)
    for (std::size_t a = 0; a < spec.n_actions(); ++a)
      if (spec.is_in_sample(s, a)) out(s, a) = backed(s, a);
  return out;
}

inline QTable sbo_apply(const QTable& q, const SboSpec& spec, const TabularMdp& mdp, const PolicyTable& policy) {
  return g1_apply(b2_apply(q, spec, mdp, policy), spec);
}

/// Throws unless every action with pi(a|s) > 0 lies in the operator domain.
inline void check_policy_support(const SboSpec& spec, const PolicyTable& policy) {
  for (std::size_t s = 0; s < spec.n_states(); ++s)
    for (std::size_t a = 0; a < spec.n_actions(); ++a)
      if (policy(s, a) > 0.0 && !spec.in_domain(s, a))
        throw InvalidArgument("policy puts mass on (" + std::to_string(s) + "," + std::to_string(a) +
                              ") outside CHN");
}

struct FixedPointResult {
  QTable q;
  std::size_t iterations = 0;
  /// Successive sup-norm differences, one per iteration.
  std::vector<double> residuals;
};

inline FixedPointResult fixed_point(QTable q0, const SboSpec& spec, const TabularMdp& mdp, const PolicyTable& policy,
                                    double tol, std::size_t max_iter) {
  check_policy_support(spec, policy);
  FixedPointResult res{std::move(q0), 0, {}};
  for (std::size_t it = 1; it <= max_iter; ++it) {
    QTable next = sbo_apply(res.q, spec, mdp, policy);
    const double diff = domain_sup_norm(next, res.q, spec);
    res.q = std::move(next);
    res.iterations = it;
    res.residuals.push_back(diff);
    if (diff <= tol) return res;
  }
  throw ConvergenceError("fixed_point: no convergence after " + std::to_string(max_iter) + " iterations (residual " +
                             std::to_string(res.residuals.back()) + ")",
                         res.residuals.back());
}

/// |SBO Q1 - SBO Q2| / |Q1 - Q2|, sup-norms over the domain.
inline double contraction_ratio(const QTable& q1, const QTable& q2, const SboSpec& spec, const TabularMdp& mdp,
                                const PolicyTable& policy) {
  const double denom = domain_sup_norm(q1, q2, spec);
  if (denom == 0.0) throw InvalidArgument("contraction_ratio: Q1 and Q2 coincide on the domain");
  return domain_sup_norm(sbo_apply(q1, spec, mdp, policy), sbo_apply(q2, spec, mdp, policy), spec) / denom;
}

/// One gradient step of (Q(s,a) - Q(s, a_nb))^2 on the OOD entry:
/// Q'(s,a) = Q(s,a) + 2 lr (Q(s, a_nb) - Q(s,a)).
inline QTable ood_update_step(QTable q, StateAction sa, const SboSpec& spec, double lr) {
  detail::check_shapes(q, spec);
  if (!(lr > 0.0 && lr <= 0.25)) throw InvalidArgument("ood_update_step: lr must lie in (0, 0.25]");
  if (spec.is_in_sample(sa.state, sa.action)) throw InvalidArgument("ood_update_step: entry is in-sample");
  if (!spec.is_ood_in_chn(sa.state, sa.action)) throw InvalidArgument("ood_update_step: entry lies outside CHN");
  const auto& nb = spec.neighbor(sa.state, sa.action);
  if (!nb) throw InvalidArgument("ood_update_step: entry has no neighbor");
  const double target = q(nb->state, nb->action);
  q(sa.state, sa.action) += 2.0 * lr * (target - q(sa.state, sa.action));
  return q;
}

/// Effect of the generalization operator on in-sample backups: the largest
/// |B(G1 Q)(s,a) - B Q(s,a)| over in-sample (s,a), i.e. how far in-sample
/// targets move when OOD successor values are replaced by their neighbors.
inline double insample_effect_gap(const QTable& q, const SboSpec& spec, const TabularMdp& mdp,
                                  const PolicyTable& policy) {
  const QTable plain = empirical_bellman(q, mdp, policy);
  const QTable smoothed = empirical_bellman(g1_apply(q, spec), mdp, policy);
  double gap = 0.0;
  for (std::size_t s = 0; s < spec.n_states(); ++s)
    for (std::size_t a = 0; a < spec.n_actions(); ++a)
      if (spec.is_in_sample(s, a)) gap = std::max(gap, std::abs(smoothed(s, a) - plain(s, a)));
  return gap;
}

/// Largest |Q(s,a) - Q(s, a_nb)| over OOD-in-CHN entries the policy visits.
inline double neighbor_q_spread(const QTable& q, const SboSpec& spec, const PolicyTable& policy) {
  double spread = 0.0;
  for (std::size_t s = 0; s < spec.n_states(); ++s) {
    for (std::size_t a = 0; a < spec.n_actions(); ++a) {
      if (!spec.is_ood_in_chn(s, a) || policy(s, a) <= 0.0) continue;
      const auto& nb = spec.neighbor(s, a);
      spread = std::max(spread, std::abs(q(s, a) - q(nb->state, nb->action)));
    }
  }
  return spread;
}

}  // namespace sqog
