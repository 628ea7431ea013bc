#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "sneak/attack.hpp"

namespace sneak {

/// One keep bit per temporal position, broadcast across the feature dimension.
struct TemporalMask {
  std::vector<std::uint8_t> keep;
  Real keep_fraction = 1.0;

  std::size_t size() const { return keep.size(); }
  std::size_t kept_count() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1)); }

  Matrix apply(const Matrix& m) const {
    if (m.rows() != keep.size()) throw ShapeError("mask length != matrix rows");
    Matrix out = m;
    detail::apply_row_mask(out, keep);
    return out;
  }

  std::string bits() const {
    std::string s;
    s.reserve(keep.size());
    for (auto k : keep) s += k ? '1' : '0';
    return s;
  }

  friend bool operator==(const TemporalMask&, const TemporalMask&) = default;
};

/// ceil(keep_fraction * n). A 1e-9 slack absorbs representation error such as 0.1 * 30.
inline std::size_t kept_count_for(Real keep_fraction, std::size_t n) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw InputError("keep fraction must lie in (0, 1]");
  }
  const auto k = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<Real>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

/// Keep the rows with the largest L2 norms; ties go to the smaller row index.
inline TemporalMask build_mask(const Matrix& delta, Real keep_fraction) {
  const std::size_t n = delta.rows();
  const std::size_t k = kept_count_for(keep_fraction, n);
  std::vector<Real> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = row_norm(delta, i);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  TemporalMask mask{std::vector<std::uint8_t>(n, 0), keep_fraction};
  for (std::size_t r = 0; r < k; ++r) mask.keep[order[r]] = 1;
  return mask;
}

struct PrunedAttack {
  Perturbation perturbation;  // masked re-optimization
  TemporalMask mask;
  Perturbation unpruned;      // stage-one result the mask was derived from
};

/// Run the variant unmasked, keep the top rows of that perturbation by norm, then
/// re-run from zero with gradient and iterate restricted to the kept rows.
template <PerturbationObjective Obj>
PrunedAttack attack_sneak_pruned(const Obj& obj, const AttackConfig& cfg, Real keep_fraction) {
  PrunedAttack out;
  out.unpruned = run_attack(obj, cfg);
  out.mask = build_mask(out.unpruned.delta, keep_fraction);
  AttackOptions opts;
  opts.row_mask = &out.mask.keep;
  out.perturbation = run_attack(obj, cfg, opts);
  return out;
}

}  // namespace sneak
