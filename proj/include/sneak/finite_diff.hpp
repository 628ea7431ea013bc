#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>

#include "sneak/matrix.hpp"

namespace sneak {

/// Central-difference gradient estimate (f(x + h e) - f(x - h e)) / 2h per entry.
template <class F>
  requires std::invocable<const F&, const Matrix&>
Matrix finite_diff_grad(const F& f, const Matrix& x, Real h = 1e-5) {
  if (!(h > 0.0)) throw InputError("finite_diff_grad: step must be positive");
  Matrix grad = Matrix::zeros_like(x);
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real orig = probe[i];
    probe[i] = orig + h;
    const Real up = static_cast<Real>(f(probe));
    probe[i] = orig - h;
    const Real down = static_cast<Real>(f(probe));
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// ||a - b|| / max(||a||, ||b||, floor): the comparison used for gradient checks.
inline Real relative_error(const Matrix& a, const Matrix& b, Real floor = 1e-8) {
  a.require_same_shape(b, "relative_error");
  const Real denom = std::max({frobenius_norm(a), frobenius_norm(b), floor});
  return frobenius_norm(a - b) / denom;
}

}  // namespace sneak
