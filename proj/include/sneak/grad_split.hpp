#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "sneak/autodiff.hpp"
#include "sneak/extractor.hpp"

namespace sneak {

struct PixelFitConfig {
  std::size_t steps = 500;
  std::optional<Real> lr;   // default: n*d / (2 * lambda_max(W^T W))
  std::optional<Real> tol;  // default: 1e-6 * ||target||^2 / (n*d)
};

struct PixelFit {
  Matrix delta;                 // n x clip_size, same layout as PixelVideo::clips()
  Real initial_mse = 0.0;
  Real final_mse = 0.0;         // MSE at the returned delta
  std::vector<Real> trace;      // best MSE so far after each step
  std::vector<Real> clip_mse;   // per-clip MSE (mean over d) at the returned delta
  std::size_t steps_taken = 0;
  Real lr = 0.0;
  Real tol = 0.0;

  Real linf() const { return max_abs(delta); }
  Real l2() const { return frobenius_norm(delta); }
};

/// MSE is the mean over all n*d feature entries.
inline Real feature_mse(const Matrix& a, const Matrix& b) {
  a.require_same_shape(b, "feature_mse");
  return squared_norm(a - b) / static_cast<Real>(a.size());
}

inline Real default_fit_tolerance(const Matrix& target) {
  return 1e-6 * squared_norm(target) / static_cast<Real>(target.size());
}

inline Real default_fit_lr(const FeatureExtractor& extractor, std::size_t clip_count) {
  const Real lambda = extractor.gram_spectral_radius();
  const auto nd = static_cast<Real>(clip_count * extractor.feature_dim());
  return lambda > 0.0 ? nd / (2.0 * lambda) : 1.0;
}

/// Gradient descent on MSE(E(video + delta), target) from delta = 0, clamping the
/// perturbed pixels to [0, 1] after each step. Stops once the MSE reaches `tol` or the
/// step budget is spent; returns the best iterate.
inline PixelFit fit_pixel_perturbation(const FeatureExtractor& extractor, const PixelVideo& video,
                                       const Matrix& target, const PixelFitConfig& cfg = {}) {
  extractor.check_compatible(video.dims());
  const std::size_t n = video.dims().clip_count();
  if (target.rows() != n || target.cols() != extractor.feature_dim()) {
    throw InputError("fit target is " + target.shape_string() + ", extractor yields " + std::to_string(n) +
                     "x" + std::to_string(extractor.feature_dim()));
  }
  if (cfg.steps < 1) throw InputError("pixel fit needs at least one step");

  PixelFit fit;
  fit.lr = cfg.lr.value_or(default_fit_lr(extractor, n));
  fit.tol = cfg.tol.value_or(default_fit_tolerance(target));
  if (!(fit.lr > 0.0) || !(fit.tol >= 0.0)) throw InputError("pixel fit needs lr > 0 and tol >= 0");

  const Matrix& clean = video.clips();
  Matrix current = clean;

  auto evaluate = [&](const Matrix& pixels, Matrix* grad) {
    Tape tape;
    Var x = tape.variable(pixels);
    Var loss = mse(extractor.extract(x), target);
    if (grad) {
      tape.backward(loss);
      *grad = x.grad();
    }
    return loss.value()[0];
  };

  Matrix grad;
  Real value = evaluate(current, &grad);
  fit.initial_mse = value;
  Real best = value;
  Matrix best_pixels = current;

  while (best > fit.tol && fit.steps_taken < cfg.steps) {
    for (std::size_t i = 0; i < current.size(); ++i) {
      current[i] = std::clamp(current[i] - fit.lr * grad[i], 0.0, 1.0);
    }
    ++fit.steps_taken;
    value = evaluate(current, &grad);
    if (value < best) {
      best = value;
      best_pixels = current;
    }
    fit.trace.push_back(best);
  }

  fit.delta = best_pixels - clean;
  fit.final_mse = best;
  const Matrix fitted = extractor.extract(PixelVideo(video.dims(), best_pixels));
  fit.clip_mse.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Real s = 0.0;
    for (std::size_t j = 0; j < target.cols(); ++j) {
      const Real e = fitted(i, j) - target(i, j);
      s += e * e;
    }
    fit.clip_mse[i] = s / static_cast<Real>(target.cols());
  }
  return fit;
}

/// Clean video plus a fitted pixel perturbation.
inline PixelVideo apply_pixel_perturbation(const PixelVideo& video, const Matrix& delta) {
  return PixelVideo(video.dims(), video.clips() + delta);
}

}  // namespace sneak
