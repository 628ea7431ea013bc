#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sneak/autodiff.hpp"
#include "sneak/matrix.hpp"

namespace sneak {

/// T frames x C channels x H x W, grouped into clips of `frames_per_clip` frames.
struct VideoDims {
  std::size_t frames = 128;
  std::size_t channels = 3;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t frames_per_clip = 4;

  std::size_t frame_size() const { return channels * height * width; }
  std::size_t clip_size() const { return frames_per_clip * frame_size(); }
  std::size_t clip_count() const { return frames_per_clip == 0 ? 0 : frames / frames_per_clip; }
  std::size_t total() const { return frames * frame_size(); }

  void validate() const {
    if (frames_per_clip == 0 || frames == 0 || frame_size() == 0) {
      throw InputError("video dimensions must be positive");
    }
    if (frames % frames_per_clip != 0) {
      throw InputError("frame count " + std::to_string(frames) + " not divisible by frames_per_clip " +
                       std::to_string(frames_per_clip));
    }
  }
  friend bool operator==(const VideoDims&, const VideoDims&) = default;
};

/// Pixel video with values clamped to [0, 1]. Storage is T,C,H,W row-major, so clip i
/// is the contiguous block of its f frames and the whole video reads as an
/// (n x clip_size) matrix.
class PixelVideo {
 public:
  PixelVideo() = default;
  PixelVideo(const VideoDims& dims, std::vector<Real> pixels) : dims_(dims) {
    dims_.validate();
    if (pixels.size() != dims_.total()) {
      throw InputError("video has " + std::to_string(pixels.size()) + " values, dims require " +
                       std::to_string(dims_.total()));
    }
    for (auto& v : pixels) v = std::clamp(v, 0.0, 1.0);
    clips_ = Matrix(dims_.clip_count(), dims_.clip_size(), std::move(pixels));
  }
  PixelVideo(const VideoDims& dims, const Matrix& clips)
      : PixelVideo(dims, std::vector<Real>(clips.values().begin(), clips.values().end())) {}

  const VideoDims& dims() const { return dims_; }
  const Matrix& clips() const { return clips_; }
  std::span<const Real> pixels() const { return clips_.values(); }

  /// Video restricted to a single clip (a one-clip video).
  PixelVideo clip(std::size_t i) const {
    VideoDims d = dims_;
    d.frames = d.frames_per_clip;
    auto r = clips_.row(i);
    return PixelVideo(d, std::vector<Real>(r.begin(), r.end()));
  }

  friend bool operator==(const PixelVideo&, const PixelVideo&) = default;

 private:
  VideoDims dims_;
  Matrix clips_;
};

/// Clip-local encoder: feature row i = tanh(clip_i * W + b). Row i reads clip i only.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;

  /// Seeded random map. Weights ~ N(0, gain^2 / clip_size); the bias centres a
  /// uniform mid-grey clip near zero so typical features stay well inside (-1, 1).
  FeatureExtractor(const VideoDims& dims, std::size_t feature_dim, std::uint64_t seed, Real gain = 1.5)
      : dims_(dims), feature_dim_(feature_dim), seed_(seed) {
    dims_.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<Real> normal(0.0, 1.0);
    const std::size_t k = dims_.clip_size();
    weights_ = Matrix(k, feature_dim);
    const Real sd = gain / std::sqrt(static_cast<Real>(k));
    for (auto& w : weights_.values()) w = sd * normal(rng);
    bias_ = Matrix(1, feature_dim);
    for (std::size_t j = 0; j < feature_dim; ++j) {
      Real col = 0.0;
      for (std::size_t r = 0; r < k; ++r) col += weights_(r, j);
      bias_[j] = -0.5 * col + 0.05 * normal(rng);
    }
  }

  const VideoDims& dims() const { return dims_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::uint64_t seed() const { return seed_; }
  const Matrix& weights() const { return weights_; }
  const Matrix& bias() const { return bias_; }

  void check_compatible(const VideoDims& d) const {
    if (d.channels != dims_.channels || d.height != dims_.height || d.width != dims_.width ||
        d.frames_per_clip != dims_.frames_per_clip) {
      throw InputError("video clip shape does not match the extractor");
    }
  }

  Matrix extract(const PixelVideo& video) const {
    check_compatible(video.dims());
    Matrix z = matmul(video.clips(), weights_);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto r = z.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] = std::tanh(r[j] + bias_[j]);
    }
    return z;
  }

  /// Differentiable extraction of an (n x clip_size) clip matrix recorded on `clips`' tape.
  Var extract(Var clips) const {
    if (clips.cols() != dims_.clip_size()) {
      throw ShapeError("clip width " + std::to_string(clips.cols()) + " != extractor clip size " +
                       std::to_string(dims_.clip_size()));
    }
    Tape& t = clips.tape();
    return sneak::tanh(add_row(matmul(clips, t.constant(weights_)), t.constant(bias_)));
  }

  /// Largest eigenvalue of W^T W, by power iteration on the (d x d) Gram matrix.
  Real gram_spectral_radius() const {
    const Matrix gram = matmul_tn(weights_, weights_);
    Matrix v(feature_dim_, 1, 1.0);
    Real lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
      Matrix w = matmul(gram, v);
      const Real norm = frobenius_norm(w);
      if (norm == 0.0) return 0.0;
      lambda = norm / frobenius_norm(v);
      v = w * (1.0 / norm);
    }
    return lambda;
  }

 private:
  VideoDims dims_;
  std::size_t feature_dim_ = 0;
  std::uint64_t seed_ = 0;
  Matrix weights_;  // clip_size x d
  Matrix bias_;     // 1 x d
};

}  // namespace sneak
