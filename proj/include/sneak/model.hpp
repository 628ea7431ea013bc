#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sneak/autodiff.hpp"
#include "sneak/matrix.hpp"

namespace sneak {

using TokenId = std::uint32_t;
using Query = std::vector<TokenId>;

/// Closed interval [start, end] of feature positions.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  bool valid_for(std::size_t n) const { return start <= end && end < n; }
  friend bool operator==(const Span&, const Span&) = default;
};

using SpanLabel = Span;

struct SpanPrediction {
  Matrix start_probs;  // 1 x n
  Matrix end_probs;    // 1 x n
  Span decoded;
};

struct ModelDims {
  std::size_t feature_dim = 16;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t vocab_size = 64;
  std::size_t context_radius = 2;  // feature rows on each side seen by the video projection

  std::size_t context_width() const { return (2 * context_radius + 1) * feature_dim; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Trainable weights of the span model, in serialization order.
struct ModelParams {
  ModelDims dims;
  std::uint64_t seed = 0;
  Matrix embedding;   // vocab x e
  Matrix video_proj;  // (2r+1)d x h
  Matrix query_proj;  // e x h
  Matrix mixing;      // h x h
  Matrix start_head;  // h x 1
  Matrix end_head;    // h x 1

  static constexpr std::array<std::string_view, 6> kWeightNames = {
      "embedding", "video_proj", "query_proj", "mixing", "start_head", "end_head"};

  std::array<Matrix*, 6> weights() {
    return {&embedding, &video_proj, &query_proj, &mixing, &start_head, &end_head};
  }
  std::array<const Matrix*, 6> weights() const {
    return {&embedding, &video_proj, &query_proj, &mixing, &start_head, &end_head};
  }

  /// Same shapes, all zeros. Used as a gradient accumulator.
  ModelParams zeros_like() const {
    ModelParams z;
    z.dims = dims;
    z.seed = seed;
    auto dst = z.weights();
    auto src = weights();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = Matrix::zeros_like(*src[i]);
    return z;
  }

  bool all_finite() const {
    for (const Matrix* w : weights())
      if (!w->all_finite()) return false;
    return true;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

  static ModelParams init(const ModelDims& dims, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<Real> normal(0.0, 1.0);
    auto gaussian = [&](std::size_t r, std::size_t c, Real stddev) {
      Matrix m(r, c);
      for (auto& v : m.values()) v = stddev * normal(rng);
      return m;
    };
    ModelParams p;
    p.dims = dims;
    p.seed = seed;
    const auto d = static_cast<Real>(dims.feature_dim);
    const auto e = static_cast<Real>(dims.embed_dim);
    const auto h = static_cast<Real>(dims.hidden_dim);
    p.embedding = gaussian(dims.vocab_size, dims.embed_dim, 1.0);
    p.video_proj = gaussian(dims.context_width(), dims.hidden_dim,
                            1.0 / std::sqrt(d * static_cast<Real>(2 * dims.context_radius + 1)));
    p.query_proj = gaussian(dims.embed_dim, dims.hidden_dim, 1.0 / std::sqrt(e));
    p.mixing = gaussian(dims.hidden_dim, dims.hidden_dim, 1.0 / std::sqrt(h));
    p.start_head = gaussian(dims.hidden_dim, 1, 1.0 / std::sqrt(h));
    p.end_head = gaussian(dims.hidden_dim, 1, 1.0 / std::sqrt(h));
    return p;
  }
};

/// Model weights recorded on a tape, either as constants or differentiable leaves.
struct BoundParams {
  Var embedding, video_proj, query_proj, mixing, start_head, end_head;
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 0;
  std::size_t context_radius = 0;

  std::array<Var, 6> vars() const {
    return {embedding, video_proj, query_proj, mixing, start_head, end_head};
  }
};

inline BoundParams bind(Tape& tape, const ModelParams& p, bool differentiable) {
  auto put = [&](const Matrix& m) { return differentiable ? tape.variable(m) : tape.constant(m); };
  return BoundParams{put(p.embedding),  put(p.video_proj), put(p.query_proj),  put(p.mixing),
                     put(p.start_head), put(p.end_head),   p.dims.vocab_size, p.dims.feature_dim,
                     p.dims.context_radius};
}

struct SpanOutputs {
  Var start_probs;  // 1 x n
  Var end_probs;    // 1 x n
};

inline void validate_model_input(const Matrix& features, std::span<const TokenId> query,
                                 std::size_t feature_dim, std::size_t vocab_size) {
  if (features.rows() < 2) {
    throw InputError("model input needs at least 2 feature positions, got " +
                     std::to_string(features.rows()));
  }
  if (features.cols() != feature_dim) {
    throw ShapeError("feature width " + std::to_string(features.cols()) + " != model feature_dim " +
                     std::to_string(feature_dim));
  }
  if (query.empty()) throw InputError("empty query");
  for (TokenId t : query) {
    if (t >= vocab_size) {
      throw VocabularyError("token id " + std::to_string(t) + " outside vocabulary of " +
                            std::to_string(vocab_size));
    }
  }
}

/// Span model: mean-pooled query embedding, projected and mixed into a gate that
/// multiplies the projected feature context of each position; two linear heads
/// score every position. With context_radius = 0 each position sees only its own row.
///
/// The heads are linear in the fused state (context * video_proj) .* gate, so scores
/// are evaluated as context * (video_proj * (gate^T .* head)), never forming the n x h
/// fused matrix.
inline SpanOutputs forward(const BoundParams& p, Var features, std::span<const TokenId> query) {
  validate_model_input(features.value(), query, p.feature_dim, p.vocab_size);
  std::vector<std::size_t> ids(query.begin(), query.end());
  Var pooled = mean_rows(gather_rows(p.embedding, std::move(ids)));
  Var gate = transpose(matmul(matmul(pooled, p.query_proj), p.mixing));  // h x 1
  Var context = unfold_rows(features, p.context_radius);
  auto head_logits = [&](Var head) {
    return transpose(matmul(context, matmul(p.video_proj, hadamard(gate, head))));
  };
  return {softmax_rows(head_logits(p.start_head)), softmax_rows(head_logits(p.end_head))};
}

/// 0.5 * [CE(PS, YS) + CE(PE, YE)]
inline Var span_loss(const SpanOutputs& out, const SpanLabel& label) {
  const std::size_t n = out.start_probs.cols();
  if (!label.valid_for(n)) {
    throw IndexError("span label [" + std::to_string(label.start) + ", " + std::to_string(label.end) +
                     "] invalid for " + std::to_string(n) + " positions");
  }
  return scale(add(cross_entropy(out.start_probs, label.start), cross_entropy(out.end_probs, label.end)),
               0.5);
}

inline Real span_loss(const SpanPrediction& pred, const SpanLabel& label) {
  const std::size_t n = pred.start_probs.cols();
  if (!label.valid_for(n)) {
    throw IndexError("span label [" + std::to_string(label.start) + ", " + std::to_string(label.end) +
                     "] invalid for " + std::to_string(n) + " positions");
  }
  return 0.5 * (cross_entropy(pred.start_probs.values(), label.start) +
                cross_entropy(pred.end_probs.values(), label.end));
}

/// argmax over i <= j of log PS[i] + log PE[j]; ties go to smaller i, then smaller j.
inline Span decode_span(std::span<const Real> start_probs, std::span<const Real> end_probs) {
  const std::size_t n = start_probs.size();
  if (n == 0 || end_probs.size() != n) throw ShapeError("decode_span: mismatched distributions");
  std::vector<Real> log_end(n);
  for (std::size_t j = 0; j < n; ++j) log_end[j] = std::log(std::max(end_probs[j], kProbabilityFloor));
  Span best{0, 0};
  Real best_score = -std::numeric_limits<Real>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const Real ls = std::log(std::max(start_probs[i], kProbabilityFloor));
    for (std::size_t j = i; j < n; ++j) {
      const Real score = ls + log_end[j];
      if (score > best_score) {
        best_score = score;
        best = {i, j};
      }
    }
  }
  return best;
}

inline Span decode_span(const SpanPrediction& pred) {
  return decode_span(pred.start_probs.values(), pred.end_probs.values());
}

/// Gradient-free evaluation of `forward`. The heads are linear in the fused state, so
/// each score reduces to context row i dotted with video_proj * (gate .* head).
inline SpanPrediction predict(const ModelParams& params, const Matrix& features,
                              std::span<const TokenId> query) {
  const ModelDims& dims = params.dims;
  validate_model_input(features, query, dims.feature_dim, dims.vocab_size);
  const std::size_t h = dims.hidden_dim;

  Matrix pooled(1, dims.embed_dim);
  for (TokenId t : query) {
    auto row = params.embedding.row(t);
    for (std::size_t j = 0; j < pooled.cols(); ++j) pooled[j] += row[j];
  }
  pooled *= 1.0 / static_cast<Real>(query.size());
  const Matrix gate = matmul(matmul(pooled, params.query_proj), params.mixing);

  Matrix heads(h, 2);
  for (std::size_t k = 0; k < h; ++k) {
    heads(k, 0) = gate[k] * params.start_head[k];
    heads(k, 1) = gate[k] * params.end_head[k];
  }
  const Matrix scores = matmul(unfold_rows(features, dims.context_radius), matmul(params.video_proj, heads));

  const std::size_t n = features.rows();
  Matrix start(1, n), end(1, n);
  for (std::size_t i = 0; i < n; ++i) {
    start[i] = scores(i, 0);
    end[i] = scores(i, 1);
  }
  SpanPrediction pred{softmax_rows(start), softmax_rows(end), {}};
  pred.decoded = decode_span(pred);
  return pred;
}

/// Intersection over union of closed integer intervals.
inline Real iou(const Span& a, const Span& b) {
  const auto lo = std::max(a.start, b.start);
  const auto hi = std::min(a.end, b.end);
  const Real inter = hi >= lo ? static_cast<Real>(hi - lo + 1) : 0.0;
  const Real uni = static_cast<Real>(a.length() + b.length()) - inter;
  return inter / uni;
}

struct SpanPair {
  Span predicted;
  Span label;
};

inline Real mean_iou(std::span<const SpanPair> samples) {
  if (samples.empty()) throw InputError("mean_iou over an empty sample list");
  Real total = 0.0;
  for (const auto& s : samples) total += iou(s.predicted, s.label);
  return total / static_cast<Real>(samples.size());
}

}  // namespace sneak
