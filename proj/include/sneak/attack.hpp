#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sneak/autodiff.hpp"
#include "sneak/model.hpp"

namespace sneak {

enum class AttackVariant { oblivion, best, average, random };

inline std::string_view to_string(AttackVariant v) {
  switch (v) {
    case AttackVariant::oblivion: return "oblivion";
    case AttackVariant::best: return "best";
    case AttackVariant::average: return "average";
    case AttackVariant::random: return "random";
  }
  return "?";
}

inline AttackVariant parse_attack_variant(std::string_view s) {
  if (s == "oblivion" || s == "pgd") return AttackVariant::oblivion;
  if (s == "best") return AttackVariant::best;
  if (s == "average") return AttackVariant::average;
  if (s == "random") return AttackVariant::random;
  throw InputError("unknown attack variant '" + std::string(s) + "'");
}

struct AttackConfig {
  Real budget = 2.0;           // feature-space Frobenius bound B
  std::size_t iterations = 50;
  Real step = 0.2;             // constant step size
  AttackVariant variant = AttackVariant::best;
  std::uint64_t seed = 0;
  bool normalize = true;       // scale each step by 1 / ||gradient||_F

  /// Step defaults to B / 10.
  static AttackConfig with_budget(AttackVariant variant, Real budget, std::size_t iterations = 50,
                                  std::uint64_t seed = 0) {
    return AttackConfig{budget, iterations, budget > 0.0 ? budget / 10.0 : 1.0, variant, seed, true};
  }

  void validate() const {
    if (!(budget >= 0.0)) throw InputError("attack budget must be >= 0");
    if (iterations < 1) throw InputError("attack needs at least one iteration");
    if (!(step > 0.0)) throw InputError("attack step must be > 0");
  }
};

struct Perturbation {
  Matrix delta;
  Real objective = 0.0;
  std::vector<Real> trace;             // objective after each update
  std::vector<std::size_t> query_choices;  // query ascended per iteration (npos: all)
  std::size_t best_iteration = 0;      // index into trace
};

/// Projection onto {x : ||x||_F <= budget}: x * min(B, ||x||) / ||x||.
/// Rounding can leave the rescaled norm an ulp above B; shrinking until it is not
/// makes the result a fixed point, so projecting twice changes nothing.
inline Matrix project_l2(const Matrix& x, Real budget) {
  const Real norm = frobenius_norm(x);
  if (norm == 0.0 || norm <= budget) return x;
  Matrix out = x * (budget / norm);
  constexpr Real kShrink = 1.0 - std::numeric_limits<Real>::epsilon();
  while (frobenius_norm(out) > budget) out *= kShrink;
  return out;
}

struct LossGrad {
  Real loss = 0.0;
  Matrix grad;  // d loss / d delta
};

/// Loss of a sample under an additive feature perturbation, one value per query.
template <class T>
concept PerturbationObjective = requires(const T& obj, const Matrix& delta, std::size_t q) {
  { obj.query_count() } -> std::convertible_to<std::size_t>;
  { obj.rows() } -> std::convertible_to<std::size_t>;
  { obj.cols() } -> std::convertible_to<std::size_t>;
  { obj.loss(delta, q) } -> std::convertible_to<Real>;
  { obj.loss_and_grad(delta, q) } -> std::same_as<LossGrad>;
};

/// Span loss of a frozen model on (features + delta) for each query of a set.
class SpanObjective {
 public:
  SpanObjective(const ModelParams& params, const Matrix& features, std::vector<Query> queries,
                SpanLabel label)
      : params_(&params), features_(&features), queries_(std::move(queries)), label_(label) {
    if (queries_.empty()) throw InputError("objective needs at least one query");
    for (const auto& q : queries_) validate_model_input(features, q, params.dims.feature_dim, params.dims.vocab_size);
    if (!label_.valid_for(features.rows())) throw IndexError("span label outside the feature range");
  }

  std::size_t query_count() const { return queries_.size(); }
  std::size_t rows() const { return features_->rows(); }
  std::size_t cols() const { return features_->cols(); }
  const std::vector<Query>& queries() const { return queries_; }
  const SpanLabel& label() const { return label_; }

  Real loss(const Matrix& delta, std::size_t q) const {
    return span_loss(predict(*params_, *features_ + delta, queries_.at(q)), label_);
  }

  LossGrad loss_and_grad(const Matrix& delta, std::size_t q) const {
    Tape tape;
    const BoundParams p = bind(tape, *params_, false);
    Var d = tape.variable(delta);
    Var x = add(tape.constant(*features_), d);
    Var l = span_loss(forward(p, x, queries_.at(q)), label_);
    tape.backward(l);
    return {l.value()[0], d.grad()};
  }

 private:
  const ModelParams* params_;
  const Matrix* features_;
  std::vector<Query> queries_;
  SpanLabel label_;
};

/// Per-iteration instrumentation handed to an AttackOptions observer.
struct IterationRecord {
  std::size_t iteration = 0;
  const Matrix* delta_before = nullptr;
  std::size_t query = 0;          // ascended query; npos for the averaged step
  const Matrix* gradient = nullptr;  // ascent direction before masking
  const Matrix* delta_after = nullptr;
  Real objective = 0.0;
};

struct AttackOptions {
  /// Per-row keep indicator (1 = perturb). Gradient and iterate are masked each step.
  const std::vector<std::uint8_t>* row_mask = nullptr;
  /// Starting point; when set it is projected, evaluated, and enters the best-iterate pool.
  std::optional<Matrix> warm_start;
  std::function<void(const IterationRecord&)> observer;
};

inline constexpr std::size_t kAllQueries = std::numeric_limits<std::size_t>::max();

namespace detail {

inline void apply_row_mask(Matrix& m, const std::vector<std::uint8_t>& mask) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (mask[i]) continue;
    for (auto& v : m.row(i)) v = 0.0;
  }
}

/// Objective value of a variant given every query's loss (or the single loss).
inline Real reduce_objective(AttackVariant variant, const std::vector<Real>& losses) {
  switch (variant) {
    case AttackVariant::oblivion: return losses.front();
    case AttackVariant::average: {
      Real s = 0.0;
      for (Real l : losses) s += l;
      return s / static_cast<Real>(losses.size());
    }
    case AttackVariant::best:
    case AttackVariant::random: {
      Real m = losses.front();
      for (Real l : losses) m = std::min(m, l);
      return m;
    }
  }
  return losses.front();
}

inline std::size_t argmin_first(const std::vector<Real>& v) {
  std::size_t k = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[k]) k = i;
  return k;
}

template <PerturbationObjective Obj>
std::vector<Real> all_losses(const Obj& obj, AttackVariant variant, const Matrix& delta) {
  const std::size_t count = variant == AttackVariant::oblivion ? 1 : obj.query_count();
  std::vector<Real> losses(count);
  for (std::size_t q = 0; q < count; ++q) losses[q] = obj.loss(delta, q);
  return losses;
}

}  // namespace detail

/// Projected gradient ascent on the variant's objective, starting from delta = 0:
///   oblivion  ascends the loss of query 0;
///   best      ascends the currently smallest-loss query (ties: first in set order);
///   average   ascends the mean loss over the set;
///   random    ascends one uniformly sampled query per iteration.
/// The returned delta is the best iterate by objective (min over the set for best
/// and random, mean for average, query 0 for oblivion).
template <PerturbationObjective Obj>
Perturbation run_attack(const Obj& obj, const AttackConfig& cfg, const AttackOptions& opts = {}) {
  cfg.validate();
  const std::vector<std::uint8_t>* mask = opts.row_mask;
  if (mask && mask->size() != obj.rows()) throw ShapeError("row mask length != perturbation rows");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_query(0, obj.query_count() - 1);

  Perturbation result;
  Matrix delta = Matrix::zeros(obj.rows(), obj.cols());
  Real best = -std::numeric_limits<Real>::infinity();
  std::vector<Real> losses;  // per-query losses at the current delta, when known

  if (opts.warm_start) {
    delta = project_l2(*opts.warm_start, cfg.budget);
    if (mask) detail::apply_row_mask(delta, *mask);
    losses = detail::all_losses(obj, cfg.variant, delta);
    best = detail::reduce_objective(cfg.variant, losses);
    result.trace.push_back(best);
    result.query_choices.push_back(kAllQueries);
    result.delta = delta;
    result.objective = best;
  }

  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    std::size_t chosen = 0;
    Matrix grad;
    switch (cfg.variant) {
      case AttackVariant::oblivion:
        grad = obj.loss_and_grad(delta, 0).grad;
        break;
      case AttackVariant::best:
        if (losses.empty()) losses = detail::all_losses(obj, cfg.variant, delta);
        chosen = detail::argmin_first(losses);
        grad = obj.loss_and_grad(delta, chosen).grad;
        break;
      case AttackVariant::average: {
        chosen = kAllQueries;
        grad = Matrix::zeros(obj.rows(), obj.cols());
        for (std::size_t q = 0; q < obj.query_count(); ++q) grad += obj.loss_and_grad(delta, q).grad;
        grad *= 1.0 / static_cast<Real>(obj.query_count());
        break;
      }
      case AttackVariant::random:
        chosen = pick_query(rng);
        grad = obj.loss_and_grad(delta, chosen).grad;
        break;
    }

    Matrix step = grad;
    if (mask) detail::apply_row_mask(step, *mask);
    Real rate = cfg.step;
    if (cfg.normalize) {
      const Real norm = frobenius_norm(step);
      rate = norm > 0.0 ? cfg.step / norm : 0.0;
    }
    Matrix next = delta;
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += rate * step[i];
    next = project_l2(next, cfg.budget);
    if (mask) detail::apply_row_mask(next, *mask);

    losses = detail::all_losses(obj, cfg.variant, next);
    const Real value = detail::reduce_objective(cfg.variant, losses);
    result.trace.push_back(value);
    result.query_choices.push_back(chosen);
    if (value > best) {
      best = value;
      result.delta = next;
      result.objective = value;
      result.best_iteration = result.trace.size() - 1;
    }
    if (opts.observer) {
      opts.observer(IterationRecord{t, &delta, chosen, &grad, &next, value});
    }
    delta = std::move(next);
  }
  return result;
}

template <PerturbationObjective Obj>
Perturbation attack_oblivion(const Obj& obj, AttackConfig cfg, const AttackOptions& opts = {}) {
  cfg.variant = AttackVariant::oblivion;
  return run_attack(obj, cfg, opts);
}

template <PerturbationObjective Obj>
Perturbation attack_sneak_best(const Obj& obj, AttackConfig cfg, const AttackOptions& opts = {}) {
  cfg.variant = AttackVariant::best;
  return run_attack(obj, cfg, opts);
}

template <PerturbationObjective Obj>
Perturbation attack_sneak_average(const Obj& obj, AttackConfig cfg, const AttackOptions& opts = {}) {
  cfg.variant = AttackVariant::average;
  return run_attack(obj, cfg, opts);
}

template <PerturbationObjective Obj>
Perturbation attack_sneak_random(const Obj& obj, AttackConfig cfg, const AttackOptions& opts = {}) {
  cfg.variant = AttackVariant::random;
  return run_attack(obj, cfg, opts);
}

}  // namespace sneak
