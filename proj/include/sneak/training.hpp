#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sneak/autodiff.hpp"
#include "sneak/model.hpp"
#include "sneak/synonyms.hpp"

namespace sneak {

/// One video-query pair in feature space.
struct LabeledSample {
  std::string id;
  Matrix features;
  Query query;
  std::optional<SynonymSet> synonyms;
  SpanLabel label;
};

/// Span loss of one sample; adds weight * d(loss)/d(params) into `grad_acc`.
inline Real accumulate_param_grad(const ModelParams& params, const Matrix& features, const Query& query,
                                  const SpanLabel& label, ModelParams& grad_acc, Real weight) {
  Tape tape;
  const BoundParams p = bind(tape, params, true);
  Var loss = span_loss(forward(p, tape.constant(features), query), label);
  tape.backward(loss);
  const auto vars = p.vars();
  auto dst = grad_acc.weights();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Matrix& g = vars[i].grad();
    Matrix& acc = *dst[i];
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += weight * g[k];
  }
  return loss.value()[0];
}

inline Real mean_span_loss(const ModelParams& params, std::span<const LabeledSample> corpus) {
  if (corpus.empty()) throw InputError("mean loss over an empty corpus");
  Real total = 0.0;
  for (const auto& s : corpus) total += span_loss(predict(params, s.features, s.query), s.label);
  return total / static_cast<Real>(corpus.size());
}

/// Adam with bias correction; `lr` is the base step size.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const ModelParams& like) : m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(ModelParams& params, const ModelParams& grad, Real lr) {
    constexpr Real kBeta1 = 0.9;
    constexpr Real kBeta2 = 0.999;
    constexpr Real kEps = 1e-8;
    ++t_;
    const Real c1 = 1.0 - std::pow(kBeta1, static_cast<Real>(t_));
    const Real c2 = 1.0 - std::pow(kBeta2, static_cast<Real>(t_));
    auto w = params.weights();
    auto g = grad.weights();
    auto m = m_.weights();
    auto v = v_.weights();
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (std::size_t k = 0; k < w[i]->size(); ++k) {
        const Real gk = (*g[i])[k];
        Real& mk = (*m[i])[k];
        Real& vk = (*v[i])[k];
        mk = kBeta1 * mk + (1.0 - kBeta1) * gk;
        vk = kBeta2 * vk + (1.0 - kBeta2) * gk * gk;
        (*w[i])[k] -= lr * (mk / c1) / (std::sqrt(vk / c2) + kEps);
      }
    }
  }

 private:
  ModelParams m_;
  ModelParams v_;
  std::uint64_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 60;
  Real lr = 0.01;
  std::size_t batch_size = 0;  // 0: full batch
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<Real> epoch_loss;  // mean loss at the start of each epoch, then after the last
  Real initial_loss = 0.0;
  Real best_loss = 0.0;
  std::size_t best_epoch = 0;    // index into epoch_loss
};

/// Batch order for one epoch: identity for full batch, seeded shuffle otherwise.
inline std::vector<std::size_t> epoch_order(std::size_t count, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  if (batch_size != 0 && batch_size < count) std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Minimize the mean span loss of the original queries. Returns the best parameters
/// seen at an epoch boundary (the initial parameters included).
inline TrainResult train_clean(ModelParams params, std::span<const LabeledSample> corpus, const TrainConfig& cfg) {
  if (corpus.empty()) throw InputError("training corpus is empty");
  if (!(cfg.lr > 0.0)) throw InputError("learning rate must be positive");
  std::mt19937_64 rng(cfg.seed);
  AdamState adam(params);
  const std::size_t batch = cfg.batch_size == 0 ? corpus.size() : std::min(cfg.batch_size, corpus.size());

  TrainResult result{params, {}, 0.0, 0.0, 0};
  result.initial_loss = mean_span_loss(params, corpus);
  result.best_loss = result.initial_loss;
  result.epoch_loss.push_back(result.initial_loss);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(corpus.size(), cfg.batch_size, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      ModelParams grad = params.zeros_like();
      const Real w = 1.0 / static_cast<Real>(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const auto& s = corpus[order[k]];
        accumulate_param_grad(params, s.features, s.query, s.label, grad, w);
      }
      adam.step(params, grad, cfg.lr);
    }
    const Real loss = mean_span_loss(params, corpus);
    result.epoch_loss.push_back(loss);
    if (loss < result.best_loss) {
      result.best_loss = loss;
      result.best_epoch = result.epoch_loss.size() - 1;
      result.params = params;
    }
  }
  return result;
}

}  // namespace sneak
