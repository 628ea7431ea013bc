#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sneak/sneak.hpp"

namespace sneak::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, Real lo = -1.0, Real hi = 1.0) {
  std::uniform_real_distribution<Real> u(lo, hi);
  Matrix m(r, c);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

/// Small model for gradient checks: d = 3, e = 3, h = 4, vocab = 6, context radius 1.
inline ModelDims tiny_dims(std::size_t radius = 1) { return ModelDims{3, 3, 4, 6, radius}; }

inline Query random_query(std::size_t len, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(vocab - 1));
  Query q(len);
  for (auto& t : q) t = pick(rng);
  return q;
}

inline SpanLabel random_label(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t a = pick(rng), b = pick(rng);
  if (a > b) std::swap(a, b);
  return {a, b};
}

/// Small labelled corpus from the default synthetic world.
struct ToyCorpus {
  SyntheticWorld world;
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;

  ToyCorpus(std::uint64_t seed, std::size_t n_train, std::size_t n_test)
      : world(seed), train(world.generate(n_train, 1, "train")), test(world.generate(n_test, 2, "test")) {}
};

inline ModelParams train_toy(const ToyCorpus& c, std::uint64_t seed, std::size_t epochs = 60) {
  const auto samples = to_samples(c.train);
  return train_clean(ModelParams::init({}, seed), samples, TrainConfig{epochs, 0.01, 0, seed}).params;
}

/// Corpus plus a clean model trained on it, built once per test binary.
struct TrainedToy {
  ToyCorpus corpus;
  ModelParams params;
};

inline const TrainedToy& trained_toy() {
  static const TrainedToy toy = [] {
    ToyCorpus c(5, 200, 100);
    ModelParams p = train_toy(c, 5, 40);
    return TrainedToy{std::move(c), std::move(p)};
  }();
  return toy;
}

}  // namespace sneak::testing
