#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sneak/attack.hpp"
#include "sneak/corpus.hpp"
#include "sneak/psa.hpp"
#include "sneak/training.hpp"

namespace sneak {

/// What an adversarial-training run feeds the model.
///   sneak         even epochs: random-variant SNEAK perturbation; queries resampled from Q
///   pgd_only      even epochs: oblivion PGD on the original query; original query only
///   synonym_only  no perturbation; queries resampled from Q
///   sneak_psa     as sneak, with the perturbation pruned to the top rows
enum class DefensePreset { sneak, pgd_only, synonym_only, sneak_psa };

inline std::string_view to_string(DefensePreset p) {
  switch (p) {
    case DefensePreset::sneak: return "sneak";
    case DefensePreset::pgd_only: return "pgd_only";
    case DefensePreset::synonym_only: return "synonym_only";
    case DefensePreset::sneak_psa: return "sneak_psa";
  }
  return "?";
}

inline DefensePreset parse_defense_preset(std::string_view s) {
  if (s == "sneak") return DefensePreset::sneak;
  if (s == "pgd_only" || s == "pgd") return DefensePreset::pgd_only;
  if (s == "synonym_only" || s == "synonym") return DefensePreset::synonym_only;
  if (s == "sneak_psa" || s == "psa") return DefensePreset::sneak_psa;
  throw InputError("unknown defense preset '" + std::string(s) + "'");
}

struct DefenseConfig {
  DefensePreset preset = DefensePreset::sneak;
  std::size_t epochs = 60;
  Real lr = 0.01;
  std::size_t batch_size = 0;  // 0: full batch
  std::uint64_t seed = 0;
  AttackConfig attack = AttackConfig::with_budget(AttackVariant::random, 1.0, 10);
  Real keep_fraction = 0.25;   // sneak_psa only

  bool resamples_queries() const { return preset != DefensePreset::pgd_only; }
  bool perturbs() const { return preset != DefensePreset::synonym_only; }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-indexed
  bool perturbed = false;
  std::size_t clean_videos = 0;
  std::size_t perturbed_videos = 0;
  Real loss = 0.0;  // mean span loss over consumed inputs, before each batch update
  Real mean_delta_norm = 0.0;
  Real max_delta_norm = 0.0;
};

struct DefenseResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

/// Adversarial training: odd epochs see clean videos, even epochs see videos
/// perturbed against the parameters at the start of that epoch.
inline DefenseResult adversarial_train(ModelParams params, std::span<const LabeledSample> corpus,
                                       const DefenseConfig& cfg) {
  if (corpus.empty()) throw InputError("training corpus is empty");
  if (cfg.epochs < 1) throw InputError("adversarial training needs at least one epoch");
  if (!(cfg.lr > 0.0)) throw InputError("learning rate must be positive");
  for (const auto& s : corpus) {
    if (!s.synonyms) throw InputError("sample '" + s.id + "' has no synonym set");
  }
  cfg.attack.validate();

  // Independent streams: changing the attack cannot shift query sampling or batching.
  std::mt19937_64 query_rng(mix_seed(cfg.seed, 10));
  std::mt19937_64 attack_rng(mix_seed(cfg.seed, 11));
  std::mt19937_64 order_rng(mix_seed(cfg.seed, 12));

  AdamState adam(params);
  const std::size_t batch = cfg.batch_size == 0 ? corpus.size() : std::min(cfg.batch_size, corpus.size());
  DefenseResult result;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool perturbed = epoch % 2 == 0;
    EpochLog entry{epoch, perturbed};

    std::vector<const Query*> queries(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const SynonymSet& set = *corpus[i].synonyms;
      if (cfg.resamples_queries()) {
        queries[i] = &set.member(std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(query_rng));
      } else {
        queries[i] = &set.original;
      }
    }

    std::vector<Matrix> inputs;
    inputs.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& s = corpus[i];
      if (!perturbed) {
        inputs.push_back(s.features);
        continue;
      }
      Matrix delta = Matrix::zeros_like(s.features);
      if (cfg.perturbs()) {
        AttackConfig acfg = cfg.attack;
        acfg.seed = attack_rng();
        if (cfg.preset == DefensePreset::pgd_only) {
          SpanObjective obj(params, s.features, {s.synonyms->original}, s.label);
          delta = attack_oblivion(obj, acfg).delta;
        } else {
          SpanObjective obj(params, s.features, s.synonyms->members(), s.label);
          acfg.variant = AttackVariant::random;
          delta = cfg.preset == DefensePreset::sneak_psa
                      ? attack_sneak_pruned(obj, acfg, cfg.keep_fraction).perturbation.delta
                      : run_attack(obj, acfg).delta;
        }
      }
      const Real norm = frobenius_norm(delta);
      entry.mean_delta_norm += norm;
      entry.max_delta_norm = std::max(entry.max_delta_norm, norm);
      inputs.push_back(s.features + delta);
    }
    (perturbed ? entry.perturbed_videos : entry.clean_videos) = corpus.size();
    if (perturbed) entry.mean_delta_norm /= static_cast<Real>(corpus.size());

    const auto order = epoch_order(corpus.size(), cfg.batch_size, order_rng);
    Real total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      ModelParams grad = params.zeros_like();
      const Real w = 1.0 / static_cast<Real>(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t i = order[k];
        total += accumulate_param_grad(params, inputs[i], *queries[i], corpus[i].label, grad, w);
      }
      adam.step(params, grad, cfg.lr);
    }
    entry.loss = total / static_cast<Real>(corpus.size());
    result.log.push_back(entry);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace sneak
