#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sneak/extractor.hpp"
#include "sneak/model.hpp"
#include "sneak/synonyms.hpp"
#include "sneak/training.hpp"

namespace sneak {

/// Query template: "person <verb> the <adjective> <object>".
struct ActionTemplate {
  std::string verb;
  std::string adjective;
  std::string object;
};

inline const std::vector<ActionTemplate>& default_actions() {
  static const std::vector<ActionTemplate> kActions = {
      {"opens", "wooden", "door"},     {"slices", "fresh", "cucumber"}, {"pours", "hot", "water"},
      {"washes", "dirty", "plate"},    {"stirs", "thick", "sauce"},     {"peels", "yellow", "banana"},
  };
  return kActions;
}

inline const Vocabulary& default_vocabulary() {
  static const Vocabulary kVocab(std::vector<std::string>{
      "person",  "someone",  "individual", "the",      "a",
      "opens",   "unlocks",  "unseals",    "wooden",   "timber",  "oaken",    "door",    "gate",   "portal",
      "slices",  "cuts",     "chops",      "fresh",    "ripe",    "crisp",    "cucumber", "gherkin", "zucchini",
      "pours",   "decants",  "spills",     "hot",      "warm",    "heated",   "water",   "liquid", "fluid",
      "washes",  "rinses",   "cleans",     "dirty",    "soiled",  "grimy",    "plate",   "dish",   "platter",
      "stirs",   "mixes",    "whisks",     "thick",    "dense",   "heavy",    "sauce",   "gravy",  "broth",
      "peels",   "skins",    "pares",      "yellow",   "golden",  "amber",    "banana",  "plantain", "fruit",
      "then",    "slowly",   "quickly",    "kitchen",  "<unk>",
  });
  return kVocab;
}

inline const char* default_lexicon_text() {
  return R"(# token: synonym, synonym, ...
person: someone, individual
opens: unlocks, unseals
wooden: timber, oaken
door: gate, portal
slices: cuts, chops
fresh: ripe, crisp
cucumber: gherkin, zucchini
pours: decants, spills
hot: warm, heated
water: liquid, fluid
washes: rinses, cleans
dirty: soiled, grimy
plate: dish, platter
stirs: mixes, whisks
thick: dense, heavy
sauce: gravy, broth
peels: skins, pares
yellow: golden, amber
banana: plantain, fruit
)";
}

inline SynonymLexicon default_lexicon() {
  std::istringstream in(default_lexicon_text());
  return SynonymLexicon::parse(in, default_vocabulary());
}

struct CorpusConfig {
  VideoDims video;
  std::size_t feature_dim = 16;
  Real extractor_gain = 1.5;
  Real amplitude = 0.15;        // in-span pattern strength, pixels
  Real noise = 0.05;            // per-pixel Gaussian noise
  std::size_t min_span = 3;
  std::size_t max_span = 8;
  Real distractor_prob = 0.8;   // chance of a second, unrelated action span
  std::size_t variant_count = kDefaultVariantCount;
};

/// A labelled synthetic sample with its pixel video.
struct DatasetRecord {
  std::string id;
  std::size_t action = 0;
  PixelVideo video;
  Matrix features;  // extract(video)
  SynonymSet synonyms;
  SpanLabel label;

  LabeledSample sample() const { return {id, features, synonyms.original, synonyms, label}; }
};

inline std::vector<LabeledSample> to_samples(const std::vector<DatasetRecord>& records) {
  std::vector<LabeledSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.sample());
  return out;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the pair.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Everything shared by the splits of one synthetic dataset: extractor, action
/// patterns, vocabulary and lexicon.
///
/// In-span clips carry the query's action pattern; the first in-span clip adds a
/// shared onset marker and the last an offset marker. Off-span clips show a per-video
/// background scene, and most videos also contain a distractor span of another action.
class SyntheticWorld {
 public:
  SyntheticWorld(std::uint64_t seed, CorpusConfig cfg = {}, Vocabulary vocab = default_vocabulary(),
                 SynonymLexicon lexicon = default_lexicon())
      : seed_(seed),
        cfg_(cfg),
        vocab_(std::move(vocab)),
        lexicon_(std::move(lexicon)),
        extractor_(cfg.video, cfg.feature_dim, mix_seed(seed, 0), cfg.extractor_gain) {
    cfg_.video.validate();
    if (cfg_.min_span < 2 || cfg_.max_span < cfg_.min_span || 2 * cfg_.max_span + 1 > cfg_.video.clip_count()) {
      throw InputError("span length range does not fit the clip count");
    }
    std::mt19937_64 rng(mix_seed(seed, 1));
    const std::size_t k = cfg_.video.clip_size();
    auto pattern = [&] {
      std::vector<Real> p(k);
      std::bernoulli_distribution coin(0.5);
      for (auto& v : p) v = coin(rng) ? 1.0 : -1.0;
      return p;
    };
    for (const auto& a : default_actions()) {
      templates_.push_back(vocab_.encode({"person", a.verb, "the", a.adjective, a.object}));
      action_patterns_.push_back(pattern());
    }
    onset_ = pattern();
    offset_ = pattern();
    for (int s = 0; s < 3; ++s) scenes_.push_back(pattern());
    // Every template must admit a full synonym set.
    for (const auto& t : templates_) generate_synonym_set(t, lexicon_, 0, cfg_.variant_count, &vocab_);
  }

  std::uint64_t seed() const { return seed_; }
  const CorpusConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const SynonymLexicon& lexicon() const { return lexicon_; }
  const FeatureExtractor& extractor() const { return extractor_; }
  std::size_t action_count() const { return templates_.size(); }
  const Query& action_query(std::size_t a) const { return templates_.at(a); }
  const std::vector<Real>& action_pattern(std::size_t a) const { return action_patterns_.at(a); }
  const std::vector<Real>& onset_pattern() const { return onset_; }
  const std::vector<Real>& offset_pattern() const { return offset_; }

  DatasetRecord sample(std::string id, std::mt19937_64& rng) const {
    const std::size_t n = cfg_.video.clip_count();
    const std::size_t k = cfg_.video.clip_size();
    std::uniform_int_distribution<std::size_t> pick_action(0, templates_.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_len(cfg_.min_span, cfg_.max_span);
    std::uniform_int_distribution<std::size_t> pick_scene(0, scenes_.size() - 1);
    std::bernoulli_distribution has_distractor(cfg_.distractor_prob);
    std::normal_distribution<Real> normal(0.0, 1.0);

    DatasetRecord rec;
    rec.id = std::move(id);
    rec.action = pick_action(rng);
    const std::size_t len = pick_len(rng);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, n - len)(rng);
    rec.label = {start, start + len - 1};

    std::vector<int> owner(n, -1);  // action index per clip, -1 for background
    std::vector<Span> spans{rec.label};
    for (std::size_t i = rec.label.start; i <= rec.label.end; ++i) owner[i] = static_cast<int>(rec.action);
    if (has_distractor(rng)) {
      std::size_t other = pick_action(rng);
      if (other == rec.action) other = (other + 1) % templates_.size();
      const std::size_t dlen = pick_len(rng);
      // Candidate starts leaving a gap of at least one clip around the target span.
      std::vector<std::size_t> starts;
      for (std::size_t s = 0; s + dlen <= n; ++s) {
        const std::size_t e = s + dlen - 1;
        if (e + 1 < rec.label.start || s > rec.label.end + 1) starts.push_back(s);
      }
      if (!starts.empty()) {
        const std::size_t s = starts[std::uniform_int_distribution<std::size_t>(0, starts.size() - 1)(rng)];
        for (std::size_t i = s; i < s + dlen; ++i) owner[i] = static_cast<int>(other);
        spans.push_back({s, s + dlen - 1});
      }
    }
    const auto& scene = scenes_[pick_scene(rng)];

    std::vector<Real> pixels(n * k);
    const Real amp = cfg_.amplitude;
    for (std::size_t i = 0; i < n; ++i) {
      bool onset = false, offset = false;
      for (const auto& s : spans) {
        onset = onset || i == s.start;
        offset = offset || i == s.end;
      }
      Real* clip = pixels.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        Real v = 0.5;
        if (owner[i] < 0) {
          v += 0.7 * amp * scene[p];
        } else {
          v += amp * action_patterns_[static_cast<std::size_t>(owner[i])][p];
          if (onset) v += amp * onset_[p];
          if (offset) v += amp * offset_[p];
        }
        v += cfg_.noise * normal(rng);
        // 8-bit quantization, as decoded video would be.
        clip[p] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
      }
    }
    rec.video = PixelVideo(cfg_.video, std::move(pixels));
    rec.features = extractor_.extract(rec.video);

    std::uniform_int_distribution<std::uint64_t> seed_dist;
    Query query = templates_[rec.action];
    if (std::bernoulli_distribution(0.5)(rng)) query[2] = vocab_.id("a");
    rec.synonyms = generate_synonym_set(query, lexicon_, seed_dist(rng), cfg_.variant_count, &vocab_);
    return rec;
  }

  /// Model-free span estimate from pixels: correlate every clip with the action
  /// pattern, subtract half the planted amplitude, and take the maximum-sum window.
  Span correlator_span(const PixelVideo& video, std::size_t action) const {
    const Matrix& clips = video.clips();
    const auto& pattern = action_patterns_.at(action);
    const std::size_t n = clips.rows(), k = clips.cols();
    std::vector<Real> score(n);
    for (std::size_t i = 0; i < n; ++i) {
      Real c = 0.0;
      for (std::size_t p = 0; p < k; ++p) c += (clips(i, p) - 0.5) * pattern[p];
      score[i] = c / static_cast<Real>(k) - 0.5 * cfg_.amplitude;
    }
    Span best{0, 0};
    Real best_sum = -std::numeric_limits<Real>::infinity();
    for (std::size_t s = 0; s < n; ++s) {
      Real sum = 0.0;
      for (std::size_t e = s; e < n; ++e) {
        sum += score[e];
        if (sum > best_sum) {
          best_sum = sum;
          best = {s, e};
        }
      }
    }
    return best;
  }

  /// `count` records drawn from an independent stream per split.
  std::vector<DatasetRecord> generate(std::size_t count, std::uint64_t split_seed, const std::string& prefix) const {
    std::mt19937_64 rng(mix_seed(seed_, 100 + split_seed));
    std::vector<DatasetRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::string id = std::to_string(i);
      id = prefix + "-" + std::string(id.size() < 5 ? 5 - id.size() : 0, '0') + id;
      out.push_back(sample(std::move(id), rng));
    }
    return out;
  }

 private:
  std::uint64_t seed_;
  CorpusConfig cfg_;
  Vocabulary vocab_;
  SynonymLexicon lexicon_;
  FeatureExtractor extractor_;
  std::vector<Query> templates_;
  std::vector<std::vector<Real>> action_patterns_;
  std::vector<Real> onset_;
  std::vector<Real> offset_;
  std::vector<std::vector<Real>> scenes_;
};

}  // namespace sneak
