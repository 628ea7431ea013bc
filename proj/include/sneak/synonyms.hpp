#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sneak/errors.hpp"
#include "sneak/model.hpp"

namespace sneak {

/// Bidirectional word <-> token id table.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], static_cast<TokenId>(i)).second) {
        throw VocabularyError("duplicate vocabulary word '" + words_[i] + "'");
      }
    }
  }

  std::size_t size() const { return words_.size(); }
  bool contains(const std::string& w) const { return index_.contains(w); }
  TokenId id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) throw VocabularyError("unknown word '" + w + "'");
    return it->second;
  }
  const std::string& word(TokenId t) const {
    if (t >= words_.size()) throw VocabularyError("token id " + std::to_string(t) + " outside vocabulary");
    return words_[t];
  }
  const std::vector<std::string>& words() const { return words_; }

  Query encode(const std::vector<std::string>& words) const {
    Query q;
    q.reserve(words.size());
    for (const auto& w : words) q.push_back(id(w));
    return q;
  }
  std::vector<std::string> decode(const Query& q) const {
    std::vector<std::string> out;
    out.reserve(q.size());
    for (TokenId t : q) out.push_back(word(t));
    return out;
  }
  std::string join(const Query& q) const {
    std::string s;
    for (TokenId t : q) {
      if (!s.empty()) s += ' ';
      s += word(t);
    }
    return s;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// token -> interchangeable tokens. Self-mappings are dropped; symmetry is not required.
class SynonymLexicon {
 public:
  SynonymLexicon() = default;

  void add(TokenId token, const std::vector<TokenId>& synonyms) {
    auto& dst = entries_[token];
    for (TokenId s : synonyms) {
      if (s != token && std::find(dst.begin(), dst.end(), s) == dst.end()) dst.push_back(s);
    }
    if (dst.empty()) entries_.erase(token);
  }

  const std::vector<TokenId>& synonyms(TokenId token) const {
    static const std::vector<TokenId> kNone;
    auto it = entries_.find(token);
    return it == entries_.end() ? kNone : it->second;
  }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::map<TokenId, std::vector<TokenId>>& entries() const { return entries_; }

  /// Parse `token: syn1, syn2, ...` lines. Blank lines and `#` comments are skipped.
  static SynonymLexicon parse(std::istream& in, const Vocabulary& vocab) {
    SynonymLexicon lex;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string{};
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto colon = line.find(':');
      if (colon == std::string::npos) throw ParseError("expected 'token: syn1, syn2, ...'", lineno);
      const std::string head = trim(line.substr(0, colon));
      if (head.empty() || head.find_first_of(" \t,") != std::string::npos) {
        throw ParseError("malformed head token '" + head + "'", lineno);
      }
      if (!vocab.contains(head)) throw ParseError("'" + head + "' is not in the vocabulary", lineno);
      if (line.back() == ',') throw ParseError("trailing comma after the last synonym", lineno);
      std::vector<TokenId> syns;
      std::stringstream rest(line.substr(colon + 1));
      std::string item;
      while (std::getline(rest, item, ',')) {
        item = trim(item);
        if (item.empty() || item.find_first_of(" \t:") != std::string::npos) {
          throw ParseError("malformed synonym '" + item + "'", lineno);
        }
        if (!vocab.contains(item)) throw ParseError("'" + item + "' is not in the vocabulary", lineno);
        syns.push_back(vocab.id(item));
      }
      if (syns.empty()) throw ParseError("no synonyms listed for '" + head + "'", lineno);
      lex.add(vocab.id(head), syns);
    }
    return lex;
  }

 private:
  std::map<TokenId, std::vector<TokenId>> entries_;
};

/// Lexicon in the text format `parse` reads, one entry per line in token-id order.
inline std::string to_text(const SynonymLexicon& lexicon, const Vocabulary& vocab) {
  std::string out;
  for (const auto& [token, syns] : lexicon.entries()) {
    out += vocab.word(token) + ":";
    for (std::size_t i = 0; i < syns.size(); ++i) out += (i ? ", " : " ") + vocab.word(syns[i]);
    out += '\n';
  }
  return out;
}

/// Original query followed by its substituted variants.
struct SynonymSet {
  Query original;
  std::vector<Query> variants;
  std::vector<std::size_t> swap_counts;  // positions substituted, per variant

  std::size_t size() const { return 1 + variants.size(); }
  /// All members, original first.
  std::vector<Query> members() const {
    std::vector<Query> all;
    all.reserve(size());
    all.push_back(original);
    all.insert(all.end(), variants.begin(), variants.end());
    return all;
  }
  const Query& member(std::size_t i) const { return i == 0 ? original : variants.at(i - 1); }
  friend bool operator==(const SynonymSet&, const SynonymSet&) = default;
};

inline constexpr std::size_t kDefaultVariantCount = 5;
inline constexpr std::size_t kMinSwaps = 2;

inline std::size_t hamming_distance(const Query& a, const Query& b) {
  if (a.size() != b.size()) return std::max(a.size(), b.size());
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

/// Number of distinct variants substituting at least `min_swaps` positions, where
/// position p offers `choices[p]` alternatives. Saturates at UINT64_MAX.
inline std::uint64_t count_feasible_variants(const std::vector<std::size_t>& choices,
                                             std::size_t min_swaps = kMinSwaps) {
  // ways[k] = assignments with exactly k substitutions (k capped at min_swaps).
  std::vector<long double> ways(min_swaps + 1, 0.0L);
  ways[0] = 1.0L;
  for (std::size_t c : choices) {
    std::vector<long double> next(ways.size(), 0.0L);
    for (std::size_t k = 0; k < ways.size(); ++k) {
      next[k] += ways[k];
      next[std::min(k + 1, min_swaps)] += ways[k] * static_cast<long double>(c);
    }
    ways = std::move(next);
  }
  const long double total = ways[min_swaps];
  if (total >= 1.8e19L) return UINT64_MAX;
  return static_cast<std::uint64_t>(total + 0.5L);
}

/// Draw `variant_count` distinct variants of `query`, each substituting at least two
/// positions, uniformly without replacement from all such variants.
inline SynonymSet generate_synonym_set(const Query& query, const SynonymLexicon& lexicon,
                                       std::uint64_t seed, std::size_t variant_count = kDefaultVariantCount,
                                       const Vocabulary* vocab = nullptr) {
  auto describe = [&] {
    return vocab ? "'" + vocab->join(query) + "'" : std::string("of length ") + std::to_string(query.size());
  };
  std::vector<std::size_t> positions;
  std::vector<std::size_t> choices;
  for (std::size_t i = 0; i < query.size(); ++i) {
    const auto& syns = lexicon.synonyms(query[i]);
    if (!syns.empty()) {
      positions.push_back(i);
      choices.push_back(syns.size());
    }
  }
  if (positions.size() < kMinSwaps) {
    throw GenerationError("query " + describe() + " has " + std::to_string(positions.size()) +
                          " substitutable positions; at least 2 required");
  }
  const std::uint64_t feasible = count_feasible_variants(choices);
  if (feasible < variant_count) {
    throw GenerationError("query " + describe() + " admits only " + std::to_string(feasible) +
                          " distinct variants with >= 2 swaps; " + std::to_string(variant_count) +
                          " required");
  }

  // Rejection sampling over per-position choices (0 = keep) is uniform on the
  // feasible set; rejecting repeats makes the draw without replacement.
  std::mt19937_64 rng(seed);
  SynonymSet set{query, {}, {}};
  std::set<Query> seen;
  while (set.variants.size() < variant_count) {
    Query v = query;
    std::size_t swaps = 0;
    for (std::size_t k = 0; k < positions.size(); ++k) {
      std::uniform_int_distribution<std::size_t> pick(0, choices[k]);
      const std::size_t c = pick(rng);
      if (c > 0) {
        v[positions[k]] = lexicon.synonyms(query[positions[k]])[c - 1];
        ++swaps;
      }
    }
    if (swaps < kMinSwaps || !seen.insert(v).second) continue;
    set.variants.push_back(std::move(v));
    set.swap_counts.push_back(swaps);
  }
  return set;
}

}  // namespace sneak
