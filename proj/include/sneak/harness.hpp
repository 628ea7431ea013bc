#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sneak/defense.hpp"
#include "sneak/io.hpp"

namespace sneak {

/// Feature-space budgets scaled to the toy corpus (feature rows have norm ~0.9,
/// a whole feature matrix ~4.5).
inline constexpr Real kBudgetLow = 1.0;
inline constexpr Real kBudgetMid = 2.0;
inline constexpr Real kBudgetHigh = 4.0;

inline std::string member_name(std::size_t i) { return i == 0 ? "origin" : "q" + std::to_string(i); }

struct AttackSpec {
  AttackConfig attack = AttackConfig::with_budget(AttackVariant::best, kBudgetMid);
  std::optional<Real> keep_fraction;  // set: PSA pruning
  bool pixel = false;                 // also fit the perturbation in pixel space
  PixelFitConfig fit;
};

/// Query set an attack variant ascends: the original alone for oblivion.
inline std::vector<Query> attack_queries(const SynonymSet& set, AttackVariant v) {
  return v == AttackVariant::oblivion ? std::vector<Query>{set.original} : set.members();
}

inline void check_perturbation(const Perturbation& p, Real budget, const std::string& id) {
  if (frobenius_norm(p.delta) > budget + 1e-9) throw InvariantError(id + ": perturbation exceeds the budget");
  if (p.trace.empty()) throw InvariantError(id + ": empty objective trace");
  Real best = p.trace.front();
  for (Real v : p.trace) best = std::max(best, v);
  if (p.objective != best || p.trace[p.best_iteration] != best) {
    throw InvariantError(id + ": returned objective is not the best traced value");
  }
}

inline void check_mask(const TemporalMask& mask, const Matrix& delta, const std::string& id) {
  if (mask.kept_count() != kept_count_for(mask.keep_fraction, mask.size())) {
    throw InvariantError(id + ": mask cardinality differs from ceil(keep * n)");
  }
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    if (mask.keep[i]) continue;
    for (Real v : delta.row(i)) {
      if (v != 0.0) throw InvariantError(id + ": perturbation is nonzero off the mask support");
    }
  }
}

inline io::AttackRecord attack_record(const ModelParams& params, const DatasetRecord& rec,
                                      const FeatureExtractor& extractor, const AttackSpec& spec) {
  SpanObjective obj(params, rec.features, attack_queries(rec.synonyms, spec.attack.variant), rec.label);
  io::AttackRecord out;
  out.id = rec.id;
  out.variant = std::string(to_string(spec.attack.variant));
  out.budget = spec.attack.budget;
  if (spec.keep_fraction) {
    PrunedAttack pr = attack_sneak_pruned(obj, spec.attack, *spec.keep_fraction);
    check_mask(pr.mask, pr.perturbation.delta, rec.id);
    out.perturbation = std::move(pr.perturbation);
    out.mask = std::move(pr.mask);
  } else {
    out.perturbation = run_attack(obj, spec.attack);
  }
  check_perturbation(out.perturbation, spec.attack.budget, rec.id);
  if (spec.pixel) {
    PixelFit fit = fit_pixel_perturbation(extractor, rec.video, rec.features + out.perturbation.delta, spec.fit);
    if (fit.final_mse > fit.initial_mse) throw InvariantError(rec.id + ": pixel fit ended above its start");
    out.pixel_features = extractor.extract(apply_pixel_perturbation(rec.video, fit.delta));
    out.pixel_delta = fit.delta;
    out.fit = std::move(fit);
  }
  return out;
}

// ---------------------------------------------------------------- evaluation

struct IouRow {
  std::string id;
  std::size_t member = 0;  // 0 = original query
  Span predicted;
  Span label;
  Real iou = 0.0;
};

struct EvalSummary {
  std::string config_hash;
  std::string attack = "none";
  std::string space = "feature";
  std::size_t samples = 0;
  std::vector<Real> miou;  // per set member, fraction in [0, 1]
  Real mean_delta_norm = 0.0;
  Real mean_objective = 0.0;

  Real synonym_miou() const {
    if (miou.size() < 2) return 0.0;
    Real s = 0.0;
    for (std::size_t i = 1; i < miou.size(); ++i) s += miou[i];
    return s / static_cast<Real>(miou.size() - 1);
  }
  Real overall_miou() const {
    Real s = 0.0;
    for (Real m : miou) s += m;
    return miou.empty() ? 0.0 : s / static_cast<Real>(miou.size());
  }
};

struct EvalReport {
  std::vector<IouRow> rows;
  EvalSummary summary;
};

enum class EvalSpace { feature, pixel };

/// Decode every set member on the (possibly attacked) features of each record.
inline EvalReport evaluate(const ModelParams& params, const std::vector<DatasetRecord>& records,
                           const io::AttackResults* attacks = nullptr, EvalSpace space = EvalSpace::feature) {
  if (records.empty()) throw InputError("evaluation over an empty dataset");
  std::unordered_map<std::string, const io::AttackRecord*> by_id;
  if (attacks) {
    for (const auto& a : attacks->records) by_id[a.id] = &a;
  }
  EvalReport rep;
  const std::size_t members = records.front().synonyms.size();
  std::vector<std::vector<SpanPair>> pairs(members);
  for (const auto& rec : records) {
    if (rec.features.cols() != params.dims.feature_dim) {
      throw ConfigError("dataset feature_dim " + std::to_string(rec.features.cols()) + " != model feature_dim " +
                        std::to_string(params.dims.feature_dim));
    }
    if (rec.synonyms.size() != members) throw InvariantError(rec.id + ": synonym set size differs");
    Matrix input = rec.features;
    if (attacks) {
      auto it = by_id.find(rec.id);
      if (it == by_id.end()) throw InvariantError("no attack result for record " + rec.id);
      const io::AttackRecord& a = *it->second;
      if (space == EvalSpace::pixel) {
        if (!a.pixel_delta) throw ConfigError("attack results carry no pixel-space fit");
        input = a.pixel_features;
      } else {
        input = rec.features + a.perturbation.delta;
      }
      rep.summary.mean_delta_norm += frobenius_norm(a.perturbation.delta);
      rep.summary.mean_objective += a.perturbation.objective;
    }
    for (std::size_t m = 0; m < members; ++m) {
      const Span pred = predict(params, input, rec.synonyms.member(m)).decoded;
      const Real v = iou(pred, rec.label);
      rep.rows.push_back({rec.id, m, pred, rec.label, v});
      pairs[m].push_back({pred, rec.label});
    }
  }
  rep.summary.samples = records.size();
  for (auto& p : pairs) rep.summary.miou.push_back(mean_iou(p));
  if (attacks) {
    rep.summary.attack = attacks->config.value("attack.variant", std::string("?"));
    rep.summary.config_hash = attacks->config_hash;
    rep.summary.mean_delta_norm /= static_cast<Real>(records.size());
    rep.summary.mean_objective /= static_cast<Real>(records.size());
  }
  rep.summary.space = space == EvalSpace::pixel ? "pixel" : "feature";
  return rep;
}

/// Percent with three decimals, as printed in reports.
inline std::string percent3(Real fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", 100.0 * fraction);
  return buf;
}

inline std::string exact(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string iou_csv(const std::vector<IouRow>& rows) {
  std::string out = "id,member,query,pred_start,pred_end,label_start,label_end,iou\n";
  for (const auto& r : rows) {
    out += r.id + "," + std::to_string(r.member) + "," + member_name(r.member) + "," +
           std::to_string(r.predicted.start) + "," + std::to_string(r.predicted.end) + "," +
           std::to_string(r.label.start) + "," + std::to_string(r.label.end) + "," + exact(r.iou) + "\n";
  }
  return out;
}

inline std::vector<IouRow> parse_iou_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line.rfind("id,member,", 0) != 0) throw ParseError("missing iou.csv header", 1);
  std::vector<IouRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw ParseError("expected 8 fields", lineno);
    try {
      rows.push_back({f[0], std::stoul(f[1]), {std::stoul(f[3]), std::stoul(f[4])}, {std::stoul(f[5]), std::stoul(f[6])},
                      io::parse_real(f[7])});
    } catch (const std::logic_error&) {
      throw ParseError("malformed field", lineno);
    }
  }
  return rows;
}

inline nlohmann::json summary_json(const EvalSummary& s) {
  nlohmann::json miou = nlohmann::json::object(), pct = nlohmann::json::object();
  for (std::size_t i = 0; i < s.miou.size(); ++i) {
    miou[member_name(i)] = s.miou[i];
    pct[member_name(i)] = percent3(s.miou[i]);
  }
  return {{"format", "sneak-eval-summary"},
          {"config_hash", s.config_hash},
          {"attack", s.attack},
          {"space", s.space},
          {"samples", s.samples},
          {"rows", s.samples * s.miou.size()},
          {"miou", miou},
          {"miou_percent", pct},
          {"synonym_miou_percent", percent3(s.synonym_miou())},
          {"overall_miou_percent", percent3(s.overall_miou())},
          {"mean_delta_norm", s.mean_delta_norm},
          {"mean_objective", s.mean_objective}};
}

inline EvalSummary summary_from_json(const nlohmann::json& j) {
  EvalSummary s;
  s.config_hash = j.at("config_hash");
  s.attack = j.at("attack");
  s.space = j.at("space");
  s.samples = j.at("samples");
  for (std::size_t i = 0; j.at("miou").contains(member_name(i)); ++i) s.miou.push_back(j["miou"][member_name(i)]);
  s.mean_delta_norm = j.at("mean_delta_norm");
  s.mean_objective = j.at("mean_objective");
  return s;
}

/// Every summary value must equal the mean of the per-sample rows it summarizes.
inline void check_summary(const EvalSummary& s, const std::vector<IouRow>& rows) {
  if (rows.size() != s.samples * s.miou.size()) throw InvariantError("summary row count disagrees with iou.csv");
  std::vector<Real> sum(s.miou.size(), 0.0);
  std::vector<std::size_t> count(s.miou.size(), 0);
  for (const auto& r : rows) {
    if (r.member >= sum.size()) throw InvariantError("iou.csv member index out of range");
    sum[r.member] += r.iou;
    ++count[r.member];
  }
  for (std::size_t m = 0; m < sum.size(); ++m) {
    if (count[m] != s.samples) throw InvariantError("iou.csv has uneven rows per query");
    const Real mean = sum[m] / static_cast<Real>(count[m]);
    if (std::abs(mean - s.miou[m]) > 1e-12) {
      throw InvariantError("summary mIoU for " + member_name(m) + " differs from its per-sample rows");
    }
  }
}

/// Table of runs: one row per summary, mIoU (%) per set member plus the q1..q5 and
/// all-member averages.
inline std::string report_csv(const std::vector<std::pair<std::string, EvalSummary>>& runs) {
  std::size_t members = 0;
  for (const auto& [_, s] : runs) members = std::max(members, s.miou.size());
  std::string out = "run,attack,space,samples";
  for (std::size_t i = 0; i < members; ++i) out += "," + member_name(i);
  out += ",synonym_avg,overall_avg,mean_delta_norm\n";
  for (const auto& [name, s] : runs) {
    out += name + "," + s.attack + "," + s.space + "," + std::to_string(s.samples);
    for (std::size_t i = 0; i < members; ++i) out += "," + (i < s.miou.size() ? percent3(s.miou[i]) : std::string());
    out += "," + percent3(s.synonym_miou()) + "," + percent3(s.overall_miou()) + "," + exact(s.mean_delta_norm) + "\n";
  }
  return out;
}

inline std::string report_markdown(const std::vector<std::pair<std::string, EvalSummary>>& runs) {
  std::size_t members = 0;
  for (const auto& [_, s] : runs) members = std::max(members, s.miou.size());
  std::string out = "| run | attack | space |";
  std::string rule = "|---|---|---|";
  for (std::size_t i = 0; i < members; ++i) {
    out += " " + member_name(i) + " |";
    rule += "---:|";
  }
  out += " q avg |\n" + rule + "---:|\n";
  for (const auto& [name, s] : runs) {
    out += "| " + name + " | " + s.attack + " | " + s.space + " |";
    for (std::size_t i = 0; i < members; ++i) out += " " + (i < s.miou.size() ? percent3(s.miou[i]) : "") + " |";
    out += " " + percent3(s.synonym_miou()) + " |\n";
  }
  return out;
}

}  // namespace sneak
