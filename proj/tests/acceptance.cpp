// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sneak/cli.hpp"
#include "support.hpp"

using namespace sneak;
using namespace sneak::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};
constexpr std::size_t kTrainCount = 300;
constexpr std::size_t kTestCount = 200;
constexpr std::size_t kIterations = 50;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::vector<std::pair<int, Outcome>> g_results;

void report(int id, const char* title, const Outcome& o, double secs) {
  std::printf("criterion %2d %s: %s (%.1fs) %s\n", id, o.pass ? "PASS" : "FAIL", title, secs, o.detail.c_str());
  std::fflush(stdout);
  g_results.emplace_back(id, o);
}

void run_criterion(int id, const char* title, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, title, o, seconds_since(t0));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- shared per-seed state

struct SeedRun {
  std::uint64_t seed;
  SyntheticWorld world;
  std::vector<LabeledSample> train;
  std::vector<DatasetRecord> test;
  ModelParams clean;
  std::size_t attack_runs = 0;  // attacks whose best-iterate contract was checked

  explicit SeedRun(std::uint64_t s)
      : seed(s), world(s), train(to_samples(world.generate(kTrainCount, 1, "train"))),
        test(world.generate(kTestCount, 2, "test")),
        clean(train_clean(ModelParams::init({}, s), train, TrainConfig{60, 0.01, 0, s}).params) {}

  /// Attack every test record and evaluate the model on the perturbed features.
  EvalReport attacked(const ModelParams& params, AttackSpec spec, const std::string& name,
                      io::AttackResults* keep = nullptr) {
    io::AttackResults res{"", nlohmann::json{{"attack.variant", name}}, {}};
    for (std::size_t i = 0; i < test.size(); ++i) {
      spec.attack.seed = mix_seed(seed, i);
      res.records.push_back(attack_record(params, test[i], world.extractor(), spec));
      const Perturbation& p = res.records.back().perturbation;
      const Real top = *std::max_element(p.trace.begin(), p.trace.end());
      if (p.objective != top) throw InvariantError(test[i].id + ": objective is not the trace maximum");
      ++attack_runs;
    }
    EvalReport rep = evaluate(params, test, &res);
    if (keep) *keep = std::move(res);
    return rep;
  }
};

AttackSpec spec_for(AttackVariant v, Real budget) {
  AttackSpec s;
  s.attack = AttackConfig::with_budget(v, budget, kIterations);
  return s;
}

std::map<std::uint64_t, std::unique_ptr<SeedRun>> g_runs;

SeedRun& seed_run(std::uint64_t s) {
  auto& slot = g_runs[s];
  if (!slot) slot = std::make_unique<SeedRun>(s);
  return *slot;
}

// Cache of attacked evaluations keyed by (seed, label).
std::map<std::pair<std::uint64_t, std::string>, EvalSummary> g_evals;

const EvalSummary& attacked_summary(std::uint64_t s, const std::string& key, const std::function<EvalReport(SeedRun&)>& make) {
  auto it = g_evals.find({s, key});
  if (it == g_evals.end()) it = g_evals.emplace(std::pair{s, key}, make(seed_run(s)).summary).first;
  return it->second;
}

const EvalSummary& best_at(std::uint64_t s, Real b) {
  return attacked_summary(s, "best@" + fmt("%g", b), [b](SeedRun& r) {
    return r.attacked(r.clean, spec_for(AttackVariant::best, b), "best");
  });
}

// ---------------------------------------------------------------- criteria

Outcome gradient_correctness() {
  std::mt19937_64 rng(2024);
  std::size_t worst_trial = 0;
  Real worst = 0.0;
  const VideoDims vd{8, 1, 1, 2, 2};  // 4 clips of 4 pixels
  for (std::size_t trial = 0; trial < 120; ++trial) {
    const std::size_t d = 2 + trial % 3;
    const ModelParams params = ModelParams::init(ModelDims{d, 3, 4, 6, trial % 3}, 500 + trial);
    const std::size_t n = 2 + trial % 7;
    const Matrix f = random_matrix(n, d, rng);
    const Query q = random_query(1 + trial % 4, 6, rng);
    const SpanLabel label = random_label(n, rng);

    Tape t;
    const BoundParams bp = bind(t, params, true);
    Var vf = t.variable(f);
    t.backward(span_loss(forward(bp, vf, q), label));
    auto track = [&](Real e) {
      if (e > worst) {
        worst = e;
        worst_trial = trial;
      }
    };
    track(relative_error(vf.grad(), finite_diff_grad([&](const Matrix& x) { return span_loss(predict(params, x, q), label); }, f)));
    const auto vars = bp.vars();
    for (std::size_t w = 0; w < vars.size(); ++w) {
      track(relative_error(vars[w].grad(), finite_diff_grad(
                                              [&](const Matrix& x) {
                                                ModelParams copy = params;
                                                *copy.weights()[w] = x;
                                                return span_loss(predict(copy, f, q), label);
                                              },
                                              *params.weights()[w])));
    }

    // Pixels through the clip-local extractor.
    const FeatureExtractor ex(vd, d, 900 + trial);
    const Matrix clips = random_matrix(vd.clip_count(), vd.clip_size(), rng, 0.0, 1.0);
    const SpanLabel pl = random_label(vd.clip_count(), rng);
    Tape tp;
    Var vc = tp.variable(clips);
    tp.backward(span_loss(forward(bind(tp, params, false), ex.extract(vc), q), pl));
    track(relative_error(vc.grad(), finite_diff_grad(
                                        [&](const Matrix& x) {
                                          Tape u;
                                          return span_loss(predict(params, ex.extract(u.constant(x)).value(), q), pl);
                                        },
                                        clips)));
  }
  return {worst < 1e-4, "120 instances, worst relative error " + fmt("%.2e", worst) + " (trial " +
                            std::to_string(worst_trial) + ")"};
}

Outcome projection_suite() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  std::size_t failures = 0, cases = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const Real b = trial % 10 == 0 ? 0.0 : 3.0 * unit(rng);
    const Real scale = trial % 3 == 0 ? 0.1 : 5.0;
    const Matrix x = random_matrix(1 + trial % 6, 1 + trial % 4, rng, -scale, scale);
    const Matrix p = project_l2(x, b);
    ++cases;
    const bool bound = frobenius_norm(p) <= b;
    const bool idem = project_l2(p, b) == p;
    const bool interior = frobenius_norm(x) > b || p == x;
    const bool zero = project_l2(Matrix::zeros_like(x), b) == Matrix::zeros_like(x);
    failures += !(bound && idem && interior && zero);
  }
  return {failures == 0, std::to_string(cases) + " random inputs, " + std::to_string(failures) + " violations"};
}

Outcome singleton_equivalence() {
  SeedRun& r = seed_run(1);
  Real worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const DatasetRecord& rec = r.test[s * 7];
    const SpanObjective obj(r.clean, rec.features, {rec.synonyms.original}, rec.label);
    const auto base = attack_oblivion(obj, AttackConfig::with_budget(AttackVariant::oblivion, kBudgetMid, kIterations, s));
    for (AttackVariant v : {AttackVariant::best, AttackVariant::average, AttackVariant::random}) {
      const auto p = run_attack(obj, AttackConfig::with_budget(v, kBudgetMid, kIterations, s));
      worst = std::max(worst, max_abs(p.delta - base.delta));
    }
  }
  return {worst <= 1e-10, "10 seeds x 3 variants, max |delta - delta_oblivion| = " + fmt("%.1e", worst)};
}

Outcome attack_efficacy() {
  std::size_t drop_ok = 0, sneak_ok = 0;
  std::string detail;
  for (std::uint64_t s : kSeeds) {
    SeedRun& r = seed_run(s);
    const Real clean = evaluate(r.clean, r.test).summary.miou.front();
    const EvalSummary& obl = attacked_summary(s, "oblivion@2", [](SeedRun& x) {
      return x.attacked(x.clean, spec_for(AttackVariant::oblivion, kBudgetMid), "oblivion");
    });
    const EvalSummary& best = best_at(s, kBudgetMid);
    const Real drop = clean > 0 ? (clean - obl.miou.front()) / clean : 0.0;
    drop_ok += drop >= 0.30;
    sneak_ok += best.synonym_miou() < obl.synonym_miou();
    detail += " s" + std::to_string(s) + ": origin " + percent3(clean) + "->" + percent3(obl.miou.front()) +
              " (-" + fmt("%.0f", 100 * drop) + "%), q-avg obl " + percent3(obl.synonym_miou()) + " best " +
              percent3(best.synonym_miou()) + ";";
  }
  return {drop_ok == 5 && sneak_ok >= 4,
          "(a) >=30% drop " + std::to_string(drop_ok) + "/5, (b) best<oblivion " + std::to_string(sneak_ok) + "/5;" + detail};
}

Outcome bound_trend() {
  std::size_t ok = 0;
  std::string detail;
  for (std::uint64_t s : kSeeds) {
    const Real lo = best_at(s, kBudgetLow).overall_miou(), mid = best_at(s, kBudgetMid).overall_miou(),
               hi = best_at(s, kBudgetHigh).overall_miou();
    ok += lo >= mid && mid >= hi;
    detail += " s" + std::to_string(s) + ": " + percent3(lo) + "/" + percent3(mid) + "/" + percent3(hi) + ";";
  }
  return {ok >= 4, "B=1/2/4 non-increasing on " + std::to_string(ok) + "/5;" + detail};
}

Outcome pruning_trend(std::size_t& mask_checks, Real& keep_one_gap) {
  std::size_t ok = 0;
  std::string detail;
  for (std::uint64_t s : kSeeds) {
    std::vector<Real> m;
    for (Real keep : {0.125, 0.25, 0.5}) {
      const EvalSummary& e = attacked_summary(s, "psa@" + fmt("%g", keep), [&](SeedRun& r) {
        AttackSpec spec = spec_for(AttackVariant::best, kBudgetMid);
        spec.keep_fraction = keep;
        io::AttackResults res;
        EvalReport rep = r.attacked(r.clean, spec, "best", &res);
        // PSA exactness on every pruned perturbation.
        for (const auto& a : res.records) {
          const TemporalMask& mask = *a.mask;
          if (mask.kept_count() != static_cast<std::size_t>(std::ceil(keep * static_cast<Real>(mask.size())))) {
            throw InvariantError(a.id + ": mask cardinality");
          }
          for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask.keep[i]) continue;
            for (Real v : a.perturbation.delta.row(i)) {
              if (std::signbit(v) || v != 0.0) throw InvariantError(a.id + ": off-support row is not +0");
            }
          }
          ++mask_checks;
        }
        return rep;
      });
      m.push_back(e.overall_miou());
    }
    ok += m[0] >= m[1] && m[1] >= m[2];
    detail += " s" + std::to_string(s) + ": " + percent3(m[0]) + "/" + percent3(m[1]) + "/" + percent3(m[2]) + ";";
  }
  SeedRun& r = seed_run(1);
  for (std::size_t i = 0; i < 20; ++i) {
    const DatasetRecord& rec = r.test[i];
    const SpanObjective obj(r.clean, rec.features, rec.synonyms.members(), rec.label);
    const auto cfg = AttackConfig::with_budget(AttackVariant::best, kBudgetMid, kIterations);
    keep_one_gap = std::max(keep_one_gap, max_abs(attack_sneak_pruned(obj, cfg, 1.0).perturbation.delta -
                                                  run_attack(obj, cfg).delta));
  }
  return {ok >= 4, "keep 12.5/25/50% non-increasing on " + std::to_string(ok) + "/5;" + detail};
}

Outcome gradient_splitting() {
  Real worst_ratio = 0.0, recovery_sum = 0.0;
  std::size_t fitted = 0;
  std::string detail;
  for (std::uint64_t s : kSeeds) {
    SeedRun& r = seed_run(s);
    AttackSpec spec = spec_for(AttackVariant::best, kBudgetLow);
    spec.pixel = true;
    io::AttackResults res;
    r.attacked(r.clean, spec, "best", &res);
    for (const auto& a : res.records) {
      worst_ratio = std::max(worst_ratio, a.fit->final_mse / a.fit->initial_mse);
      ++fitted;
    }
    const Real clean = evaluate(r.clean, r.test).summary.overall_miou();
    const Real feat = evaluate(r.clean, r.test, &res, EvalSpace::feature).summary.overall_miou();
    const Real pix = evaluate(r.clean, r.test, &res, EvalSpace::pixel).summary.overall_miou();
    const Real rec = clean > feat ? (clean - pix) / (clean - feat) : 0.0;
    recovery_sum += rec;
    detail += " s" + std::to_string(s) + ": clean " + percent3(clean) + " feature " + percent3(feat) + " pixel " +
              percent3(pix) + " (" + fmt("%.0f", 100 * rec) + "%);";
  }
  const Real recovery = recovery_sum / 5.0;
  return {worst_ratio <= 1e-3 && recovery >= 0.8,
          std::to_string(fitted) + " fits, worst final/initial MSE " + fmt("%.1e", worst_ratio) +
              ", mean drop recovered " + fmt("%.1f", 100 * recovery) + "%;" + detail};
}

Outcome defense() {
  std::size_t beats_clean = 0, beats_pgd = 0;
  std::string detail;
  for (std::uint64_t s : kSeeds) {
    SeedRun& r = seed_run(s);
    auto defended = [&](DefensePreset p) {
      DefenseConfig cfg;
      cfg.preset = p;
      cfg.seed = s;
      cfg.attack = AttackConfig::with_budget(AttackVariant::random, kBudgetLow, 10);
      return adversarial_train(ModelParams::init({}, s), r.train, cfg).params;
    };
    auto q_under_best = [&](const ModelParams& p) {
      return r.attacked(p, spec_for(AttackVariant::best, kBudgetLow), "best").summary.synonym_miou();
    };
    const Real undefended = best_at(s, kBudgetLow).synonym_miou();
    const Real sneak = q_under_best(defended(DefensePreset::sneak));
    const Real pgd = q_under_best(defended(DefensePreset::pgd_only));
    const Real psa = q_under_best(defended(DefensePreset::sneak_psa));
    beats_clean += sneak > undefended;
    beats_pgd += sneak > pgd;
    detail += " s" + std::to_string(s) + ": none " + percent3(undefended) + " pgd " + percent3(pgd) + " sneak " +
              percent3(sneak) + " psa " + percent3(psa) + ";";
  }
  return {beats_clean >= 4 && beats_pgd >= 4, "sneak > undefended " + std::to_string(beats_clean) +
                                                   "/5, sneak > pgd_only " + std::to_string(beats_pgd) + "/5;" + detail};
}

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "sneak");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "sneak_acceptance_determinism";
  fs::remove_all(root);
  auto pipeline = [&](const fs::path& dir) {
    fs::create_directories(dir);
    io::write_text(dir / "attack.cfg", "variant = best\nbudget = 2\niterations = 10\nkeep = 0.25\n");
    const std::string d = dir.string();
    const std::vector<std::vector<std::string>> steps = {
        {"gen-data", "--seed", "7", "--count", "40", "--out", d + "/train"},
        {"gen-data", "--seed", "7", "--count", "12", "--split", "test", "--out", d + "/test"},
        {"train", "--seed", "7", "--data", d + "/train", "--out", d + "/clean.ckpt", "--epochs", "20"},
        {"defend", "--seed", "7", "--data", d + "/train", "--out", d + "/sneak.ckpt", "--epochs", "4",
         "--iterations", "3"},
        {"attack", "--seed", "7", "--config", d + "/attack.cfg", "--model", d + "/clean.ckpt", "--data",
         d + "/test", "--out", d + "/psa.jsonl", "--pixel", "--fit-steps", "50"},
        {"attack", "--seed", "7", "--model", d + "/sneak.ckpt", "--data", d + "/test", "--out", d + "/rnd.jsonl",
         "--variant", "random", "--iterations", "10"},
        {"eval", "--seed", "7", "--model", d + "/clean.ckpt", "--data", d + "/test", "--out", d + "/ev_clean"},
        {"eval", "--seed", "7", "--model", d + "/clean.ckpt", "--data", d + "/test", "--attacks", d + "/psa.jsonl",
         "--space", "pixel", "--out", d + "/ev_psa"},
        {"eval", "--seed", "7", "--model", d + "/sneak.ckpt", "--data", d + "/test", "--attacks", d + "/rnd.jsonl",
         "--out", d + "/ev_rnd"},
        {"report", "--seed", "7", "--inputs", d + "/ev_clean", d + "/ev_psa", d + "/ev_rnd", "--out", d + "/report"},
    };
    for (const auto& s : steps) {
      if (const int rc = invoke(s); rc != 0) throw std::runtime_error(s.front() + " exited with " + std::to_string(rc));
    }
  };
  pipeline(root / "a");
  pipeline(root / "b");
  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), root / "a");
    ++files;
    if (!fs::exists(root / "b" / rel) || io::read_text(entry.path()) != io::read_text(root / "b" / rel)) {
      differing.push_back(rel.string());
    }
  }
  std::string detail = std::to_string(files) + " output files compared across two runs";
  for (const auto& f : differing) detail += ", differs: " + f;
  return {differing.empty() && files > 0, detail};
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  run_criterion(1, "gradient correctness", gradient_correctness);
  run_criterion(2, "projection suite", projection_suite);
  run_criterion(3, "singleton equivalence", singleton_equivalence);

  // Criteria 4 and 5 are checked on every attack run by the trend criteria; report them after.
  bool trends_ok = true;
  std::size_t mask_checks = 0;
  Real keep_one_gap = 0.0;
  std::vector<std::pair<int, std::pair<const char*, std::function<Outcome()>>>> trend = {
      {6, {"attack efficacy", attack_efficacy}},
      {7, {"bound trend", bound_trend}},
      {8, {"pruning-size trend", [&] { return pruning_trend(mask_checks, keep_one_gap); }}},
      {9, {"gradient splitting", gradient_splitting}},
      {10, {"defense", defense}},
  };
  std::vector<std::pair<int, std::pair<Outcome, double>>> deferred;
  for (auto& [id, item] : trend) {
    const auto t = Clock::now();
    Outcome o;
    try {
      o = item.second();
    } catch (const InvariantError& e) {
      trends_ok = false;
      o = {false, std::string("invariant violated: ") + e.what()};
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    deferred.push_back({id, {o, seconds_since(t)}});
    std::printf("  ... criterion %d evaluated in %.1fs\n", id, seconds_since(t));
    std::fflush(stdout);
  }

  std::size_t attack_runs = 0;
  for (const auto& [s, run] : g_runs) attack_runs += run->attack_runs;
  report(4, "best-iterate contract",
         {trends_ok && attack_runs > 0, std::to_string(attack_runs) + " attack runs, objective == max(trace) on all"}, 0.0);
  report(5, "PSA exactness",
         {trends_ok && mask_checks > 0 && keep_one_gap <= 1e-10,
          std::to_string(mask_checks) + " pruned perturbations with exact support and cardinality; keep=1 gap " +
              fmt("%.1e", keep_one_gap)},
         0.0);
  const char* titles[] = {"", "", "", "", "", "", "attack efficacy", "bound trend", "pruning-size trend",
                          "gradient splitting", "defense"};
  for (const auto& [id, od] : deferred) report(id, titles[id], od.first, od.second);
  run_criterion(11, "determinism", determinism);

  std::size_t failed = 0;
  for (const auto& [id, o] : g_results) failed += !o.pass;
  std::printf("%zu/%zu criteria passed in %.1fs\n", g_results.size() - failed, g_results.size(), seconds_since(t0));
  return failed == 0 ? 0 : 1;
}
