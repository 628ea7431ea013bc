#pragma once

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sneak/harness.hpp"

namespace sneak::cli {

namespace fs = std::filesystem;
using KeyValues = std::map<std::string, std::string>;

inline constexpr int kExitError = 1;
inline constexpr int kExitInvariant = 3;

inline std::string flag(bool b) { return b ? "true" : "false"; }

/// Content hash of a dataset directory (header + records + arrays).
inline std::string dataset_hash(const fs::path& dir) {
  return io::hex64(io::fnv1a(io::read_text(dir / "dataset.json") + io::read_text(dir / "records.jsonl") +
                             io::read_text(dir / "arrays.bin")));
}

inline std::string file_hash(const fs::path& path) { return io::hex64(io::fnv1a(io::read_text(path))); }

inline nlohmann::json kv_json(const KeyValues& kv) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

struct Common {
  std::uint64_t seed = 0;
};

inline void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--config", "Flat key=value config file; keys are long option names");
}

inline bool given_on_command_line(const std::vector<std::string>& args, const std::string& opt) {
  for (const auto& a : args) {
    if (a == opt || a.rfind(opt + "=", 0) == 0) return true;
  }
  return false;
}

/// Splices `--config FILE` entries into the argument list as `--key=value`, for the
/// subcommand named in args[1]. Command-line options take precedence; keys must
/// name options of that subcommand.
inline std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.size() < 2) return args;
  const CLI::App* sub = nullptr;
  for (const CLI::App* s : app.get_subcommands([](const CLI::App*) { return true; })) {
    if (s->get_name() == args[1]) sub = s;
  }
  if (!sub) return args;
  std::string file;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
  }
  if (file.empty()) return args;
  std::istringstream in(io::read_text(file));
  std::vector<std::string> extra;
  for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_config(in)) {
    if (!item.parents.empty()) throw ConfigError(file + ": sections are not supported ('" + item.fullname() + "')");
    std::string key = item.name;
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string opt = "--" + key;
    if (key == "config" || sub->get_option_no_throw(opt) == nullptr) {
      throw ConfigError(file + ": unknown key '" + item.name + "' for " + sub->get_name());
    }
    if (given_on_command_line(args, opt)) continue;
    for (const auto& v : item.inputs) extra.push_back(opt + "=" + v);
  }
  args.insert(args.begin() + 2, extra.begin(), extra.end());
  return args;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  Common common;
  std::string out;
  std::size_t count = 300;
  std::string split = "train";
  std::string lexicon;
  CorpusConfig corpus;
};

inline std::uint64_t split_stream(const std::string& split) {
  if (split == "train") return 1;
  if (split == "test") return 2;
  return io::fnv1a(split);
}

inline int run_gen_data(const GenDataArgs& a) {
  SynonymLexicon lexicon;
  std::string lexicon_text;
  const Vocabulary& vocab = default_vocabulary();
  if (a.lexicon.empty()) {
    lexicon = default_lexicon();
  } else {
    std::istringstream in(io::read_text(a.lexicon));
    lexicon = SynonymLexicon::parse(in, vocab);
  }
  lexicon_text = to_text(lexicon, vocab);
  const SyntheticWorld world(a.common.seed, a.corpus, vocab, lexicon);
  io::Dataset ds;
  ds.seed = a.common.seed;
  ds.split = a.split;
  ds.corpus = a.corpus;
  ds.vocab = vocab;
  ds.lexicon_text = lexicon_text;
  ds.extractor = world.extractor();
  ds.records = world.generate(a.count, split_stream(a.split), a.split);
  if (!ds.records.empty()) {
    std::vector<SpanPair> pairs;
    for (const auto& r : ds.records) pairs.push_back({world.correlator_span(r.video, r.action), r.label});
    ds.planted_signal_miou = mean_iou(pairs);
  }
  io::save_dataset(a.out, ds);
  std::printf("wrote %zu records to %s (planted-signal correlator mIoU %s%%)\n", ds.records.size(), a.out.c_str(),
              percent3(ds.planted_signal_miou).c_str());
  if (!ds.records.empty() && ds.planted_signal_miou < 0.8) {
    throw InvariantError("planted signal too weak: correlator mIoU " + percent3(ds.planted_signal_miou) + "% < 80%");
  }
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string data, out, log, eval;
  std::optional<Real> require_miou;
  TrainConfig train;
  ModelDims dims;
};

inline int run_train(TrainArgs a) {
  const io::Dataset ds = io::load_dataset(a.data);
  a.dims.feature_dim = ds.corpus.feature_dim;
  a.dims.vocab_size = ds.vocab.size();
  a.train.seed = a.common.seed;
  const auto samples = ds.samples();
  const TrainResult res = train_clean(ModelParams::init(a.dims, a.common.seed), samples, a.train);
  if (!res.params.all_finite()) throw InvariantError("training produced non-finite weights");
  if (res.best_loss > res.initial_loss) throw InvariantError("returned parameters are worse than the initial ones");

  const KeyValues kv{{"data.hash", dataset_hash(a.data)},
                     {"model.context_radius", std::to_string(a.dims.context_radius)},
                     {"model.embed_dim", std::to_string(a.dims.embed_dim)},
                     {"model.hidden_dim", std::to_string(a.dims.hidden_dim)},
                     {"seed", std::to_string(a.common.seed)},
                     {"train.batch_size", std::to_string(a.train.batch_size)},
                     {"train.epochs", std::to_string(a.train.epochs)},
                     {"train.lr", io::hex_real(a.train.lr)}};
  io::save_checkpoint(a.out, res.params, "config_hash=" + io::config_hash(kv));
  std::vector<nlohmann::json> log;
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
    log.push_back({{"epoch", e}, {"loss", res.epoch_loss[e]}, {"best", e == res.best_epoch}});
  }
  io::write_text(a.log.empty() ? a.out + ".log.jsonl" : a.log, io::jsonl(log));
  std::printf("trained %zu epochs: loss %.6g -> best %.6g (epoch %zu)\n", a.train.epochs, res.initial_loss,
              res.best_loss, res.best_epoch);
  if (!a.eval.empty()) {
    const io::Dataset held = io::load_dataset(a.eval);
    const Real m = evaluate(res.params, held.records).summary.miou.front();
    std::printf("held-out origin-query mIoU %s%%\n", percent3(m).c_str());
    if (a.require_miou && m < *a.require_miou) {
      throw InvariantError("held-out mIoU " + percent3(m) + "% below the required " + percent3(*a.require_miou) + "%");
    }
  }
  return 0;
}

// ---------------------------------------------------------------- attack

struct AttackArgs {
  Common common;
  std::string model, data, out;
  std::string variant = "best";
  Real budget = kBudgetMid;
  std::size_t iterations = 50;
  std::optional<Real> step;
  bool raw_steps = false;
  std::optional<Real> keep;
  bool pixel = false;
  std::size_t fit_steps = 500;
  std::size_t limit = 0;
};

inline int run_attack_cmd(const AttackArgs& a) {
  const ModelParams params = io::load_checkpoint(a.model);
  io::Dataset ds = io::load_dataset(a.data);
  if (ds.corpus.feature_dim != params.dims.feature_dim || ds.vocab.size() != params.dims.vocab_size) {
    throw ConfigError("checkpoint dimensions do not match the dataset");
  }
  if (a.limit != 0 && a.limit < ds.records.size()) ds.records.resize(a.limit);

  AttackSpec spec;
  spec.attack = AttackConfig::with_budget(parse_attack_variant(a.variant), a.budget, a.iterations);
  if (a.step) spec.attack.step = *a.step;
  spec.attack.normalize = !a.raw_steps;
  spec.keep_fraction = a.keep;
  spec.pixel = a.pixel;
  spec.fit.steps = a.fit_steps;
  spec.attack.validate();

  const KeyValues kv{{"attack.budget", io::hex_real(spec.attack.budget)},
                     {"attack.iterations", std::to_string(spec.attack.iterations)},
                     {"attack.keep", a.keep ? io::hex_real(*a.keep) : "none"},
                     {"attack.normalize", flag(spec.attack.normalize)},
                     {"attack.step", io::hex_real(spec.attack.step)},
                     {"attack.variant", std::string(to_string(spec.attack.variant))},
                     {"data.hash", dataset_hash(a.data)},
                     {"data.limit", std::to_string(a.limit)},
                     {"fit.pixel", flag(a.pixel)},
                     {"fit.steps", std::to_string(a.fit_steps)},
                     {"model.hash", file_hash(a.model)},
                     {"seed", std::to_string(a.common.seed)}};
  io::AttackResults res;
  res.config_hash = io::config_hash(kv);
  res.config = kv_json(kv);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    AttackSpec s = spec;
    s.attack.seed = mix_seed(a.common.seed, i);
    res.records.push_back(attack_record(params, ds.records[i], ds.extractor, s));
  }
  io::save_attack_results(a.out, res);
  Real norm = 0.0, obj = 0.0;
  for (const auto& r : res.records) {
    norm += frobenius_norm(r.perturbation.delta);
    obj += r.perturbation.objective;
  }
  const auto count = static_cast<Real>(std::max<std::size_t>(1, res.records.size()));
  std::printf("attacked %zu samples (%s, B=%g): mean ||delta|| %.4f, mean objective %.4f, config %s\n",
              res.records.size(), a.variant.c_str(), a.budget, norm / count, obj / count, res.config_hash.c_str());
  return 0;
}

// ---------------------------------------------------------------- defend

struct DefendArgs {
  Common common;
  std::string data, out, log, init;
  std::string preset = "sneak";
  std::size_t epochs = 60;
  Real lr = 0.01;
  std::size_t batch_size = 0;
  Real budget = kBudgetLow;
  std::size_t iterations = 10;
  Real keep = 0.25;
  ModelDims dims;
};

inline int run_defend(DefendArgs a) {
  const io::Dataset ds = io::load_dataset(a.data);
  ModelParams init;
  if (a.init.empty()) {
    a.dims.feature_dim = ds.corpus.feature_dim;
    a.dims.vocab_size = ds.vocab.size();
    init = ModelParams::init(a.dims, a.common.seed);
  } else {
    init = io::load_checkpoint(a.init);
    if (init.dims.feature_dim != ds.corpus.feature_dim || init.dims.vocab_size != ds.vocab.size()) {
      throw ConfigError("initial checkpoint dimensions do not match the dataset");
    }
  }
  DefenseConfig cfg;
  cfg.preset = parse_defense_preset(a.preset);
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch_size;
  cfg.seed = a.common.seed;
  cfg.attack = AttackConfig::with_budget(AttackVariant::random, a.budget, a.iterations);
  cfg.keep_fraction = a.keep;
  const auto samples = ds.samples();
  const DefenseResult res = adversarial_train(init, samples, cfg);
  if (!res.params.all_finite()) throw InvariantError("adversarial training produced non-finite weights");

  std::vector<nlohmann::json> log;
  for (const auto& e : res.log) {
    if (e.perturbed != (e.epoch % 2 == 0)) throw InvariantError("epoch parity broken");
    if (e.max_delta_norm > a.budget + 1e-9) throw InvariantError("training perturbation exceeds the budget");
    log.push_back({{"epoch", e.epoch},
                   {"parity", e.perturbed ? "even" : "odd"},
                   {"input", e.perturbed ? "perturbed" : "clean"},
                   {"clean_videos", e.clean_videos},
                   {"perturbed_videos", e.perturbed_videos},
                   {"loss", e.loss},
                   {"mean_delta_norm", e.mean_delta_norm},
                   {"max_delta_norm", e.max_delta_norm}});
  }
  const KeyValues kv{{"data.hash", dataset_hash(a.data)},
                     {"defense.batch_size", std::to_string(a.batch_size)},
                     {"defense.budget", io::hex_real(a.budget)},
                     {"defense.epochs", std::to_string(a.epochs)},
                     {"defense.iterations", std::to_string(a.iterations)},
                     {"defense.keep", io::hex_real(a.keep)},
                     {"defense.lr", io::hex_real(a.lr)},
                     {"defense.preset", std::string(to_string(cfg.preset))},
                     {"init.hash", a.init.empty() ? "none" : file_hash(a.init)},
                     {"model.context_radius", std::to_string(init.dims.context_radius)},
                     {"model.embed_dim", std::to_string(init.dims.embed_dim)},
                     {"model.hidden_dim", std::to_string(init.dims.hidden_dim)},
                     {"seed", std::to_string(a.common.seed)}};
  io::save_checkpoint(a.out, res.params, "config_hash=" + io::config_hash(kv));
  io::write_text(a.log.empty() ? a.out + ".log.jsonl" : a.log, io::jsonl(log));
  std::printf("defended (%s) for %zu epochs; final epoch loss %.6g\n", a.preset.c_str(), a.epochs,
              res.log.back().loss);
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  Common common;
  std::string model, data, attacks, out;
  std::string space = "feature";
};

inline int run_eval(const EvalArgs& a) {
  const ModelParams params = io::load_checkpoint(a.model);
  const io::Dataset ds = io::load_dataset(a.data);
  if (ds.corpus.feature_dim != params.dims.feature_dim || ds.vocab.size() != params.dims.vocab_size) {
    throw ConfigError("checkpoint dimensions do not match the dataset");
  }
  if (a.space != "feature" && a.space != "pixel") throw ConfigError("space must be 'feature' or 'pixel'");
  std::optional<io::AttackResults> attacks;
  std::vector<DatasetRecord> records = ds.records;
  if (!a.attacks.empty()) {
    attacks = io::load_attack_results(a.attacks);
    // Results may cover a prefix of the dataset (attack --limit).
    if (attacks->records.size() < records.size()) records.resize(attacks->records.size());
  }
  EvalReport rep = evaluate(params, records, attacks ? &*attacks : nullptr,
                            a.space == "pixel" ? EvalSpace::pixel : EvalSpace::feature);
  const KeyValues kv{{"attacks.hash", attacks ? attacks->config_hash : "none"},
                     {"data.hash", dataset_hash(a.data)},
                     {"eval.space", a.space},
                     {"model.hash", file_hash(a.model)},
                     {"seed", std::to_string(a.common.seed)}};
  rep.summary.config_hash = io::config_hash(kv);
  check_summary(rep.summary, rep.rows);

  const fs::path out(a.out);
  io::write_text(out / "iou.csv", iou_csv(rep.rows));
  nlohmann::json summary = summary_json(rep.summary);
  summary["config"] = kv_json(kv);
  io::write_text(out / "summary.json", summary.dump(2) + "\n");
  io::write_text(out / "summary.csv", report_csv({{out.filename().string(), rep.summary}}));
  std::printf("%s", report_markdown({{out.filename().string(), rep.summary}}).c_str());
  return 0;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  Common common;
  std::vector<std::string> inputs;
  std::string out;
};

inline int run_report(const ReportArgs& a) {
  std::vector<std::pair<std::string, EvalSummary>> runs;
  for (const auto& dir : a.inputs) {
    const fs::path p(dir);
    const EvalSummary s = summary_from_json(nlohmann::json::parse(io::read_text(p / "summary.json")));
    check_summary(s, parse_iou_csv(io::read_text(p / "iou.csv")));
    runs.emplace_back(p.filename().string(), s);
  }
  const fs::path out(a.out);
  io::write_text(out / "report.csv", report_csv(runs));
  io::write_text(out / "report.md", report_markdown(runs));
  std::printf("%s", report_markdown(runs).c_str());
  return 0;
}

// ---------------------------------------------------------------- entry point

inline int run_cli(int argc, char** argv) {
  CLI::App app{"SNEAK attacks, pruning, gradient splitting and adversarial training on a toy NLVL model"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic video-query dataset");
  add_common(g, gen.common);
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--count", gen.count, "Number of records")->capture_default_str();
  g->add_option("--split", gen.split, "Split name (train, test, ...); selects the sample stream")->capture_default_str();
  g->add_option("--lexicon", gen.lexicon, "Lexicon file (token: syn, syn); default: built-in");
  g->add_option("--frames", gen.corpus.video.frames)->capture_default_str();
  g->add_option("--frames-per-clip", gen.corpus.video.frames_per_clip)->capture_default_str();
  g->add_option("--feature-dim", gen.corpus.feature_dim)->capture_default_str();
  g->add_option("--gain", gen.corpus.extractor_gain, "Extractor weight gain")->capture_default_str();
  g->add_option("--amplitude", gen.corpus.amplitude, "Planted pattern amplitude")->capture_default_str();
  g->add_option("--noise", gen.corpus.noise, "Pixel noise standard deviation")->capture_default_str();
  g->add_option("--min-span", gen.corpus.min_span)->capture_default_str();
  g->add_option("--max-span", gen.corpus.max_span)->capture_default_str();
  g->add_option("--distractor-prob", gen.corpus.distractor_prob)->capture_default_str();
  g->add_option("--variants", gen.corpus.variant_count, "Synonym variants per query")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the span model on clean data");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "Training dataset directory")->required();
  t->add_option("--out", tr.out, "Output checkpoint")->required();
  t->add_option("--log", tr.log, "Training log (JSONL); default <out>.log.jsonl");
  t->add_option("--epochs", tr.train.epochs)->capture_default_str();
  t->add_option("--lr", tr.train.lr)->capture_default_str();
  t->add_option("--batch-size", tr.train.batch_size, "0 = full batch")->capture_default_str();
  t->add_option("--embed-dim", tr.dims.embed_dim)->capture_default_str();
  t->add_option("--hidden-dim", tr.dims.hidden_dim)->capture_default_str();
  t->add_option("--context-radius", tr.dims.context_radius)->capture_default_str();
  t->add_option("--eval", tr.eval, "Held-out dataset for a post-training mIoU check");
  t->add_option("--require-miou", tr.require_miou, "Fail if held-out origin mIoU (fraction) is below this");

  AttackArgs at;
  auto* k = app.add_subcommand("attack", "Generate feature-space perturbations");
  add_common(k, at.common);
  k->add_option("--model", at.model, "Checkpoint")->required();
  k->add_option("--data", at.data, "Dataset directory")->required();
  k->add_option("--out", at.out, "Output results (JSONL, with a .bin sidecar)")->required();
  k->add_option("--variant", at.variant, "oblivion | best | average | random")->capture_default_str();
  k->add_option("--budget", at.budget, "Feature-space L2 budget B")->capture_default_str();
  k->add_option("--iterations", at.iterations)->capture_default_str();
  k->add_option("--step", at.step, "Step size; default B/10");
  k->add_flag("--raw-steps", at.raw_steps, "Use the raw gradient instead of the normalized direction");
  k->add_option("--keep", at.keep, "PSA: fraction of temporal rows kept (0, 1]");
  k->add_flag("--pixel", at.pixel, "Also fit each perturbation in pixel space");
  k->add_option("--fit-steps", at.fit_steps)->capture_default_str();
  k->add_option("--limit", at.limit, "Attack only the first N records (0 = all)")->capture_default_str();

  DefendArgs df;
  auto* d = app.add_subcommand("defend", "Adversarial training");
  add_common(d, df.common);
  d->add_option("--data", df.data, "Training dataset directory")->required();
  d->add_option("--out", df.out, "Output checkpoint")->required();
  d->add_option("--log", df.log, "Training log (JSONL); default <out>.log.jsonl");
  d->add_option("--init", df.init, "Start from this checkpoint instead of a fresh init");
  d->add_option("--preset", df.preset, "sneak | pgd_only | synonym_only | sneak_psa")->capture_default_str();
  d->add_option("--epochs", df.epochs)->capture_default_str();
  d->add_option("--lr", df.lr)->capture_default_str();
  d->add_option("--batch-size", df.batch_size, "0 = full batch")->capture_default_str();
  d->add_option("--budget", df.budget, "Inner attack budget")->capture_default_str();
  d->add_option("--iterations", df.iterations, "Inner attack iterations")->capture_default_str();
  d->add_option("--keep", df.keep, "Keep fraction for sneak_psa")->capture_default_str();
  d->add_option("--embed-dim", df.dims.embed_dim)->capture_default_str();
  d->add_option("--hidden-dim", df.dims.hidden_dim)->capture_default_str();
  d->add_option("--context-radius", df.dims.context_radius)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate mIoU per query variant, clean or under stored attacks");
  add_common(e, ev.common);
  e->add_option("--model", ev.model, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--attacks", ev.attacks, "Attack results; omit for clean evaluation");
  e->add_option("--space", ev.space, "feature | pixel")->capture_default_str();
  e->add_option("--out", ev.out, "Output directory (iou.csv, summary.json, summary.csv)")->required();

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Check eval outputs and tabulate them");
  add_common(r, rp.common);
  r->add_option("--inputs", rp.inputs, "Eval output directories")->required();
  r->add_option("--out", rp.out, "Output directory (report.csv, report.md)")->required();

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(app, std::move(args));
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitError;
  }

  try {
    if (*g) return run_gen_data(gen);
    if (*t) return run_train(tr);
    if (*k) return run_attack_cmd(at);
    if (*d) return run_defend(df);
    if (*e) return run_eval(ev);
    if (*r) return run_report(rp);
  } catch (const InvariantError& err) {
    std::cerr << "invariant violated: " << err.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

}  // namespace sneak::cli
