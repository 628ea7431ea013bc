#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sneak/cli.hpp"
#include "support.hpp"

using namespace sneak;
using namespace sneak::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sneak_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "sneak");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string bytes(const fs::path& p) { return io::read_text(p); }

}  // namespace

TEST(ConfigHash, ChangesWithEveryField) {
  const auto base = io::to_kv(CorpusConfig{});
  const std::string h = io::config_hash(base);
  EXPECT_EQ(h, io::config_hash(io::to_kv(CorpusConfig{})));
  for (const auto& [key, value] : base) {
    auto changed = base;
    changed[key] = value + "1";
    EXPECT_NE(io::config_hash(changed), h) << key;
  }
  auto extra = base;
  extra["seed"] = "1";
  EXPECT_NE(io::config_hash(extra), h);
}

TEST(ConfigHash, RealsRoundTripExactly) {
  for (Real v : {0.1, 1.0 / 3.0, -2.5e-300, 1e300}) EXPECT_EQ(io::parse_real(io::hex_real(v)), v);
}

TEST(Dataset, RoundTripIsExact) {
  const fs::path dir = scratch("dataset");
  ASSERT_EQ(run({"gen-data", "--seed", "3", "--count", "6", "--out", (dir / "d").string()}), 0);
  const io::Dataset ds = io::load_dataset(dir / "d");
  const auto expect = SyntheticWorld(3).generate(6, 1, "train");
  ASSERT_EQ(ds.records.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(ds.records[i].id, expect[i].id);
    EXPECT_EQ(ds.records[i].features, expect[i].features);
    EXPECT_EQ(ds.records[i].video, expect[i].video);
    EXPECT_EQ(ds.records[i].synonyms, expect[i].synonyms);
    EXPECT_EQ(ds.records[i].label, expect[i].label);
  }
  EXPECT_GE(ds.planted_signal_miou, 0.8);
}

TEST(Dataset, SameSeedIsByteIdentical) {
  const fs::path dir = scratch("det");
  ASSERT_EQ(run({"gen-data", "--seed", "4", "--count", "5", "--out", (dir / "a").string()}), 0);
  ASSERT_EQ(run({"gen-data", "--seed", "4", "--count", "5", "--out", (dir / "b").string()}), 0);
  for (const char* f : {"dataset.json", "records.jsonl", "arrays.bin"}) EXPECT_EQ(bytes(dir / "a" / f), bytes(dir / "b" / f)) << f;
}

TEST(Dataset, EmptyDatasetIsValid) {
  const fs::path dir = scratch("empty");
  ASSERT_EQ(run({"gen-data", "--count", "0", "--out", (dir / "d").string()}), 0);
  const io::Dataset ds = io::load_dataset(dir / "d");
  EXPECT_TRUE(ds.records.empty());
  EXPECT_TRUE(fs::exists(dir / "d" / "records.jsonl"));
}

TEST(Dataset, TamperedFeaturesAreRejected) {
  const fs::path dir = scratch("tamper");
  ASSERT_EQ(run({"gen-data", "--count", "3", "--out", (dir / "d").string()}), 0);
  {
    std::fstream f(dir / "d" / "arrays.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.put('\x5a');
  }
  EXPECT_THROW(io::load_dataset(dir / "d"), InvariantError);
  EXPECT_EQ(run({"train", "--data", (dir / "d").string(), "--out", (dir / "m.ckpt").string(), "--epochs", "1"}),
            cli::kExitInvariant);
}

TEST(Correlator, RecoversPlantedSpans) {
  const SyntheticWorld world(9);
  std::vector<SpanPair> pairs;
  for (const auto& r : world.generate(100, 2, "test")) pairs.push_back({world.correlator_span(r.video, r.action), r.label});
  EXPECT_GE(mean_iou(pairs), 0.8);
}

TEST(Checkpoint, RoundTripIsExact) {
  const ModelParams p = ModelParams::init({}, 77);
  EXPECT_EQ(io::parse_checkpoint(io::checkpoint_text(p)), p);
  const ModelParams small = ModelParams::init(tiny_dims(0), 78);
  EXPECT_EQ(io::parse_checkpoint(io::checkpoint_text(small)), small);
}

TEST(Checkpoint, MalformedInputFails) {
  std::string text = io::checkpoint_text(ModelParams::init(tiny_dims(), 1));
  EXPECT_ANY_THROW(io::parse_checkpoint("not a checkpoint\n"));
  EXPECT_ANY_THROW(io::parse_checkpoint(text.substr(0, text.size() / 2)));
  const auto pos = text.find("embedding 6 3");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 13, "embedding 6 4");
  EXPECT_ANY_THROW(io::parse_checkpoint(text));
}

TEST(AttackResults, RoundTripIsExact) {
  const TrainedToy& toy = trained_toy();
  AttackSpec spec;
  spec.attack = AttackConfig::with_budget(AttackVariant::best, 2.0, 5);
  spec.keep_fraction = 0.25;
  spec.pixel = true;
  spec.fit.steps = 20;
  io::AttackResults res{"00ff", nlohmann::json{{"attack.variant", "best"}}, {}};
  for (std::size_t i = 0; i < 3; ++i)
    res.records.push_back(attack_record(toy.params, toy.corpus.test[i], toy.corpus.world.extractor(), spec));
  const fs::path dir = scratch("results");
  io::save_attack_results(dir / "r.jsonl", res);
  const io::AttackResults back = io::load_attack_results(dir / "r.jsonl");
  ASSERT_EQ(back.records.size(), 3u);
  EXPECT_EQ(back.config_hash, "00ff");
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& a = res.records[i];
    const auto& b = back.records[i];
    EXPECT_EQ(b.id, a.id);
    EXPECT_EQ(b.perturbation.delta, a.perturbation.delta);
    EXPECT_EQ(b.perturbation.trace, a.perturbation.trace);
    EXPECT_EQ(b.perturbation.objective, a.perturbation.objective);
    EXPECT_EQ(b.mask, a.mask);
    EXPECT_EQ(b.pixel_delta, a.pixel_delta);
    EXPECT_EQ(b.pixel_features, a.pixel_features);
  }
}

TEST(Report, SummaryMatchesRows) {
  const TrainedToy& toy = trained_toy();
  const std::vector<DatasetRecord> recs(toy.corpus.test.begin(), toy.corpus.test.begin() + 10);
  const EvalReport rep = evaluate(toy.params, recs);
  EXPECT_EQ(rep.rows.size(), 60u);
  EXPECT_NO_THROW(check_summary(rep.summary, rep.rows));
  const auto rows = parse_iou_csv(iou_csv(rep.rows));
  ASSERT_EQ(rows.size(), rep.rows.size());
  EXPECT_NO_THROW(check_summary(summary_from_json(summary_json(rep.summary)), rows));
  EvalSummary bad = rep.summary;
  bad.miou[2] += 0.01;
  EXPECT_THROW(check_summary(bad, rep.rows), InvariantError);
}

TEST(Report, CleanModelLocalizesHeldOutData) {
  const TrainedToy& toy = trained_toy();
  EXPECT_GE(evaluate(toy.params, toy.corpus.test).summary.miou.front(), 0.5);
}

TEST(Cli, PipelineAndExitCodes) {
  const fs::path dir = scratch("cli");
  const std::string data = (dir / "data").string(), model = (dir / "m.ckpt").string();
  ASSERT_EQ(run({"gen-data", "--seed", "2", "--count", "8", "--out", data}), 0);
  ASSERT_EQ(run({"train", "--seed", "2", "--data", data, "--out", model, "--epochs", "3"}), 0);
  ASSERT_EQ(run({"attack", "--seed", "2", "--model", model, "--data", data, "--out", (dir / "r.jsonl").string(),
                 "--budget", "1", "--iterations", "3", "--keep", "0.5"}),
            0);
  ASSERT_EQ(run({"eval", "--model", model, "--data", data, "--attacks", (dir / "r.jsonl").string(), "--out",
                 (dir / "ev").string()}),
            0);
  EXPECT_EQ(parse_iou_csv(bytes(dir / "ev" / "iou.csv")).size(), 8u * 6u);
  ASSERT_EQ(run({"report", "--inputs", (dir / "ev").string(), "--out", (dir / "rep").string()}), 0);
  EXPECT_TRUE(fs::exists(dir / "rep" / "report.md"));

  io::write_text(dir / "c.cfg", "iterations = 2\nbudget = 0.5\n");
  EXPECT_EQ(run({"attack", "--config", (dir / "c.cfg").string(), "--model", model, "--data", data, "--out",
                 (dir / "r2.jsonl").string()}),
            0);
  EXPECT_EQ(io::load_attack_results(dir / "r2.jsonl").records.front().perturbation.trace.size(), 2u);

  io::write_text(dir / "bad.cfg", "bogus = 1\n");
  EXPECT_EQ(run({"attack", "--config", (dir / "bad.cfg").string(), "--model", model, "--data", data, "--out",
                 (dir / "r3.jsonl").string()}),
            cli::kExitError);
  EXPECT_EQ(run({"attack", "--model", model, "--data", data, "--out", (dir / "r4.jsonl").string(), "--keep", "1.5"}),
            cli::kExitError);
  EXPECT_NE(run({"frobnicate"}), 0);
  io::write_text(dir / "gap.txt", "person: someone\n");
  EXPECT_EQ(run({"gen-data", "--lexicon", (dir / "gap.txt").string(), "--out", (dir / "g").string()}), cli::kExitError);
}
