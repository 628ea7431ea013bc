#pragma once

#include <bit>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sneak/corpus.hpp"
#include "sneak/grad_split.hpp"
#include "sneak/psa.hpp"

namespace sneak::io {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- hashing, text

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

/// Sorted `key=value` lines; the input to `config_hash`.
inline std::string canonical_config(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline std::string config_hash(const std::map<std::string, std::string>& kv) {
  return hex64(fnv1a(canonical_config(kv)));
}

/// Exact text form of a double (C99 hex float).
inline std::string hex_real(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline Real parse_real(const std::string& s) {
  char* end = nullptr;
  const Real v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ParseError("not a number: '" + s + "'", 0);
  return v;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("write failed for " + path.string());
}

// ---------------------------------------------------------------- binary sidecar

/// Appends little-endian float64 / uint8 arrays; offsets are in bytes.
class BinaryWriter {
 public:
  std::uint64_t put_f64(std::span<const Real> values) {
    const std::uint64_t at = bytes_.size();
    for (Real v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) bytes_.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
    return at;
  }
  std::uint64_t put_u8(std::span<const std::uint8_t> values) {
    const std::uint64_t at = bytes_.size();
    bytes_.insert(bytes_.end(), values.begin(), values.end());
    return at;
  }
  void save(const fs::path& path) const { write_text(path, std::string(bytes_.begin(), bytes_.end())); }

 private:
  std::vector<char> bytes_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const fs::path& path) : bytes_(read_text(path)) {}

  std::vector<Real> f64(std::uint64_t offset, std::uint64_t count) const {
    check(offset, count * 8);
    std::vector<Real> out(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[offset + 8 * i + b])) << (8 * b);
      }
      out[i] = std::bit_cast<Real>(bits);
    }
    return out;
  }
  std::vector<std::uint8_t> u8(std::uint64_t offset, std::uint64_t count) const {
    check(offset, count);
    return {bytes_.begin() + static_cast<std::ptrdiff_t>(offset),
            bytes_.begin() + static_cast<std::ptrdiff_t>(offset + count)};
  }

 private:
  void check(std::uint64_t offset, std::uint64_t len) const {
    if (offset + len > bytes_.size()) throw InputError("binary sidecar truncated");
  }
  std::string bytes_;
};

inline json array_ref(std::uint64_t offset, std::size_t rows, std::size_t cols) {
  return json{{"offset", offset}, {"rows", rows}, {"cols", cols}};
}

inline Matrix read_matrix(const BinaryReader& bin, const json& ref) {
  const std::size_t r = ref.at("rows"), c = ref.at("cols");
  return Matrix(r, c, bin.f64(ref.at("offset").get<std::uint64_t>(), r * c));
}

// ---------------------------------------------------------------- configs as key/value

inline std::string fmt_real(Real v) { return hex_real(v); }

inline std::map<std::string, std::string> to_kv(const CorpusConfig& c) {
  return {
      {"corpus.frames", std::to_string(c.video.frames)},
      {"corpus.channels", std::to_string(c.video.channels)},
      {"corpus.height", std::to_string(c.video.height)},
      {"corpus.width", std::to_string(c.video.width)},
      {"corpus.frames_per_clip", std::to_string(c.video.frames_per_clip)},
      {"corpus.feature_dim", std::to_string(c.feature_dim)},
      {"corpus.extractor_gain", fmt_real(c.extractor_gain)},
      {"corpus.amplitude", fmt_real(c.amplitude)},
      {"corpus.noise", fmt_real(c.noise)},
      {"corpus.min_span", std::to_string(c.min_span)},
      {"corpus.max_span", std::to_string(c.max_span)},
      {"corpus.distractor_prob", fmt_real(c.distractor_prob)},
      {"corpus.variant_count", std::to_string(c.variant_count)},
  };
}

inline json corpus_json(const CorpusConfig& c) {
  return json{{"frames", c.video.frames},
              {"channels", c.video.channels},
              {"height", c.video.height},
              {"width", c.video.width},
              {"frames_per_clip", c.video.frames_per_clip},
              {"feature_dim", c.feature_dim},
              {"extractor_gain", c.extractor_gain},
              {"amplitude", c.amplitude},
              {"noise", c.noise},
              {"min_span", c.min_span},
              {"max_span", c.max_span},
              {"distractor_prob", c.distractor_prob},
              {"variant_count", c.variant_count}};
}

inline CorpusConfig corpus_from_json(const json& j) {
  CorpusConfig c;
  c.video = VideoDims{j.at("frames"), j.at("channels"), j.at("height"), j.at("width"), j.at("frames_per_clip")};
  c.feature_dim = j.at("feature_dim");
  c.extractor_gain = j.at("extractor_gain");
  c.amplitude = j.at("amplitude");
  c.noise = j.at("noise");
  c.min_span = j.at("min_span");
  c.max_span = j.at("max_span");
  c.distractor_prob = j.at("distractor_prob");
  c.variant_count = j.at("variant_count");
  return c;
}

// ---------------------------------------------------------------- dataset

struct Dataset {
  std::uint64_t seed = 0;
  std::string split;
  CorpusConfig corpus;
  Vocabulary vocab;
  std::string lexicon_text;
  FeatureExtractor extractor;
  std::vector<DatasetRecord> records;
  Real planted_signal_miou = 0.0;

  std::vector<LabeledSample> samples() const { return to_samples(records); }
};

inline json query_json(const Query& q) { return json(std::vector<TokenId>(q.begin(), q.end())); }
inline Query query_from_json(const json& j) { return j.get<std::vector<TokenId>>(); }

/// Directory layout: dataset.json (header), records.jsonl (one record per line),
/// arrays.bin (uint8 pixels, float64 features).
inline void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  BinaryWriter bin;
  std::string lines;
  for (const auto& r : ds.records) {
    std::vector<std::uint8_t> px(r.video.pixels().size());
    for (std::size_t i = 0; i < px.size(); ++i) {
      const Real scaled = r.video.pixels()[i] * 255.0;
      const Real q = std::round(scaled);
      if (q != scaled && std::abs(q - scaled) > 1e-6) {
        throw InvariantError("record " + r.id + " has pixels off the 8-bit grid");
      }
      px[i] = static_cast<std::uint8_t>(q);
    }
    json variants = json::array();
    for (const auto& v : r.synonyms.variants) variants.push_back(query_json(v));
    json j{{"id", r.id},
           {"action", r.action},
           {"label", {r.label.start, r.label.end}},
           {"query", query_json(r.synonyms.original)},
           {"query_text", ds.vocab.join(r.synonyms.original)},
           {"variants", variants},
           {"swap_counts", r.synonyms.swap_counts},
           {"pixels", {{"offset", bin.put_u8(px)}, {"count", px.size()}}},
           {"features", array_ref(bin.put_f64(r.features.values()), r.features.rows(), r.features.cols())}};
    lines += j.dump() + "\n";
  }
  json header{{"format", "sneak-dataset"},
              {"version", 1},
              {"seed", ds.seed},
              {"split", ds.split},
              {"count", ds.records.size()},
              {"corpus", corpus_json(ds.corpus)},
              {"extractor_seed", ds.extractor.seed()},
              {"vocabulary", ds.vocab.words()},
              {"lexicon", ds.lexicon_text},
              {"planted_signal_miou", ds.planted_signal_miou},
              {"records", "records.jsonl"},
              {"arrays", "arrays.bin"}};
  write_text(dir / "dataset.json", header.dump(2) + "\n");
  write_text(dir / "records.jsonl", lines);
  bin.save(dir / "arrays.bin");
}

/// Loads and re-verifies a dataset: features must equal extract(video) bit for bit,
/// labels must fit, and synonym sets must satisfy their constraints.
inline Dataset load_dataset(const fs::path& dir) {
  const json header = json::parse(read_text(dir / "dataset.json"));
  if (header.value("format", "") != "sneak-dataset") throw InputError(dir.string() + " is not a sneak dataset");
  Dataset ds;
  ds.seed = header.at("seed");
  ds.split = header.at("split");
  ds.corpus = corpus_from_json(header.at("corpus"));
  ds.vocab = Vocabulary(header.at("vocabulary").get<std::vector<std::string>>());
  ds.lexicon_text = header.at("lexicon");
  ds.planted_signal_miou = header.at("planted_signal_miou");
  ds.extractor = FeatureExtractor(ds.corpus.video, ds.corpus.feature_dim, header.at("extractor_seed").get<std::uint64_t>(),
                                  ds.corpus.extractor_gain);
  const BinaryReader bin(dir / "arrays.bin");
  std::istringstream lines(read_text(dir / "records.jsonl"));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("records.jsonl: ") + e.what(), lineno);
    }
    DatasetRecord r;
    r.id = j.at("id");
    r.action = j.at("action");
    r.label = {j.at("label").at(0), j.at("label").at(1)};
    const auto px = bin.u8(j.at("pixels").at("offset"), j.at("pixels").at("count"));
    std::vector<Real> pixels(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) pixels[i] = static_cast<Real>(px[i]) / 255.0;
    r.video = PixelVideo(ds.corpus.video, std::move(pixels));
    r.features = read_matrix(bin, j.at("features"));
    r.synonyms.original = query_from_json(j.at("query"));
    for (const auto& v : j.at("variants")) r.synonyms.variants.push_back(query_from_json(v));
    r.synonyms.swap_counts = j.at("swap_counts").get<std::vector<std::size_t>>();

    if (!(r.features == ds.extractor.extract(r.video))) {
      throw InvariantError("record " + r.id + ": stored features differ from extract(video)");
    }
    if (!r.label.valid_for(r.features.rows())) throw InvariantError("record " + r.id + ": label out of range");
    std::set<Query> seen{r.synonyms.original};
    for (const auto& v : r.synonyms.variants) {
      if (v.size() != r.synonyms.original.size() || hamming_distance(v, r.synonyms.original) < kMinSwaps ||
          !seen.insert(v).second) {
        throw InvariantError("record " + r.id + ": synonym set violates its constraints");
      }
      for (TokenId t : v) ds.vocab.word(t);
    }
    ds.records.push_back(std::move(r));
  }
  if (ds.records.size() != header.at("count").get<std::size_t>()) {
    throw InvariantError("dataset header count does not match records.jsonl");
  }
  return ds;
}

// ---------------------------------------------------------------- checkpoint

/// Text checkpoint: a header line with dimensions and seed, then per weight a
/// `name rows cols` line followed by one line of hex floats per row.
inline std::string checkpoint_text(const ModelParams& p, const std::string& extra = {}) {
  std::ostringstream out;
  out << "sneak-checkpoint 1 feature_dim=" << p.dims.feature_dim << " embed_dim=" << p.dims.embed_dim
      << " hidden_dim=" << p.dims.hidden_dim << " vocab_size=" << p.dims.vocab_size
      << " context_radius=" << p.dims.context_radius << " seed=" << p.seed;
  if (!extra.empty()) out << " " << extra;
  out << "\n";
  const auto ws = p.weights();
  for (std::size_t w = 0; w < ws.size(); ++w) {
    const Matrix& m = *ws[w];
    out << ModelParams::kWeightNames[w] << " " << m.rows() << " " << m.cols() << "\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? " " : "") << hex_real(m(r, c));
      out << "\n";
    }
  }
  return out.str();
}

inline void save_checkpoint(const fs::path& path, const ModelParams& p, const std::string& extra = {}) {
  write_text(path, checkpoint_text(p, extra));
}

inline ModelParams parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("empty checkpoint", lineno);
  std::istringstream head(line);
  std::string magic, version;
  head >> magic >> version;
  if (magic != "sneak-checkpoint" || version != "1") throw ParseError("not a sneak checkpoint", lineno);
  std::map<std::string, std::string> fields;
  for (std::string tok; head >> tok;) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError("malformed header field '" + tok + "'", lineno);
    fields[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto field = [&](const char* k) -> std::uint64_t {
    auto it = fields.find(k);
    if (it == fields.end()) throw ParseError(std::string("checkpoint header lacks ") + k, 1);
    return std::stoull(it->second);
  };
  ModelParams p;
  p.dims = ModelDims{field("feature_dim"), field("embed_dim"), field("hidden_dim"), field("vocab_size"),
                     field("context_radius")};
  p.seed = field("seed");
  auto ws = p.weights();
  for (std::size_t w = 0; w < ws.size(); ++w) {
    ++lineno;
    if (!std::getline(in, line)) throw ParseError("truncated checkpoint", lineno);
    std::istringstream wh(line);
    std::string name;
    std::size_t rows = 0, cols = 0;
    if (!(wh >> name >> rows >> cols) || name != ModelParams::kWeightNames[w]) {
      throw ParseError("expected weight '" + std::string(ModelParams::kWeightNames[w]) + "'", lineno);
    }
    std::vector<Real> data;
    data.reserve(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      ++lineno;
      if (!std::getline(in, line)) throw ParseError("truncated checkpoint", lineno);
      std::istringstream vals(line);
      std::size_t count = 0;
      for (std::string tok; vals >> tok; ++count) data.push_back(parse_real(tok));
      if (count != cols) throw ParseError("row has " + std::to_string(count) + " values", lineno);
    }
    *ws[w] = Matrix(rows, cols, std::move(data));
  }
  const ModelDims& d = p.dims;
  if (p.embedding.rows() != d.vocab_size || p.embedding.cols() != d.embed_dim ||
      p.video_proj.rows() != d.context_width() || p.video_proj.cols() != d.hidden_dim ||
      p.query_proj.rows() != d.embed_dim || p.query_proj.cols() != d.hidden_dim ||
      p.mixing.rows() != d.hidden_dim || p.mixing.cols() != d.hidden_dim || p.start_head.rows() != d.hidden_dim ||
      p.start_head.cols() != 1 || p.end_head.rows() != d.hidden_dim || p.end_head.cols() != 1) {
    throw InvariantError("checkpoint weight shapes disagree with its header");
  }
  if (!p.all_finite()) throw InvariantError("checkpoint has non-finite weights");
  return p;
}

inline ModelParams load_checkpoint(const fs::path& path) { return parse_checkpoint(read_text(path)); }

// ---------------------------------------------------------------- attack results

/// One attacked sample. `pixel_delta` and `fit` are present when the perturbation
/// was also fitted in pixel space.
struct AttackRecord {
  std::string id;
  std::string variant;
  Real budget = 0.0;
  Perturbation perturbation;
  std::optional<TemporalMask> mask;
  std::optional<Matrix> pixel_delta;
  std::optional<PixelFit> fit;
  Matrix pixel_features;  // extract(video + pixel_delta), when fitted
};

struct AttackResults {
  std::string config_hash;
  json config;  // canonical key/value map of the run
  std::vector<AttackRecord> records;
};

/// results.jsonl with a `.bin` sidecar next to it for the matrices.
inline void save_attack_results(const fs::path& path, const AttackResults& res) {
  fs::path bin_path = path;
  bin_path += ".bin";
  BinaryWriter bin;
  std::string lines = json{{"format", "sneak-attack-results"},
                           {"version", 1},
                           {"config_hash", res.config_hash},
                           {"config", res.config},
                           {"arrays", bin_path.filename().string()}}
                          .dump() +
                      "\n";
  for (const auto& r : res.records) {
    const Perturbation& p = r.perturbation;
    std::vector<json> choices;
    for (auto q : p.query_choices) choices.push_back(q == kAllQueries ? json(nullptr) : json(q));
    json j{{"id", r.id},
           {"variant", r.variant},
           {"budget", r.budget},
           {"config_hash", res.config_hash},
           {"objective", p.objective},
           {"best_iteration", p.best_iteration},
           {"delta_norm", frobenius_norm(p.delta)},
           {"trace", p.trace},
           {"query_choices", choices},
           {"delta", array_ref(bin.put_f64(p.delta.values()), p.delta.rows(), p.delta.cols())}};
    if (r.mask) j["mask"] = {{"keep_fraction", r.mask->keep_fraction}, {"bits", r.mask->bits()}};
    if (r.pixel_delta && r.fit) {
      const PixelFit& f = *r.fit;
      j["pixel_delta"] = array_ref(bin.put_f64(r.pixel_delta->values()), r.pixel_delta->rows(), r.pixel_delta->cols());
      j["pixel_features"] =
          array_ref(bin.put_f64(r.pixel_features.values()), r.pixel_features.rows(), r.pixel_features.cols());
      j["fit"] = {{"initial_mse", f.initial_mse}, {"final_mse", f.final_mse}, {"steps", f.steps_taken},
                  {"lr", f.lr},                   {"tol", f.tol},             {"linf", f.linf()},
                  {"l2", f.l2()},                 {"clip_mse", f.clip_mse},   {"mse_reduction", "mean"}};
    }
    lines += j.dump() + "\n";
  }
  write_text(path, lines);
  bin.save(bin_path);
}

inline AttackResults load_attack_results(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty attack results", 1);
  const json header = json::parse(line);
  if (header.value("format", "") != "sneak-attack-results") throw InputError(path.string() + " is not attack results");
  AttackResults res;
  res.config_hash = header.at("config_hash");
  res.config = header.at("config");
  const BinaryReader bin(path.parent_path() / header.at("arrays").get<std::string>());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = json::parse(line);
    AttackRecord r;
    r.id = j.at("id");
    r.variant = j.at("variant");
    r.budget = j.at("budget");
    r.perturbation.objective = j.at("objective");
    r.perturbation.best_iteration = j.at("best_iteration");
    r.perturbation.trace = j.at("trace").get<std::vector<Real>>();
    for (const auto& q : j.at("query_choices")) {
      r.perturbation.query_choices.push_back(q.is_null() ? kAllQueries : q.get<std::size_t>());
    }
    r.perturbation.delta = read_matrix(bin, j.at("delta"));
    if (j.contains("mask")) {
      TemporalMask m;
      m.keep_fraction = j["mask"].at("keep_fraction");
      for (char c : j["mask"].at("bits").get<std::string>()) m.keep.push_back(c == '1');
      r.mask = m;
    }
    if (j.contains("pixel_delta")) {
      r.pixel_delta = read_matrix(bin, j.at("pixel_delta"));
      r.pixel_features = read_matrix(bin, j.at("pixel_features"));
      PixelFit f;
      const json& fj = j.at("fit");
      f.initial_mse = fj.at("initial_mse");
      f.final_mse = fj.at("final_mse");
      f.steps_taken = fj.at("steps");
      f.lr = fj.at("lr");
      f.tol = fj.at("tol");
      f.clip_mse = fj.at("clip_mse").get<std::vector<Real>>();
      f.delta = *r.pixel_delta;
      r.fit = f;
    }
    if (frobenius_norm(r.perturbation.delta) > r.budget + 1e-9) {
      throw InvariantError("attack record " + r.id + " exceeds its budget");
    }
    res.records.push_back(std::move(r));
  }
  return res;
}

// ---------------------------------------------------------------- JSONL logs

inline std::string jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

}  // namespace sneak::io
