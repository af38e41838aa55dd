#include "fctc/data.hpp"

#include "fctc/binio.hpp"
#include "fctc/encoder.hpp"
#include "fctc/kvconfig.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace fctc {

void SyntheticTaskSpec::validate() const {
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (feat_dim < 7) throw ConfigError("feat_dim must be >= 7");
  if (tokens_min < 1 || tokens_max < tokens_min) throw ConfigError("bad tokens_per_utt range");
  if (frames_min < 4 || frames_max < frames_min) {
    throw ConfigError("frames_per_token range must be non-empty with min >= 4");
  }
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (n_train < 1 || n_valid < 0 || n_test < 0) throw ConfigError("bad split sizes");
}

std::string SyntheticTaskSpec::to_text() const {
  std::ostringstream os;
  os << "vocab_size=" << vocab_size << "\n";
  os << "feat_dim=" << feat_dim << "\n";
  os << "tokens_min=" << tokens_min << "\n";
  os << "tokens_max=" << tokens_max << "\n";
  os << "frames_min=" << frames_min << "\n";
  os << "frames_max=" << frames_max << "\n";
  os << "noise_std=" << noise_std << "\n";
  os << "prototype_seed=" << prototype_seed << "\n";
  os << "n_train=" << n_train << "\n";
  os << "n_valid=" << n_valid << "\n";
  os << "n_test=" << n_test << "\n";
  return os.str();
}

SyntheticTaskSpec SyntheticTaskSpec::from_text(const std::string& text) {
  kv::Lookup kv(kv::parse(text));
  SyntheticTaskSpec s;
  s.vocab_size = static_cast<int>(kv.integer("vocab_size", s.vocab_size));
  s.feat_dim = static_cast<int>(kv.integer("feat_dim", s.feat_dim));
  s.tokens_min = static_cast<int>(kv.integer("tokens_min", s.tokens_min));
  s.tokens_max = static_cast<int>(kv.integer("tokens_max", s.tokens_max));
  s.frames_min = static_cast<int>(kv.integer("frames_min", s.frames_min));
  s.frames_max = static_cast<int>(kv.integer("frames_max", s.frames_max));
  s.noise_std = kv.real("noise_std", s.noise_std);
  s.prototype_seed = static_cast<std::uint64_t>(kv.integer("prototype_seed",
      static_cast<std::int64_t>(s.prototype_seed)));
  s.n_train = static_cast<int>(kv.integer("n_train", s.n_train));
  s.n_valid = static_cast<int>(kv.integer("n_valid", s.n_valid));
  s.n_test = static_cast<int>(kv.integer("n_test", s.n_test));
  s.validate();
  return s;
}

SyntheticTaskSpec SyntheticTaskSpec::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open task spec: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

namespace {

// One utterance from a dedicated rng stream; returns false if the rendered
// length cannot host the transcript after 4x subsampling.
bool render_utterance(const SyntheticTaskSpec& spec, const std::vector<Mat>& prototypes,
                      Rng& rng, Utterance& out) {
  const int n_tokens = static_cast<int>(rng.uniform_int(spec.tokens_min, spec.tokens_max));
  out.transcript.resize(n_tokens);
  for (int& id : out.transcript) id = static_cast<int>(rng.uniform_int(1, spec.vocab_size));

  std::vector<Mat> rows;
  Eigen::Index total = 0;
  auto noise_frame = [&](const Mat* proto) {
    Mat f(1, spec.feat_dim);
    for (int d = 0; d < spec.feat_dim; ++d) {
      f(0, d) = (proto ? (*proto)(0, d) : 0.0) + spec.noise_std * rng.normal();
    }
    return f;
  };
  // leading silence
  const int lead = static_cast<int>(rng.uniform_int(2, 5));
  for (int i = 0; i < lead; ++i) rows.push_back(noise_frame(nullptr));
  for (int ti = 0; ti < n_tokens; ++ti) {
    const int dur = static_cast<int>(rng.uniform_int(spec.frames_min, spec.frames_max));
    const Mat& proto = prototypes[out.transcript[ti] - 1];
    for (int i = 0; i < dur; ++i) rows.push_back(noise_frame(&proto));
    if (ti + 1 < n_tokens) {
      const int gap = static_cast<int>(rng.uniform_int(2, 5));
      for (int i = 0; i < gap; ++i) rows.push_back(noise_frame(nullptr));
    }
  }
  const int tail = static_cast<int>(rng.uniform_int(2, 5));
  for (int i = 0; i < tail; ++i) rows.push_back(noise_frame(nullptr));

  total = static_cast<Eigen::Index>(rows.size());
  out.features.resize(total, spec.feat_dim);
  for (Eigen::Index r = 0; r < total; ++r) out.features.row(r) = rows[r].row(0);

  if (total < 7) return false;
  return min_alignment_length(out.transcript) <= subsampled_length(total);
}

std::vector<Utterance> generate_split(const SyntheticTaskSpec& spec,
                                      const std::vector<Mat>& prototypes,
                                      const std::string& split_name, int split_index,
                                      int count) {
  std::vector<Utterance> utts;
  utts.reserve(count);
  for (int i = 0; i < count; ++i) {
    Utterance u;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%04d", split_name.c_str(), i);
    u.id = idbuf;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      Rng rng(mix_seed(spec.prototype_seed,
                       static_cast<std::uint64_t>(split_index) * 1000000ULL +
                           static_cast<std::uint64_t>(i) * 128ULL + attempt));
      ok = render_utterance(spec, prototypes, rng, u);
    }
    if (!ok) throw DataError("could not generate a feasible utterance: " + u.id);
    utts.push_back(std::move(u));
  }
  return utts;
}

}  // namespace

Dataset generate_dataset(const SyntheticTaskSpec& spec) {
  spec.validate();
  Rng proto_rng(spec.prototype_seed);
  std::vector<Mat> prototypes;
  for (int v = 0; v < spec.vocab_size; ++v) {
    Mat p(1, spec.feat_dim);
    for (int d = 0; d < spec.feat_dim; ++d) p(0, d) = proto_rng.normal();
    prototypes.push_back(std::move(p));
  }
  Dataset ds;
  for (int v = 1; v <= spec.vocab_size; ++v) ds.vocab.tokens.push_back("tok" + std::to_string(v));
  ds.train = generate_split(spec, prototypes, "train", 1, spec.n_train);
  ds.valid = generate_split(spec, prototypes, "valid", 2, spec.n_valid);
  ds.test = generate_split(spec, prototypes, "test", 3, spec.n_test);
  return ds;
}

Mat spec_augment(const Mat& x, int n_time_masks, int time_width, int n_freq_masks,
                 int freq_width, std::uint64_t seed) {
  if (time_width > x.rows() || freq_width > x.cols()) {
    throw ConfigError("spec_augment: mask width exceeds extent");
  }
  Mat out = x;
  Rng rng(seed);
  for (int m = 0; m < n_time_masks; ++m) {
    const int w = static_cast<int>(rng.uniform_int(0, time_width));
    if (w == 0) continue;
    const int start = static_cast<int>(rng.uniform_int(0, x.rows() - w));
    out.middleRows(start, w).setZero();
  }
  for (int m = 0; m < n_freq_masks; ++m) {
    const int w = static_cast<int>(rng.uniform_int(0, freq_width));
    if (w == 0) continue;
    const int start = static_cast<int>(rng.uniform_int(0, x.cols() - w));
    out.middleCols(start, w).setZero();
  }
  return out;
}

void write_features(const std::string& path, const Mat& features) {
  if (features.rows() == 0 || features.cols() == 0) {
    throw FormatError("refusing to write empty feature matrix: " + path);
  }
  auto os = binio::open_out(path);
  binio::write_magic(os, "FEAT");
  binio::write_u32(os, static_cast<std::uint32_t>(features.rows()));
  binio::write_u32(os, static_cast<std::uint32_t>(features.cols()));
  binio::write_bytes(os, features.data(), sizeof(double) * features.size());
}

Mat read_features(const std::string& path) {
  auto is = binio::open_in(path);
  binio::Reader r(is, path);
  r.expect_magic("FEAT");
  const std::uint32_t t = r.read_u32();
  const std::uint32_t d = r.read_u32();
  if (t == 0 || d == 0) throw FormatError(path + ": zero dimension");
  Mat m(t, d);
  r.read_f64_block(m.data(), static_cast<std::size_t>(t) * d);
  return m;
}

std::vector<Utterance> load_manifest(const std::string& tsv_path, const Vocab& vocab,
                                     const std::string& base_dir) {
  std::ifstream is(tsv_path);
  if (!is) throw DataError("cannot open manifest: " + tsv_path);
  std::vector<Utterance> utts;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, feat_path, tokens;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, feat_path, '\t')) {
      throw DataError(tsv_path + ":" + std::to_string(lineno) + ": expected 3 TSV columns");
    }
    std::getline(ls, tokens);
    if (!seen.insert(id).second) {
      throw DataError(tsv_path + ":" + std::to_string(lineno) + ": duplicate utterance id " + id);
    }
    Utterance u;
    u.id = id;
    u.features = read_features((fs::path(base_dir) / feat_path).string());
    std::istringstream ts(tokens);
    int tok;
    while (ts >> tok) {
      if (tok < 1 || tok >= vocab.extended_size()) {
        throw DataError(tsv_path + ":" + std::to_string(lineno) + ": token id " +
                        std::to_string(tok) + " outside vocabulary");
      }
      u.transcript.push_back(tok);
    }
    utts.push_back(std::move(u));
  }
  return utts;
}

namespace {

void write_split(const fs::path& dir, const std::string& name,
                 const std::vector<Utterance>& utts) {
  std::ofstream tsv(dir / (name + ".tsv"));
  for (const auto& u : utts) {
    const std::string rel = "feats/" + u.id + ".feat";
    write_features((dir / rel).string(), u.features);
    tsv << u.id << "\t" << rel << "\t";
    for (std::size_t i = 0; i < u.transcript.size(); ++i) {
      if (i > 0) tsv << " ";
      tsv << u.transcript[i];
    }
    tsv << "\n";
  }
}

}  // namespace

void write_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(fs::path(dir) / "feats");
  ds.vocab.save((fs::path(dir) / "vocab.txt").string());
  write_split(dir, "train", ds.train);
  write_split(dir, "valid", ds.valid);
  write_split(dir, "test", ds.test);
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.vocab = Vocab::load((fs::path(dir) / "vocab.txt").string());
  ds.train = load_manifest((fs::path(dir) / "train.tsv").string(), ds.vocab, dir);
  ds.valid = load_manifest((fs::path(dir) / "valid.tsv").string(), ds.vocab, dir);
  ds.test = load_manifest((fs::path(dir) / "test.tsv").string(), ds.vocab, dir);
  return ds;
}

}  // namespace fctc
