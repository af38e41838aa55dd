#include "fctc/data.hpp"

#include "fctc/encoder.hpp"
#include "fd_check.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace fctc;
using namespace fctc::test;

namespace {

SyntheticTaskSpec tiny_spec() {
  SyntheticTaskSpec s;
  s.vocab_size = 3;
  s.feat_dim = 8;
  s.tokens_min = 1;
  s.tokens_max = 2;
  s.frames_min = 4;
  s.frames_max = 5;
  s.n_train = 12;
  s.n_valid = 4;
  s.n_test = 4;
  return s;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("task spec text round-trip and validation") {
  SyntheticTaskSpec s = tiny_spec();
  SyntheticTaskSpec back = SyntheticTaskSpec::from_text(s.to_text());
  CHECK(back.to_text() == s.to_text());

  SyntheticTaskSpec bad = s;
  bad.frames_min = 3;  // cannot survive 4x subsampling
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.feat_dim = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("generation is a pure function of the spec") {
  const SyntheticTaskSpec spec = tiny_spec();
  Dataset a = generate_dataset(spec);
  Dataset b = generate_dataset(spec);
  REQUIRE(a.train.size() == 12);
  REQUIRE(a.valid.size() == 4);
  REQUIRE(a.test.size() == 4);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].id == b.train[i].id);
    CHECK(a.train[i].transcript == b.train[i].transcript);
    CHECK(a.train[i].features == b.train[i].features);  // bit-identical
  }
  // A different seed produces different renderings.
  SyntheticTaskSpec other = spec;
  other.prototype_seed = spec.prototype_seed + 1;
  Dataset c = generate_dataset(other);
  CHECK(c.train[0].features != a.train[0].features);
}

TEST_CASE("every generated utterance admits a CTC alignment") {
  SyntheticTaskSpec spec = tiny_spec();
  spec.tokens_max = 3;
  Dataset ds = generate_dataset(spec);
  for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
    for (const auto& u : *split) {
      CHECK(u.features.rows() >= 7);
      CHECK(min_alignment_length(u.transcript) <= subsampled_length(u.features.rows()));
      for (int tok : u.transcript) {
        CHECK(tok >= 1);
        CHECK(tok <= spec.vocab_size);
      }
    }
  }
}

TEST_CASE("noise-free rendering is a function of transcript and durations") {
  SyntheticTaskSpec spec = tiny_spec();
  spec.noise_std = 0.0;
  spec.vocab_size = 2;
  spec.tokens_min = 1;
  spec.tokens_max = 1;
  spec.frames_min = 4;
  spec.frames_max = 4;
  spec.n_train = 40;
  Dataset ds = generate_dataset(spec);
  // Noise-free silence is exactly zero, so the leading-zero-row count recovers
  // each utterance's silence/token layout. Equal transcript + equal layout
  // must mean bit-identical features.
  auto lead_len = [](const Mat& f) {
    Eigen::Index n = 0;
    while (n < f.rows() && f.row(n).cwiseAbs().maxCoeff() == 0.0) ++n;
    return n;
  };
  bool compared = false;
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    for (std::size_t j = i + 1; j < ds.train.size(); ++j) {
      const auto& a = ds.train[i];
      const auto& b = ds.train[j];
      if (a.transcript == b.transcript && a.features.rows() == b.features.rows() &&
          lead_len(a.features) == lead_len(b.features)) {
        CHECK(a.features == b.features);
        compared = true;
      }
    }
  }
  CHECK(compared);  // 40 draws over a handful of layouts must collide
}

TEST_CASE("spec_augment") {
  Rng rng(3);
  Mat x = random_mat(rng, 12, 8, 0.5, 1.5);  // strictly nonzero entries

  CHECK(spec_augment(x, 0, 0, 0, 0, 1) == x);
  CHECK(spec_augment(x, 2, 3, 1, 2, 7) == spec_augment(x, 2, 3, 1, 2, 7));  // seeded
  CHECK_THROWS_AS(spec_augment(x, 1, 13, 0, 0, 1), ConfigError);
  CHECK_THROWS_AS(spec_augment(x, 0, 0, 1, 9, 1), ConfigError);

  // Masking only zeroes cells, bounded by the requested stripe budget.
  Mat y = spec_augment(x, 2, 3, 1, 2, 11);
  int zeroed = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y.data()[i] == 0.0) {
      ++zeroed;
    } else {
      CHECK(y.data()[i] == x.data()[i]);
    }
  }
  CHECK(zeroed <= 2 * 3 * 8 + 1 * 2 * 12);
}

TEST_CASE("feature file round-trip") {
  Rng rng(5);
  Mat feats = random_mat(rng, 50, 83);
  const std::string path = (fs::temp_directory_path() / "fctc_feat_test.feat").string();
  write_features(path, feats);
  CHECK(read_features(path) == feats);  // bit-exact

  fs::resize_file(path, 20);
  CHECK_THROWS_AS(read_features(path), FormatError);
  fs::remove(path);
  CHECK_THROWS_AS(write_features(path, Mat(0, 10)), FormatError);
  CHECK_FALSE(fs::exists(path));
}

TEST_CASE("dataset directory round-trip") {
  const SyntheticTaskSpec spec = tiny_spec();
  Dataset ds = generate_dataset(spec);
  const fs::path dir = fresh_dir("fctc_ds_roundtrip");
  write_dataset(dir.string(), ds);
  Dataset back = load_dataset(dir.string());
  CHECK(back.vocab.tokens == ds.vocab.tokens);
  REQUIRE(back.train.size() == ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(back.train[i].id == ds.train[i].id);
    CHECK(back.train[i].transcript == ds.train[i].transcript);
    CHECK(back.train[i].features == ds.train[i].features);
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest errors carry the offending line") {
  const fs::path dir = fresh_dir("fctc_manifest_err");
  Rng rng(7);
  write_features((dir / "u0.feat").string(), random_mat(rng, 10, 8));
  Vocab vocab;
  vocab.tokens = {"a", "b"};

  SUBCASE("duplicate utterance id") {
    std::ofstream tsv(dir / "m.tsv");
    tsv << "u0\tu0.feat\t1 2\n";
    tsv << "u0\tu0.feat\t2\n";
    tsv.close();
    CHECK_THROWS_WITH_AS(load_manifest((dir / "m.tsv").string(), vocab, dir.string()),
                         doctest::Contains(":2"), DataError);
  }

  SUBCASE("token id outside the vocabulary") {
    std::ofstream tsv(dir / "m.tsv");
    tsv << "u0\tu0.feat\t1 3\n";
    tsv.close();
    CHECK_THROWS_WITH_AS(load_manifest((dir / "m.tsv").string(), vocab, dir.string()),
                         doctest::Contains("token id 3"), DataError);
  }

  SUBCASE("missing column") {
    std::ofstream tsv(dir / "m.tsv");
    tsv << "u0\n";
    tsv.close();
    CHECK_THROWS_AS(load_manifest((dir / "m.tsv").string(), vocab, dir.string()), DataError);
  }
  fs::remove_all(dir);
}
