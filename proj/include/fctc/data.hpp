#ifndef FCTC_DATA_HPP
#define FCTC_DATA_HPP

#include "fctc/ctc.hpp"

#include <string>
#include <vector>

namespace fctc {

/// Synthetic desk-scale stand-in for a speech corpus: each token has a fixed
/// feature prototype, rendered for a random duration with additive noise and
/// low-energy silence gaps, so blank/alignment machinery is exercised.
struct SyntheticTaskSpec {
  int vocab_size = 8;   // |V|, excluding blank
  int feat_dim = 20;
  int tokens_min = 3;
  int tokens_max = 8;
  int frames_min = 10;  // per token; must be >= 4 to survive 4x subsampling
  int frames_max = 14;
  double noise_std = 0.1;
  std::uint64_t prototype_seed = 7;
  int n_train = 300;
  int n_valid = 50;
  int n_test = 50;

  void validate() const;
  std::string to_text() const;
  static SyntheticTaskSpec from_text(const std::string& text);
  static SyntheticTaskSpec from_file(const std::string& path);
};

struct Utterance {
  std::string id;
  Mat features;  // T x D
  TokenSequence transcript;
};

struct Dataset {
  std::vector<Utterance> train, valid, test;
  Vocab vocab;
};

/// Pure function of the spec: same spec, same bytes, any platform.
Dataset generate_dataset(const SyntheticTaskSpec& spec);

/// Zero n_time_masks random time stripes and n_freq_masks feature stripes.
Mat spec_augment(const Mat& x, int n_time_masks, int time_width, int n_freq_masks,
                 int freq_width, std::uint64_t seed);

// "FEAT" binary: magic, u32 T, u32 D, float64 row-major little-endian.
void write_features(const std::string& path, const Mat& features);
Mat read_features(const std::string& path);

/// TSV manifest: id <TAB> feature_path <TAB> space-separated token ids.
/// Paths are resolved relative to base_dir.
std::vector<Utterance> load_manifest(const std::string& tsv_path, const Vocab& vocab,
                                     const std::string& base_dir);

/// Write vocab.txt, feats/*.feat and {train,valid,test}.tsv under dir.
void write_dataset(const std::string& dir, const Dataset& ds);

/// Load all three splits written by write_dataset.
Dataset load_dataset(const std::string& dir);

}  // namespace fctc

#endif  // FCTC_DATA_HPP
