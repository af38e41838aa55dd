#ifndef FCTC_CTC_HPP
#define FCTC_CTC_HPP

#include "fctc/graph.hpp"

#include <string>
#include <vector>

namespace fctc {

constexpr int kBlankId = 0;

/// Token inventory. Index 0 is the blank; real tokens occupy 1..|V|.
struct Vocab {
  std::vector<std::string> tokens;  // no blank entry

  int extended_size() const { return static_cast<int>(tokens.size()) + 1; }

  static Vocab load(const std::string& path);
  void save(const std::string& path) const;
};

/// Target/decoded label ids over V (never the blank).
using TokenSequence = std::vector<int>;

/// Length-T sequence over V' = V + blank.
using Alignment = std::vector<int>;

/// Per-frame log distributions over V'.
struct Posteriorgram {
  Mat log_probs;  // T' x |V'|

  static Posteriorgram read(const std::string& path);
  void write(const std::string& path) const;
};

/// Merge maximal runs of identical symbols, then delete blanks.
TokenSequence collapse(const Alignment& a);

/// Shortest alignment able to produce y: L plus one separating blank per
/// adjacent equal pair.
int min_alignment_length(const TokenSequence& y);

/// -log P_CTC(y | z) via the log-space forward DP over the 2L+1 lattice,
/// differentiable through the graph. z holds probabilities (post-softmax).
/// Throws InfeasibleTargetError when T' < min_alignment_length(y).
ag::Node ctc_neg_log_likelihood(ag::Node z, const TokenSequence& y);

/// Exhaustive-enumeration oracle: sum of probabilities of all alignments
/// collapsing to y. Guarded to |V'|^T <= 1e7.
double brute_force_ctc_prob(const Mat& log_probs, const TokenSequence& y);

/// -log of the above; +inf when no alignment exists.
double brute_force_ctc_neg_log(const Mat& log_probs, const TokenSequence& y);

/// Per-frame argmax (ties to the lowest index), then collapse.
TokenSequence best_path_decode(const Mat& log_probs);

}  // namespace fctc

#endif  // FCTC_CTC_HPP
