#ifndef FCTC_METRICS_HPP
#define FCTC_METRICS_HPP

#include "fctc/ctc.hpp"

#include <string>
#include <vector>

namespace fctc {

struct EditOps {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;

  int distance() const { return substitutions + deletions + insertions; }
};

/// Levenshtein alignment of hyp against ref.
EditOps edit_ops(const TokenSequence& ref, const TokenSequence& hyp);

struct UttResult {
  std::string id;
  TokenSequence reference;
  TokenSequence hypothesis;
  EditOps ops;
};

/// Corpus-level scoring report. Tokens are the only unit here, so WER and
/// TER coincide; both names are emitted. RTF uses a nominal 10 ms frame
/// shift since synthetic features carry no real audio clock.
struct EvalReport {
  std::vector<UttResult> utterances;
  double decode_seconds = 0.0;
  double audio_seconds = 0.0;

  int total_ref_tokens() const;
  EditOps totals() const;
  double error_rate() const;  // (S+D+I) / total reference tokens
  double rtf() const { return audio_seconds > 0.0 ? decode_seconds / audio_seconds : 0.0; }

  std::string to_json() const;
};

}  // namespace fctc

#endif  // FCTC_METRICS_HPP
