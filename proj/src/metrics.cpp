#include "fctc/metrics.hpp"

#include <json.hpp>

#include <vector>

namespace fctc {

EditOps edit_ops(const TokenSequence& ref, const TokenSequence& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  struct Cell {
    int cost;
    EditOps ops;
  };
  std::vector<std::vector<Cell>> dp(n + 1, std::vector<Cell>(m + 1));
  for (std::size_t j = 0; j <= m; ++j) {
    dp[0][j].cost = static_cast<int>(j);
    dp[0][j].ops.insertions = static_cast<int>(j);
  }
  for (std::size_t i = 1; i <= n; ++i) {
    dp[i][0].cost = static_cast<int>(i);
    dp[i][0].ops.deletions = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const bool match = ref[i - 1] == hyp[j - 1];
      const int sub_cost = dp[i - 1][j - 1].cost + (match ? 0 : 1);
      const int del_cost = dp[i - 1][j].cost + 1;
      const int ins_cost = dp[i][j - 1].cost + 1;
      if (sub_cost <= del_cost && sub_cost <= ins_cost) {
        dp[i][j] = dp[i - 1][j - 1];
        dp[i][j].cost = sub_cost;
        if (!match) ++dp[i][j].ops.substitutions;
      } else if (del_cost <= ins_cost) {
        dp[i][j] = dp[i - 1][j];
        dp[i][j].cost = del_cost;
        ++dp[i][j].ops.deletions;
      } else {
        dp[i][j] = dp[i][j - 1];
        dp[i][j].cost = ins_cost;
        ++dp[i][j].ops.insertions;
      }
    }
  }
  return dp[n][m].ops;
}

int EvalReport::total_ref_tokens() const {
  int n = 0;
  for (const auto& u : utterances) n += static_cast<int>(u.reference.size());
  return n;
}

EditOps EvalReport::totals() const {
  EditOps t;
  for (const auto& u : utterances) {
    t.substitutions += u.ops.substitutions;
    t.deletions += u.ops.deletions;
    t.insertions += u.ops.insertions;
  }
  return t;
}

double EvalReport::error_rate() const {
  const int refs = total_ref_tokens();
  if (refs == 0) return totals().distance() > 0 ? 1.0 : 0.0;
  return static_cast<double>(totals().distance()) / refs;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["utterances"] = nlohmann::json::array();
  for (const auto& u : utterances) {
    j["utterances"].push_back({{"id", u.id},
                               {"reference", u.reference},
                               {"hypothesis", u.hypothesis},
                               {"substitutions", u.ops.substitutions},
                               {"deletions", u.ops.deletions},
                               {"insertions", u.ops.insertions}});
  }
  const EditOps t = totals();
  j["substitutions"] = t.substitutions;
  j["deletions"] = t.deletions;
  j["insertions"] = t.insertions;
  j["total_ref_tokens"] = total_ref_tokens();
  j["ter"] = error_rate();
  j["wer"] = error_rate();  // tokens are the only unit here
  j["decode_seconds"] = decode_seconds;
  j["audio_seconds"] = audio_seconds;
  j["rtf"] = rtf();
  j["frame_shift_ms"] = 10.0;  // nominal; synthetic features have no audio clock
  return j.dump(2);
}

}  // namespace fctc
