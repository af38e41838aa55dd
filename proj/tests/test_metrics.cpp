#include "fctc/metrics.hpp"

#include <doctest.h>
#include <json.hpp>

using namespace fctc;

TEST_CASE("edit_ops on hand-checked pairs") {
  CHECK(edit_ops({1, 2, 3}, {1, 2, 3}).distance() == 0);
  CHECK(edit_ops({}, {}).distance() == 0);

  EditOps del = edit_ops({1, 2, 3}, {1, 3});
  CHECK(del.deletions == 1);
  CHECK(del.substitutions == 0);
  CHECK(del.insertions == 0);

  EditOps ins = edit_ops({1}, {1, 2});
  CHECK(ins.insertions == 1);
  CHECK(ins.distance() == 1);

  EditOps sub = edit_ops({1, 2}, {1, 3});
  CHECK(sub.substitutions == 1);
  CHECK(sub.distance() == 1);

  CHECK(edit_ops({1, 2, 3}, {}).deletions == 3);
  CHECK(edit_ops({}, {4, 5}).insertions == 2);
  CHECK(edit_ops({1, 2, 3, 4}, {2, 3, 4, 5}).distance() == 2);
}

TEST_CASE("edit distance is symmetric in total count") {
  const TokenSequence a{1, 2, 2, 3}, b{2, 3, 1};
  CHECK(edit_ops(a, b).distance() == edit_ops(b, a).distance());
}

TEST_CASE("report totals and rates") {
  EvalReport report;
  UttResult u1;
  u1.id = "u1";
  u1.reference = {1, 2, 3};
  u1.hypothesis = {1, 3};
  u1.ops = edit_ops(u1.reference, u1.hypothesis);
  UttResult u2;
  u2.id = "u2";
  u2.reference = {2, 2, 1};
  u2.hypothesis = {2, 2, 1};
  u2.ops = edit_ops(u2.reference, u2.hypothesis);
  report.utterances = {u1, u2};
  report.decode_seconds = 0.5;
  report.audio_seconds = 10.0;

  CHECK(report.total_ref_tokens() == 6);
  CHECK(report.totals().distance() == 1);
  CHECK(report.error_rate() == doctest::Approx(1.0 / 6.0));
  CHECK(report.rtf() == doctest::Approx(0.05));

  const auto j = nlohmann::json::parse(report.to_json());
  CHECK(j["ter"].get<double>() == doctest::Approx(1.0 / 6.0));
  CHECK(j["wer"] == j["ter"]);
  CHECK(j["deletions"].get<int>() == 1);
  CHECK(j["total_ref_tokens"].get<int>() == 6);
  CHECK(j["utterances"].size() == 2);
  CHECK(j["utterances"][0]["id"] == "u1");
  CHECK(j["utterances"][0]["hypothesis"] == nlohmann::json::array({1, 3}));
  CHECK(j["frame_shift_ms"].get<double>() == 10.0);
}

TEST_CASE("empty reference edge cases") {
  EvalReport empty;
  CHECK(empty.error_rate() == 0.0);
  CHECK(empty.rtf() == 0.0);

  EvalReport insertions_only;
  UttResult u;
  u.reference = {};
  u.hypothesis = {1};
  u.ops = edit_ops(u.reference, u.hypothesis);
  insertions_only.utterances = {u};
  CHECK(insertions_only.error_rate() == 1.0);
}
