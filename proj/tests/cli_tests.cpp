// End-to-end exercise of the foldctc binary. argv[1] is the path to the
// built CLI; everything runs inside a scratch directory under /tmp.

#include <json.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int g_failures = 0;

#define CLI_CHECK(cond, what)                                           \
  do {                                                                  \
    if (cond) {                                                         \
      std::printf("ok: %s\n", what);                                    \
    } else {                                                            \
      std::printf("FAILED: %s (line %d)\n", what, __LINE__);            \
      ++g_failures;                                                     \
    }                                                                   \
  } while (0)

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& cmd, const fs::path& scratch) {
  const fs::path out = scratch / "cmd_output.txt";
  const std::string full = cmd + " > " + out.string() + " 2>&1";
  const int raw = std::system(full.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream is(out);
  std::ostringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_tests <path-to-foldctc>\n");
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path scratch = fs::temp_directory_path() / "fctc_cli_tests";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  write_file(scratch / "task.spec",
             "vocab_size=3\n"
             "feat_dim=8\n"
             "tokens_min=1\n"
             "tokens_max=2\n"
             "frames_min=4\n"
             "frames_max=5\n"
             "noise_std=0.1\n"
             "prototype_seed=7\n"
             "n_train=12\n"
             "n_valid=4\n"
             "n_test=4\n");
  write_file(scratch / "model.conf",
             "variant=folded\n"
             "n_base=1\n"
             "n_folded=1\n"
             "n_repeat_train=3\n"
             "d_model=8\n"
             "d_ff=16\n"
             "n_heads=2\n"
             "conv_kernel=3\n"
             "dropout=0\n"
             "vocab_size=4\n"
             "feat_dim=8\n");
  write_file(scratch / "train.conf",
             "epochs=2\n"
             "batch_size=4\n"
             "warmup_steps=10\n"
             "lr_factor=0.1\n"
             "seed=1\n"
             "ckpt_average_k=2\n");

  // --- gen -------------------------------------------------------------------
  const fs::path data = scratch / "data";
  RunResult r = run(cli + " gen --spec " + (scratch / "task.spec").string() + " --out " +
                        data.string(),
                    scratch);
  CLI_CHECK(r.code == 0, "gen exits 0");
  CLI_CHECK(fs::exists(data / "vocab.txt"), "gen writes vocab.txt");
  CLI_CHECK(fs::exists(data / "train.tsv"), "gen writes train.tsv");
  CLI_CHECK(fs::exists(data / "feats" / "train_0000.feat"), "gen writes feature files");

  r = run(cli + " gen --spec " + (scratch / "task.spec").string() + " --out " + data.string(),
          scratch);
  CLI_CHECK(r.code == 1, "gen refuses an existing output directory");
  CLI_CHECK(r.output.find("--force") != std::string::npos, "refusal mentions --force");

  const fs::path data2 = scratch / "data2";
  r = run(cli + " gen --spec " + (scratch / "task.spec").string() + " --out " + data2.string(),
          scratch);
  CLI_CHECK(r.code == 0, "gen to a second directory exits 0");
  CLI_CHECK(slurp(data / "feats" / "train_0003.feat") ==
                slurp(data2 / "feats" / "train_0003.feat"),
            "generated features are byte-identical across runs");

  // --- params ----------------------------------------------------------------
  r = run(cli + " params --model " + (scratch / "model.conf").string(), scratch);
  CLI_CHECK(r.code == 0, "params exits 0");
  CLI_CHECK(r.output.find("total\t") != std::string::npos, "params prints a total");
  CLI_CHECK(r.output.find("folded\t") != std::string::npos, "params breaks out the folded block");
  CLI_CHECK(r.output.find("frontend\t") != std::string::npos, "params breaks out the frontend");

  r = run(cli + " params --model " + (scratch / "missing.conf").string(), scratch);
  CLI_CHECK(r.code == 1, "params with a missing config exits 1");

  // --- gradcheck -------------------------------------------------------------
  r = run(cli + " gradcheck --model " + (scratch / "model.conf").string() + " --samples 20",
          scratch);
  CLI_CHECK(r.code == 0, "gradcheck exits 0");
  CLI_CHECK(r.output.find("PASS") != std::string::npos, "gradcheck prints PASS");

  r = run(cli + " gradcheck --model " + (scratch / "model.conf").string() +
              " --samples 5 --tolerance 0",
          scratch);
  CLI_CHECK(r.code == 3, "impossible gradcheck tolerance exits 3");
  CLI_CHECK(r.output.find("FAIL") != std::string::npos, "failed gradcheck prints FAIL");

  // --- train -----------------------------------------------------------------
  const fs::path rundir = scratch / "run";
  r = run(cli + " train --model " + (scratch / "model.conf").string() + " --train " +
              (scratch / "train.conf").string() + " --data " + data.string() + " --out " +
              rundir.string(),
          scratch);
  CLI_CHECK(r.code == 0, "train exits 0");
  CLI_CHECK(fs::exists(rundir / "avg.ckpt"), "train writes avg.ckpt");
  CLI_CHECK(fs::exists(rundir / "metrics.jsonl"), "train writes metrics.jsonl");
  {
    std::ifstream metrics(rundir / "metrics.jsonl");
    std::string line;
    bool every_line_is_json = true;
    int lines = 0;
    while (std::getline(metrics, line)) {
      ++lines;
      try {
        every_line_is_json = !nlohmann::json::parse(line).is_discarded() && every_line_is_json;
      } catch (...) {
        every_line_is_json = false;
      }
    }
    CLI_CHECK(lines > 0 && every_line_is_json, "metrics.jsonl is one JSON object per line");
  }

  write_file(scratch / "train_more.conf",
             "epochs=3\n"
             "batch_size=4\n"
             "warmup_steps=10\n"
             "lr_factor=0.1\n"
             "seed=1\n"
             "ckpt_average_k=3\n");
  r = run(cli + " train --model " + (scratch / "model.conf").string() + " --train " +
              (scratch / "train_more.conf").string() + " --data " + data.string() + " --out " +
              rundir.string() + " --resume",
          scratch);
  CLI_CHECK(r.code == 0, "train --resume exits 0");
  CLI_CHECK(fs::exists(rundir / "epoch_003.ckpt"), "resume adds the third epoch checkpoint");

  // --- eval ------------------------------------------------------------------
  const fs::path report = scratch / "report.json";
  r = run(cli + " eval --ckpt " + (rundir / "avg.ckpt").string() + " --data " + data.string() +
              " --split test --out " + report.string(),
          scratch);
  CLI_CHECK(r.code == 0, "eval exits 0");
  {
    nlohmann::json j;
    bool parsed = true;
    try {
      j = nlohmann::json::parse(slurp(report));
    } catch (...) {
      parsed = false;
    }
    CLI_CHECK(parsed, "eval report is valid JSON");
    CLI_CHECK(parsed && j.contains("ter") && j.contains("wer") && j.contains("rtf"),
              "eval report carries ter/wer/rtf");
    CLI_CHECK(parsed && j["utterances"].size() == 4, "eval scored every test utterance");
    CLI_CHECK(parsed && j["wer"] == j["ter"], "wer equals ter for token-level scoring");
  }

  r = run(cli + " eval --ckpt " + (rundir / "avg.ckpt").string() + " --data " + data.string() +
              " --split nope",
          scratch);
  CLI_CHECK(r.code == 2, "eval with an unknown split exits 2");

  {
    const fs::path broken = scratch / "broken.ckpt";
    fs::copy_file(rundir / "avg.ckpt", broken);
    fs::resize_file(broken, 16);
    r = run(cli + " eval --ckpt " + broken.string() + " --data " + data.string(), scratch);
    CLI_CHECK(r.code == 2, "eval with a truncated checkpoint exits 2");
  }

  // --- sweep-repeats ---------------------------------------------------------
  const fs::path sweep = scratch / "sweep.tsv";
  r = run(cli + " sweep-repeats --ckpt " + (rundir / "avg.ckpt").string() + " --data " +
              data.string() + " --split test --repeats 1,3,5 --out " + sweep.string(),
          scratch);
  CLI_CHECK(r.code == 0, "sweep-repeats exits 0");
  {
    std::ifstream tsv(sweep);
    std::string header;
    std::getline(tsv, header);
    CLI_CHECK(header == "repeat\tter\twer\tis_train_repeat", "sweep TSV header");
    int rows = 0;
    bool train_repeat_flagged = false;
    std::string line;
    while (std::getline(tsv, line)) {
      if (line.empty()) continue;
      ++rows;
      if (line.rfind("3\t", 0) == 0 && line.back() == '1') train_repeat_flagged = true;
    }
    CLI_CHECK(rows == 3, "sweep has one row per requested repeat");
    CLI_CHECK(train_repeat_flagged, "the training repeat count is flagged");
  }

  // --- usage errors ----------------------------------------------------------
  r = run(cli + " frobnicate", scratch);
  CLI_CHECK(r.code == 1, "unknown subcommand exits 1");
  r = run(cli + " eval", scratch);
  CLI_CHECK(r.code == 1, "missing required options exit 1");
  r = run(cli + " --help", scratch);
  CLI_CHECK(r.code == 0, "--help exits 0");

  fs::remove_all(scratch);
  if (g_failures > 0) {
    std::printf("%d CLI check(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all CLI checks passed\n");
  return 0;
}
