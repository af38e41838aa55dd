#include "fctc/data.hpp"
#include "fctc/metrics.hpp"
#include "fctc/model.hpp"
#include "fctc/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace fctc;

namespace {

constexpr double kFrameShiftSeconds = 0.010;  // nominal

std::vector<Utterance> load_split(const std::string& data_dir, const std::string& split) {
  const Vocab vocab = Vocab::load((fs::path(data_dir) / "vocab.txt").string());
  return load_manifest((fs::path(data_dir) / (split + ".tsv")).string(), vocab, data_dir);
}

EvalReport evaluate(ParameterStore& store, const ModelConfig& cfg,
                    const std::vector<Utterance>& utts, int repeat) {
  EvalReport report;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& u : utts) {
    ag::Graph g;
    ForwardOutput fo = forward(g, store, cfg, u.features, repeat);
    const Mat logp = fo.final.value().array().log();
    UttResult res;
    res.id = u.id;
    res.reference = u.transcript;
    res.hypothesis = best_path_decode(logp);
    res.ops = edit_ops(res.reference, res.hypothesis);
    report.utterances.push_back(std::move(res));
    report.audio_seconds += static_cast<double>(u.features.rows()) * kFrameShiftSeconds;
  }
  report.decode_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

int cmd_gen(const std::string& spec_path, const std::string& out_dir, bool force) {
  const SyntheticTaskSpec spec = SyntheticTaskSpec::from_file(spec_path);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
    throw ConfigError("output directory exists (use --force to overwrite): " + out_dir);
  }
  const Dataset ds = generate_dataset(spec);
  write_dataset(out_dir, ds);
  std::cout << "wrote " << ds.train.size() << " train, " << ds.valid.size() << " valid, "
            << ds.test.size() << " test utterances to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& model_path, const std::string& train_path,
              const std::string& data_dir, const std::string& out_dir, bool resume) {
  const ModelConfig model_cfg = ModelConfig::from_file(model_path);
  const TrainConfig train_cfg = TrainConfig::from_file(train_path);
  auto train_set = load_split(data_dir, "train");
  auto valid_set = load_split(data_dir, "valid");
  fs::create_directories(out_dir);
  std::ofstream log((fs::path(out_dir) / "metrics.jsonl").string(),
                    resume ? std::ios::app : std::ios::trunc);
  TrainResult result = train(model_cfg, train_cfg, train_set, valid_set, out_dir, log, resume);
  std::cout << "trained " << result.steps << " steps, wrote "
            << (fs::path(out_dir) / "avg.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split, int repeat, const std::string& out_path) {
  auto [cfg, store] = load_checkpoint(ckpt_path);
  auto utts = load_split(data_dir, split);
  const int r = repeat > 0 ? repeat : cfg.n_repeat_train;
  EvalReport report = evaluate(store, cfg, utts, r);
  const std::string json = report.to_json();
  if (out_path.empty()) {
    std::cout << json << "\n";
  } else {
    std::ofstream os(out_path);
    os << json << "\n";
    std::cout << "wer=" << report.error_rate() << " rtf=" << report.rtf() << " -> "
              << out_path << "\n";
  }
  return 0;
}

int cmd_params(const std::string& model_path) {
  const ModelConfig cfg = ModelConfig::from_file(model_path);
  const ParameterStore store = build(cfg, 0);
  for (const auto& [component, count] : param_breakdown(store)) {
    std::cout << component << "\t" << count << "\n";
  }
  std::cout << "total\t" << count_params(store) << "\n";
  return 0;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& data_dir,
              const std::string& split, const std::string& repeats,
              const std::string& out_path) {
  auto [cfg, store] = load_checkpoint(ckpt_path);
  if (cfg.variant != Variant::folded) {
    throw ConfigError("sweep-repeats requires a folded-variant checkpoint");
  }
  auto utts = load_split(data_dir, split);
  std::vector<int> rs;
  {
    std::istringstream is(repeats);
    std::string item;
    while (std::getline(is, item, ',')) {
      if (!item.empty()) rs.push_back(std::stoi(item));
    }
  }
  if (rs.empty()) throw ConfigError("--repeats: empty list");
  std::sort(rs.begin(), rs.end());
  std::ostringstream tsv;
  tsv << "repeat\tter\twer\tis_train_repeat\n";
  for (int r : rs) {
    if (r < 1) throw ConfigError("repeat values must be >= 1");
    EvalReport report = evaluate(store, cfg, utts, r);
    tsv << r << "\t" << report.error_rate() << "\t" << report.error_rate() << "\t"
        << (r == cfg.n_repeat_train ? 1 : 0) << "\n";
  }
  if (out_path.empty()) {
    std::cout << tsv.str();
  } else {
    std::ofstream os(out_path);
    os << tsv.str();
  }
  return 0;
}

int cmd_gradcheck(const std::string& model_path, double tolerance, int samples) {
  const ModelConfig cfg = ModelConfig::from_file(model_path);
  const GradCheckReport report = grad_check(cfg, tolerance, samples);
  std::cout << (report.pass ? "PASS" : "FAIL") << " max_rel_err=" << report.max_rel_err
            << " checked=" << report.checked << " tolerance=" << tolerance << "\n";
  return report.pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CTC-based non-autoregressive ASR with self-conditioned folded encoders"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, model_path, train_path, data_dir, ckpt_path;
  std::string split = "test", out_path, repeats = "1,2,3,4,5,6";
  bool force = false, resume = false;
  int repeat = 0, samples = 200;
  double tolerance = 1e-4;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "task spec file (key=value)")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_flag("--force", force, "overwrite existing output");

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--model", model_path, "model config file")->required();
  tr->add_option("--train", train_path, "train config file")->required();
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_flag("--resume", resume, "continue from the last checkpoint");

  auto* ev = app.add_subcommand("eval", "decode and score a split");
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--split", split, "split name (default test)");
  ev->add_option("--repeat", repeat, "decode-time repeats (folded models)");
  ev->add_option("--out", out_path, "write the JSON report here");

  auto* pa = app.add_subcommand("params", "print parameter counts");
  pa->add_option("--model", model_path, "model config file")->required();

  auto* sw = app.add_subcommand("sweep-repeats", "TER/WER across decode repeats");
  sw->add_option("--ckpt", ckpt_path, "folded checkpoint")->required();
  sw->add_option("--data", data_dir, "dataset directory")->required();
  sw->add_option("--split", split, "split name (default test)");
  sw->add_option("--repeats", repeats, "comma-separated repeat values");
  sw->add_option("--out", out_path, "write the TSV here");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gc->add_option("--model", model_path, "model config file")->required();
  gc->add_option("--tolerance", tolerance, "max relative error");
  gc->add_option("--samples", samples, "parameter coordinates to probe");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen(spec_path, out_dir, force);
    if (tr->parsed()) return cmd_train(model_path, train_path, data_dir, out_dir, resume);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_dir, split, repeat, out_path);
    if (pa->parsed()) return cmd_params(model_path);
    if (sw->parsed()) return cmd_sweep(ckpt_path, data_dir, split, repeats, out_path);
    if (gc->parsed()) return cmd_gradcheck(model_path, tolerance, samples);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
