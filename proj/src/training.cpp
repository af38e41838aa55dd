#include "fctc/training.hpp"

#include "fctc/binio.hpp"
#include "fctc/kvconfig.hpp"
#include "fctc/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace fs = std::filesystem;

namespace fctc {

void TrainConfig::validate() const {
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (ckpt_average_k < 1) throw ConfigError("ckpt_average_k must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("bad Adam betas");
  if (adam_epsilon <= 0) throw ConfigError("adam_epsilon must be > 0");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "beta1=" << beta1 << "\n";
  os << "beta2=" << beta2 << "\n";
  os << "adam_epsilon=" << adam_epsilon << "\n";
  os << "warmup_steps=" << warmup_steps << "\n";
  os << "lr_factor=" << lr_factor << "\n";
  os << "epochs=" << epochs << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "seed=" << seed << "\n";
  os << "ckpt_average_k=" << ckpt_average_k << "\n";
  os << "grad_clip=" << grad_clip << "\n";
  os << "sa_time_masks=" << sa_time_masks << "\n";
  os << "sa_time_width=" << sa_time_width << "\n";
  os << "sa_freq_masks=" << sa_freq_masks << "\n";
  os << "sa_freq_width=" << sa_freq_width << "\n";
  return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  kv::Lookup kv(kv::parse(text));
  TrainConfig c;
  c.beta1 = kv.real("beta1", c.beta1);
  c.beta2 = kv.real("beta2", c.beta2);
  c.adam_epsilon = kv.real("adam_epsilon", c.adam_epsilon);
  c.warmup_steps = static_cast<int>(kv.integer("warmup_steps", c.warmup_steps));
  c.lr_factor = kv.real("lr_factor", c.lr_factor);
  c.epochs = static_cast<int>(kv.integer("epochs", c.epochs));
  c.batch_size = static_cast<int>(kv.integer("batch_size", c.batch_size));
  c.seed = static_cast<std::uint64_t>(kv.integer("seed", static_cast<std::int64_t>(c.seed)));
  c.ckpt_average_k = static_cast<int>(kv.integer("ckpt_average_k", c.ckpt_average_k));
  c.grad_clip = kv.real("grad_clip", c.grad_clip);
  c.sa_time_masks = static_cast<int>(kv.integer("sa_time_masks", c.sa_time_masks));
  c.sa_time_width = static_cast<int>(kv.integer("sa_time_width", c.sa_time_width));
  c.sa_freq_masks = static_cast<int>(kv.integer("sa_freq_masks", c.sa_freq_masks));
  c.sa_freq_width = static_cast<int>(kv.integer("sa_freq_width", c.sa_freq_width));
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open train config: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

double noam_lr(int step, int d_model, int warmup, double factor) {
  if (step < 1) throw ConfigError("noam_lr: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return factor * std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void OptimizerState::save(const std::string& path) const {
  auto os = binio::open_out(path);
  binio::write_magic(os, "FOPT");
  binio::write_u32(os, 1);
  binio::write_u32(os, static_cast<std::uint32_t>(step));
  binio::write_u32(os, static_cast<std::uint32_t>(moments.size()));
  for (const auto& [name, mv] : moments) {
    binio::write_string(os, name);
    binio::write_u32(os, static_cast<std::uint32_t>(mv.first.rows()));
    binio::write_u32(os, static_cast<std::uint32_t>(mv.first.cols()));
    binio::write_bytes(os, mv.first.data(), sizeof(double) * mv.first.size());
    binio::write_bytes(os, mv.second.data(), sizeof(double) * mv.second.size());
  }
}

OptimizerState OptimizerState::load(const std::string& path) {
  auto is = binio::open_in(path);
  binio::Reader r(is, path);
  r.expect_magic("FOPT");
  if (r.read_u32() != 1) throw FormatError(path + ": unsupported optimizer state version");
  OptimizerState st;
  st.step = static_cast<int>(r.read_u32());
  const std::uint32_t count = r.read_u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.read_string();
    const std::uint32_t rows = r.read_u32();
    const std::uint32_t cols = r.read_u32();
    Mat m(rows, cols), v(rows, cols);
    r.read_f64_block(m.data(), m.size());
    r.read_f64_block(v.data(), v.size());
    st.moments.emplace(name, std::make_pair(std::move(m), std::move(v)));
  }
  return st;
}

void adam_step(ParameterStore& store, OptimizerState& opt, double lr,
               const TrainConfig& cfg) {
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [name, p] : store) sq += p.grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      const double s = cfg.grad_clip / norm;
      for (auto& [name, p] : store) p.grad *= s;
    }
  }
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, opt.step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, opt.step);
  for (auto& [name, p] : store) {
    auto it = opt.moments.find(name);
    if (it == opt.moments.end()) {
      it = opt.moments
               .emplace(name, std::make_pair(Mat::Zero(p.value.rows(), p.value.cols()),
                                             Mat::Zero(p.value.rows(), p.value.cols())))
               .first;
    }
    Mat& m = it->second.first;
    Mat& v = it->second.second;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * p.grad;
    v = cfg.beta2 * v.array().matrix() +
        (1.0 - cfg.beta2) * p.grad.array().square().matrix();
    const auto mhat = m.array() / bc1;
    const auto vhat = v.array() / bc2;
    p.value.array() -= lr * mhat / (vhat.sqrt() + cfg.adam_epsilon);
    p.grad.setZero();
  }
}

namespace {

void check_feasible(const ModelConfig& cfg, const std::vector<Utterance>& utts,
                    const char* split) {
  (void)cfg;
  for (const auto& u : utts) {
    if (u.features.rows() < 7 ||
        min_alignment_length(u.transcript) > subsampled_length(u.features.rows())) {
      throw DataError(std::string(split) + " utterance has infeasible target: " + u.id);
    }
  }
}

std::vector<std::vector<int>> make_batches(const std::vector<Utterance>& utts,
                                           int batch_size, Rng& rng) {
  // Group by frame count so a batch shares one shape; no padding machinery.
  std::map<Eigen::Index, std::vector<int>> by_len;
  for (int i = 0; i < static_cast<int>(utts.size()); ++i) {
    by_len[utts[i].features.rows()].push_back(i);
  }
  std::vector<std::vector<int>> batches;
  for (auto& [len, idxs] : by_len) {
    for (std::size_t off = 0; off < idxs.size(); off += batch_size) {
      const std::size_t end = std::min(idxs.size(), off + batch_size);
      batches.emplace_back(idxs.begin() + off, idxs.begin() + end);
    }
  }
  // Fisher-Yates with the deterministic rng.
  for (std::size_t i = batches.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(batches[i - 1], batches[j]);
  }
  return batches;
}

struct ValScore {
  double loss = 0.0;
  double ter = 0.0;
};

ValScore validate_model(ParameterStore& store, const ModelConfig& cfg,
                        const std::vector<Utterance>& valid) {
  ValScore out;
  if (valid.empty()) return out;
  int errors = 0, refs = 0;
  for (const auto& u : valid) {
    ag::Graph g;
    ForwardOutput fo = forward(g, store, cfg, u.features, cfg.n_repeat_train);
    out.loss += loss_for(cfg, fo, u.transcript).value()(0, 0);
    const Mat logp = fo.final.value().array().log();
    const TokenSequence hyp = best_path_decode(logp);
    errors += edit_ops(u.transcript, hyp).distance();
    refs += static_cast<int>(u.transcript.size());
  }
  out.loss /= static_cast<double>(valid.size());
  out.ter = refs > 0 ? static_cast<double>(errors) / refs : 0.0;
  return out;
}

std::string ckpt_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03d.ckpt", epoch);
  return buf;
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& valid_set, const std::string& out_dir,
                  std::ostream& log, bool resume) {
  model_cfg.validate();
  train_cfg.validate();
  if (train_set.empty()) throw DataError("empty training set");
  check_feasible(model_cfg, train_set, "train");
  check_feasible(model_cfg, valid_set, "valid");
  fs::create_directories(out_dir);

  ParameterStore store = build(model_cfg, train_cfg.seed);
  OptimizerState opt;
  TrainResult result;
  int start_epoch = 1;

  const fs::path index_path = fs::path(out_dir) / "checkpoints.tsv";
  if (resume) {
    std::ifstream idx(index_path);
    if (!idx) throw ConfigError("--resume: no checkpoint index in " + out_dir);
    std::string line;
    EpochMetrics last;
    while (std::getline(idx, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      EpochMetrics em;
      ls >> em.epoch >> em.ckpt_path >> em.val_loss >> em.val_ter;
      result.epochs.push_back(em);
      last = em;
    }
    if (result.epochs.empty()) throw ConfigError("--resume: empty checkpoint index");
    auto [cfg_loaded, loaded] = load_checkpoint(last.ckpt_path);
    if (cfg_loaded.to_text() != model_cfg.to_text()) {
      throw ConfigError("--resume: checkpoint config does not match");
    }
    store = std::move(loaded);
    opt = OptimizerState::load((fs::path(out_dir) / "optimizer.state").string());
    start_epoch = last.epoch + 1;
  }

  std::ofstream index(index_path, resume ? std::ios::app : std::ios::trunc);

  for (int epoch = start_epoch; epoch <= train_cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(train_cfg.seed, 0x5E0000ULL + epoch));
    auto batches = make_batches(train_set, train_cfg.batch_size, shuffle_rng);
    for (const auto& batch : batches) {
      const int step = opt.step + 1;
      double batch_loss = 0.0;
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const Utterance& u = train_set[batch[bi]];
        Mat feats = u.features;
        if (train_cfg.sa_time_masks > 0 || train_cfg.sa_freq_masks > 0) {
          feats = spec_augment(feats, train_cfg.sa_time_masks, train_cfg.sa_time_width,
                               train_cfg.sa_freq_masks, train_cfg.sa_freq_width,
                               mix_seed(train_cfg.seed, 0x5A0000ULL + step * 64 + bi));
        }
        Rng drop_rng(mix_seed(train_cfg.seed, 0xD0000ULL + step * 64 + bi));
        RunMode mode{true, &drop_rng};
        ag::Graph g;
        ag::Node loss;
        try {
          ForwardOutput fo = forward(g, store, model_cfg, feats, model_cfg.n_repeat_train, mode);
          loss = loss_for(model_cfg, fo, u.transcript);
        } catch (const InfeasibleTargetError& e) {
          throw DataError("utterance " + u.id + ": " + e.what());
        }
        const double lv = loss.value()(0, 0);
        if (!std::isfinite(lv)) {
          throw NumericalError("non-finite loss at step " + std::to_string(step) +
                               ", utterance " + u.id);
        }
        batch_loss += lv * inv_b;
        g.backward(ag::scale(loss, inv_b));
      }
      const double lr = noam_lr(step, model_cfg.encoder.d_model, train_cfg.warmup_steps,
                                train_cfg.lr_factor);
      adam_step(store, opt, lr, train_cfg);
      nlohmann::json rec{{"step", opt.step}, {"epoch", epoch}, {"lr", lr}, {"loss", batch_loss}};
      log << rec.dump() << "\n";
    }

    const ValScore val = validate_model(store, model_cfg, valid_set);
    EpochMetrics em;
    em.epoch = epoch;
    em.val_loss = val.loss;
    em.val_ter = val.ter;
    em.ckpt_path = (fs::path(out_dir) / ckpt_name(epoch)).string();
    save_checkpoint(em.ckpt_path, model_cfg, store);
    opt.save((fs::path(out_dir) / "optimizer.state").string());
    result.epochs.push_back(em);
    index << em.epoch << "\t" << em.ckpt_path << "\t" << em.val_loss << "\t" << em.val_ter
          << "\n";
    index.flush();
    nlohmann::json rec{{"epoch", epoch}, {"val_loss", val.loss}, {"val_ter", val.ter}};
    log << rec.dump() << "\n";
  }

  result.steps = opt.step;

  // Final model: mean of the k best-validation checkpoints.
  std::vector<std::string> paths;
  std::vector<double> metrics;
  for (const auto& em : result.epochs) {
    paths.push_back(em.ckpt_path);
    metrics.push_back(em.val_loss);
  }
  const int k = std::min<int>(train_cfg.ckpt_average_k, static_cast<int>(paths.size()));
  ModelConfig avg_cfg;
  ParameterStore averaged = average_checkpoints(paths, metrics, k, &avg_cfg);
  save_checkpoint((fs::path(out_dir) / "avg.ckpt").string(), avg_cfg, averaged);
  return result;
}

ParameterStore average_checkpoints(const std::vector<std::string>& paths,
                                   const std::vector<double>& val_metric, int k,
                                   ModelConfig* cfg_out) {
  if (paths.size() != val_metric.size()) {
    throw ConfigError("average_checkpoints: paths/metrics size mismatch");
  }
  if (k < 1 || static_cast<std::size_t>(k) > paths.size()) {
    throw ConfigError("average_checkpoints: need at least k checkpoints");
  }
  std::vector<std::size_t> order(paths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return val_metric[a] < val_metric[b]; });

  // Mean as base + mean(deltas): averaging k identical checkpoints then
  // stays bit-exact, since every delta is exactly zero.
  ParameterStore base;
  std::map<std::string, Mat> delta;
  std::string cfg_text;
  for (int i = 0; i < k; ++i) {
    auto [cfg, store] = load_checkpoint(paths[order[i]]);
    if (i == 0) {
      cfg_text = cfg.to_text();
      if (cfg_out) *cfg_out = cfg;
      base = std::move(store);
      for (const auto& [name, p] : base) {
        delta.emplace(name, Mat::Zero(p.value.rows(), p.value.cols()));
      }
    } else {
      if (cfg.to_text() != cfg_text) {
        throw ConfigError("average_checkpoints: config mismatch at " + paths[order[i]]);
      }
      for (auto& [name, p] : base) delta.at(name) += store.at(name).value - p.value;
    }
  }
  for (auto& [name, p] : base) p.value += delta.at(name) / static_cast<double>(k);
  return base;
}

GradCheckReport grad_check(const ModelConfig& cfg, double tolerance, int n_samples,
                           std::uint64_t seed) {
  cfg.validate();
  ParameterStore store = build(cfg, seed);
  Rng rng(mix_seed(seed, 0x6CULL));

  const Eigen::Index t = 16;
  Mat feats(t, cfg.feat_dim);
  for (Eigen::Index i = 0; i < feats.size(); ++i) feats.data()[i] = rng.normal();
  const Eigen::Index t_sub = subsampled_length(t);
  TokenSequence y;
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(t_sub, 3); ++i) {
    int tok = static_cast<int>(rng.uniform_int(1, cfg.vocab_size - 1));
    if (!y.empty() && tok == y.back()) tok = tok % (cfg.vocab_size - 1) + 1;
    if (!y.empty() && tok == y.back()) break;  // |V| == 1: avoid repeats entirely
    y.push_back(tok);
  }

  auto eval = [&](ParameterStore& s) {
    ag::Graph g;
    ForwardOutput fo = forward(g, s, cfg, feats, cfg.n_repeat_train);
    return loss_for(cfg, fo, y).value()(0, 0);
  };

  store.zero_grads();
  {
    ag::Graph g;
    ForwardOutput fo = forward(g, store, cfg, feats, cfg.n_repeat_train);
    g.backward(loss_for(cfg, fo, y));
  }

  std::vector<std::pair<std::string, Eigen::Index>> coords;
  for (const auto& [name, p] : store) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) coords.emplace_back(name, i);
  }
  GradCheckReport report;
  const double h = 1e-5;
  const int n = std::min<int>(n_samples, static_cast<int>(coords.size()));
  for (int si = 0; si < n; ++si) {
    const auto& [name, i] =
        coords[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(coords.size()) - 1))];
    ParameterStore::Param& p = store.at(name);
    const double orig = p.value.data()[i];
    p.value.data()[i] = orig + h;
    const double up = eval(store);
    p.value.data()[i] = orig - h;
    const double dn = eval(store);
    p.value.data()[i] = orig;
    const double fd = (up - dn) / (2.0 * h);
    const double ad = p.grad.data()[i];
    const double scale = std::max({1.0, std::abs(fd), std::abs(ad)});
    report.max_rel_err = std::max(report.max_rel_err, std::abs(fd - ad) / scale);
    ++report.checked;
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace fctc
