#ifndef FCTC_TRAINING_HPP
#define FCTC_TRAINING_HPP

#include "fctc/data.hpp"
#include "fctc/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace fctc {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_epsilon = 1e-9;
  int warmup_steps = 25000;
  double lr_factor = 1.0;
  int epochs = 50;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int ckpt_average_k = 10;
  double grad_clip = 5.0;  // global norm; <= 0 disables
  // SpecAugment masking during training; off unless widths are set.
  int sa_time_masks = 0;
  int sa_time_width = 0;
  int sa_freq_masks = 0;
  int sa_freq_width = 0;

  void validate() const;
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  static TrainConfig from_file(const std::string& path);
};

/// factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
double noam_lr(int step, int d_model, int warmup, double factor);

struct OptimizerState {
  int step = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments;  // name -> (m, v)

  void save(const std::string& path) const;
  static OptimizerState load(const std::string& path);
};

/// Standard bias-corrected Adam over populated gradients, with optional
/// global-norm clipping first; zeroes gradients afterwards.
void adam_step(ParameterStore& store, OptimizerState& opt, double lr,
               const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double val_loss = 0.0;
  double val_ter = 0.0;
  std::string ckpt_path;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int steps = 0;
};

/// Full loop: per step forward/loss/backward/noam/adam, one checkpoint and
/// validation pass per epoch, JSONL metrics to `log`. Writes avg.ckpt from
/// the ckpt_average_k best-validation checkpoints at the end.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& valid_set, const std::string& out_dir,
                  std::ostream& log, bool resume = false);

/// Element-wise mean of the k checkpoints with the best (lowest) metric.
ParameterStore average_checkpoints(const std::vector<std::string>& paths,
                                   const std::vector<double>& val_metric, int k,
                                   ModelConfig* cfg_out = nullptr);

struct GradCheckReport {
  double max_rel_err = 0.0;
  int checked = 0;
  bool pass = false;
};

/// Central finite differences on >= n_samples randomly chosen parameter
/// coordinates of a full-model loss at the given config.
GradCheckReport grad_check(const ModelConfig& cfg, double tolerance, int n_samples = 200,
                           std::uint64_t seed = 0);

}  // namespace fctc

#endif  // FCTC_TRAINING_HPP
