#ifndef FCTC_MODEL_HPP
#define FCTC_MODEL_HPP

#include "fctc/ctc.hpp"
#include "fctc/encoder.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace fctc {

enum class Variant { ctc, inter_ctc, self_cond, folded };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::folded;
  int n_layers = 18;           // non-folded variants
  int n_base = 3;              // folded variant
  int n_folded = 3;            // folded variant
  int n_repeat_train = 6;      // folded variant
  std::vector<int> inter_layers = {3, 6, 9, 12, 15};  // inter/self_cond
  double inter_weight = 0.5;
  EncoderConfig encoder;
  int vocab_size = 501;  // |V'| including blank
  int feat_dim = 83;

  void validate() const;
  std::string to_text() const;  // canonical key=value block
  static ModelConfig from_text(const std::string& text);
  static ModelConfig from_file(const std::string& path);
};

/// Per-repeat (folded) or per-intermediate-plus-final (baselines)
/// posteriorgram-valued nodes; final is always predictions.back().
struct ForwardOutput {
  std::vector<ag::Node> predictions;
  ag::Node final;
};

ParameterStore build(const ModelConfig& cfg, std::uint64_t seed);

/// softmax(Linear_{D->|V'|}(norm(x))); one shared projection per model.
ag::Node project_vocab(ag::Graph& g, ParameterStore& store, ag::Node x);

/// x + Linear_{|V'|->D}(z); gradient flows through z.
ag::Node self_condition(ag::Graph& g, ParameterStore& store, ag::Node x, ag::Node z);

ForwardOutput forward_folded(ag::Graph& g, ParameterStore& store, const ModelConfig& cfg,
                             const Mat& features, int n_repeat, const RunMode& mode = {});

ForwardOutput forward_baseline(ag::Graph& g, ParameterStore& store, const ModelConfig& cfg,
                               const Mat& features, const RunMode& mode = {});

/// Variant dispatch; n_repeat only applies to the folded variant.
ForwardOutput forward(ag::Graph& g, ParameterStore& store, const ModelConfig& cfg,
                      const Mat& features, int n_repeat, const RunMode& mode = {});

/// Mean CTC loss over all repeated predictions.
ag::Node loss_repeat(const ForwardOutput& out, const TokenSequence& y);

/// (1-w) * final CTC loss + w * mean of intermediate CTC losses.
ag::Node loss_baseline(const ForwardOutput& out, const TokenSequence& y, double w,
                       Variant variant);

ag::Node loss_for(const ModelConfig& cfg, const ForwardOutput& out, const TokenSequence& y);

std::int64_t count_params(const ParameterStore& store);

/// Trainable scalars per top-level component prefix.
std::map<std::string, std::int64_t> param_breakdown(const ParameterStore& store);

// Checkpoint format: "FCTC", u32 version, length-prefixed config text, then
// parameters in lexicographic name order (name, rank, extents, float64 data).
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParameterStore& store);
std::pair<ModelConfig, ParameterStore> load_checkpoint(const std::string& path);

}  // namespace fctc

#endif  // FCTC_MODEL_HPP
