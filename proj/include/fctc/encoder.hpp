#ifndef FCTC_ENCODER_HPP
#define FCTC_ENCODER_HPP

#include "fctc/graph.hpp"

#include <cstdint>
#include <string>

namespace fctc {

struct EncoderConfig {
  int d_model = 256;
  int d_ff = 1024;
  int n_heads = 4;
  int conv_kernel = 15;
  double dropout = 0.1;

  void validate() const;
};

/// Forward-pass context: train toggles dropout, rng drives the masks.
struct RunMode {
  bool train = false;
  Rng* rng = nullptr;
};

// Xavier-uniform weights, zero biases, unit norm gains. All registration
// functions draw from rng in call order, so a fixed seed fixes every value.

void register_linear(ParameterStore& store, const std::string& prefix, int in, int out,
                     Rng& rng);
ag::Node linear(ag::Graph& g, ParameterStore& store, const std::string& prefix,
                ag::Node x);

void register_norm(ParameterStore& store, const std::string& prefix, int d);
ag::Node norm(ag::Graph& g, ParameterStore& store, const std::string& prefix, ag::Node x);

void register_conformer_layer(ParameterStore& store, const std::string& prefix,
                              const EncoderConfig& cfg, Rng& rng);

/// Macaron Conformer block: x + half-FFN, + MHSA, + conv module, + half-FFN,
/// final layer norm; every sub-block is pre-normed.
ag::Node conformer_layer(ag::Graph& g, ParameterStore& store, const std::string& prefix,
                         const EncoderConfig& cfg, ag::Node x, const RunMode& mode);

/// Analytic trainable-scalar count of one conformer layer.
std::int64_t conformer_layer_param_count(const EncoderConfig& cfg);

ag::Node mhsa(ag::Graph& g, ParameterStore& store, const std::string& prefix,
              const EncoderConfig& cfg, ag::Node x, const RunMode& mode);

ag::Node conv_module(ag::Graph& g, ParameterStore& store, const std::string& prefix,
                     const EncoderConfig& cfg, ag::Node x, const RunMode& mode);

// Two 3x3 stride-2 convolutions over the time x feature plane, then a
// per-frame linear projection to d_model plus sinusoidal positions.

void register_frontend(ParameterStore& store, const std::string& prefix,
                       const EncoderConfig& cfg, int feat_dim, Rng& rng);

ag::Node subsample_frontend(ag::Graph& g, ParameterStore& store, const std::string& prefix,
                            const EncoderConfig& cfg, const Mat& features,
                            const RunMode& mode);

Eigen::Index subsampled_length(Eigen::Index t);

Mat positional_encoding(Eigen::Index t_len, int d_model);

}  // namespace fctc

#endif  // FCTC_ENCODER_HPP
