#include "fctc/encoder.hpp"

#include <cmath>

namespace fctc {

void EncoderConfig::validate() const {
  if (d_model < 1 || d_ff < 1 || n_heads < 1) throw ConfigError("encoder dims must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ConfigError("conv_kernel must be odd");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
}

namespace {

Mat xavier_uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double fan_in,
                   double fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

ag::Node drop(ag::Node x, const EncoderConfig& cfg, const RunMode& mode) {
  if (!mode.train || cfg.dropout == 0.0) return x;
  if (mode.rng == nullptr) throw ConfigError("train-mode forward needs a dropout rng");
  return ag::dropout(x, cfg.dropout, *mode.rng, true);
}

}  // namespace

void register_linear(ParameterStore& store, const std::string& prefix, int in, int out,
                     Rng& rng) {
  store.add(prefix + ".w", xavier_uniform(rng, in, out, in, out));
  store.add(prefix + ".b", Mat::Zero(1, out));
}

ag::Node linear(ag::Graph& g, ParameterStore& store, const std::string& prefix,
                ag::Node x) {
  return ag::add(ag::matmul(x, g.param(store, prefix + ".w")),
                 g.param(store, prefix + ".b"));
}

void register_norm(ParameterStore& store, const std::string& prefix, int d) {
  store.add(prefix + ".gain", Mat::Ones(1, d));
  store.add(prefix + ".bias", Mat::Zero(1, d));
}

ag::Node norm(ag::Graph& g, ParameterStore& store, const std::string& prefix, ag::Node x) {
  return ag::layer_norm(x, g.param(store, prefix + ".gain"),
                        g.param(store, prefix + ".bias"));
}

void register_conformer_layer(ParameterStore& store, const std::string& prefix,
                              const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.d_model;
  register_norm(store, prefix + ".ffn1.norm", d);
  register_linear(store, prefix + ".ffn1.lin1", d, cfg.d_ff, rng);
  register_linear(store, prefix + ".ffn1.lin2", cfg.d_ff, d, rng);
  register_norm(store, prefix + ".mhsa.norm", d);
  register_linear(store, prefix + ".mhsa.q", d, d, rng);
  register_linear(store, prefix + ".mhsa.k", d, d, rng);
  register_linear(store, prefix + ".mhsa.v", d, d, rng);
  register_linear(store, prefix + ".mhsa.o", d, d, rng);
  register_norm(store, prefix + ".conv.norm", d);
  register_linear(store, prefix + ".conv.pw1", d, 2 * d, rng);
  store.add(prefix + ".conv.dw.w",
            xavier_uniform(rng, cfg.conv_kernel, d, cfg.conv_kernel, cfg.conv_kernel));
  store.add(prefix + ".conv.dw.b", Mat::Zero(1, d));
  register_norm(store, prefix + ".conv.norm2", d);
  register_linear(store, prefix + ".conv.pw2", d, d, rng);
  register_norm(store, prefix + ".ffn2.norm", d);
  register_linear(store, prefix + ".ffn2.lin1", d, cfg.d_ff, rng);
  register_linear(store, prefix + ".ffn2.lin2", cfg.d_ff, d, rng);
  register_norm(store, prefix + ".final_norm", d);
}

std::int64_t conformer_layer_param_count(const EncoderConfig& cfg) {
  const std::int64_t d = cfg.d_model, ff = cfg.d_ff, k = cfg.conv_kernel;
  const std::int64_t ffns = 2 * (2 * d * ff + d + ff);
  const std::int64_t attn = 4 * d * d + 4 * d;
  const std::int64_t conv = (2 * d * d + 2 * d) + (k * d + d) + (d * d + d);
  const std::int64_t norms = 6 * 2 * d;  // four pre-norms, conv-internal, final
  return ffns + attn + conv + norms;
}

ag::Node mhsa(ag::Graph& g, ParameterStore& store, const std::string& prefix,
              const EncoderConfig& cfg, ag::Node x, const RunMode& mode) {
  (void)mode;
  const int dk = cfg.d_model / cfg.n_heads;
  ag::Node q = linear(g, store, prefix + ".q", x);
  ag::Node k = linear(g, store, prefix + ".k", x);
  ag::Node v = linear(g, store, prefix + ".v", x);
  std::vector<ag::Node> heads;
  for (int h = 0; h < cfg.n_heads; ++h) {
    ag::Node qh = ag::slice_cols(q, h * dk, dk);
    ag::Node kh = ag::slice_cols(k, h * dk, dk);
    ag::Node vh = ag::slice_cols(v, h * dk, dk);
    ag::Node scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), 1.0 / std::sqrt(dk));
    ag::Node attn = ag::softmax_rows(scores);
    heads.push_back(ag::matmul(attn, vh));
  }
  ag::Node cat = cfg.n_heads == 1 ? heads[0] : ag::concat_cols(heads);
  return linear(g, store, prefix + ".o", cat);
}

ag::Node conv_module(ag::Graph& g, ParameterStore& store, const std::string& prefix,
                     const EncoderConfig& cfg, ag::Node x, const RunMode& mode) {
  (void)mode;
  const int d = cfg.d_model;
  ag::Node h = linear(g, store, prefix + ".pw1", x);
  // GLU
  ag::Node a = ag::slice_cols(h, 0, d);
  ag::Node b = ag::slice_cols(h, d, d);
  h = ag::mul(a, ag::sigmoid(b));
  h = ag::depthwise_conv1d(h, g.param(store, prefix + ".dw.w"),
                           g.param(store, prefix + ".dw.b"));
  h = norm(g, store, prefix + ".norm2", h);
  h = ag::swish(h);
  return linear(g, store, prefix + ".pw2", h);
}

ag::Node conformer_layer(ag::Graph& g, ParameterStore& store, const std::string& prefix,
                         const EncoderConfig& cfg, ag::Node x, const RunMode& mode) {
  ag::Node h = norm(g, store, prefix + ".ffn1.norm", x);
  h = linear(g, store, prefix + ".ffn1.lin2", ag::swish(linear(g, store, prefix + ".ffn1.lin1", h)));
  x = ag::add(x, ag::scale(drop(h, cfg, mode), 0.5));

  h = mhsa(g, store, prefix + ".mhsa", cfg, norm(g, store, prefix + ".mhsa.norm", x), mode);
  x = ag::add(x, drop(h, cfg, mode));

  h = conv_module(g, store, prefix + ".conv", cfg, norm(g, store, prefix + ".conv.norm", x), mode);
  x = ag::add(x, drop(h, cfg, mode));

  h = norm(g, store, prefix + ".ffn2.norm", x);
  h = linear(g, store, prefix + ".ffn2.lin2", ag::swish(linear(g, store, prefix + ".ffn2.lin1", h)));
  x = ag::add(x, ag::scale(drop(h, cfg, mode), 0.5));

  return norm(g, store, prefix + ".final_norm", x);
}

Eigen::Index subsampled_length(Eigen::Index t) { return ((t - 1) / 2 - 1) / 2; }

void register_frontend(ParameterStore& store, const std::string& prefix,
                       const EncoderConfig& cfg, int feat_dim, Rng& rng) {
  if (feat_dim < 7) throw ConfigError("feature dim must be >= 7 for two 3x3 stride-2 convs");
  const int d = cfg.d_model;
  store.add(prefix + ".conv1.w", xavier_uniform(rng, d, 9, 9, d));
  store.add(prefix + ".conv1.b", Mat::Zero(1, d));
  store.add(prefix + ".conv2.w", xavier_uniform(rng, d, d * 9, d * 9.0, d));
  store.add(prefix + ".conv2.b", Mat::Zero(1, d));
  const Eigen::Index df = subsampled_length(feat_dim);
  register_linear(store, prefix + ".proj", static_cast<int>(d * df), d, rng);
}

ag::Node subsample_frontend(ag::Graph& g, ParameterStore& store, const std::string& prefix,
                            const EncoderConfig& cfg, const Mat& features,
                            const RunMode& mode) {
  const Eigen::Index t = features.rows();
  const Eigen::Index d_in = features.cols();
  if (t < 7) throw DimensionError("frontend: need at least 7 frames, got " + std::to_string(t));
  ag::Node x = g.constant(features);
  x = ag::reshape(x, 1, t * d_in);  // one input channel, T x D plane
  x = ag::conv2d_s2(x, t, d_in, g.param(store, prefix + ".conv1.w"),
                    g.param(store, prefix + ".conv1.b"));
  x = ag::relu(x);
  const Eigen::Index t1 = (t - 1) / 2, d1 = (d_in - 1) / 2;
  x = ag::conv2d_s2(x, t1, d1, g.param(store, prefix + ".conv2.w"),
                    g.param(store, prefix + ".conv2.b"));
  x = ag::relu(x);
  const Eigen::Index t2 = (t1 - 1) / 2, d2 = (d1 - 1) / 2;
  x = ag::channels_to_rows(x, t2, d2);
  x = linear(g, store, prefix + ".proj", x);
  x = ag::add(x, g.constant(positional_encoding(t2, cfg.d_model)));
  return drop(x, cfg, mode);
}

Mat positional_encoding(Eigen::Index t_len, int d_model) {
  Mat pe(t_len, d_model);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (int i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -2.0 * (i / 2) / d_model);
      pe(t, i) = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return pe;
}

}  // namespace fctc
