#include "fctc/model.hpp"

#include "fctc/binio.hpp"
#include "fctc/kvconfig.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fctc {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::ctc: return "ctc";
    case Variant::inter_ctc: return "inter_ctc";
    case Variant::self_cond: return "self_cond";
    case Variant::folded: return "folded";
  }
  throw ConfigError("bad variant enum");
}

Variant variant_from_name(const std::string& name) {
  if (name == "ctc") return Variant::ctc;
  if (name == "inter_ctc") return Variant::inter_ctc;
  if (name == "self_cond") return Variant::self_cond;
  if (name == "folded") return Variant::folded;
  throw ConfigError("unknown variant: " + name);
}

void ModelConfig::validate() const {
  encoder.validate();
  if (vocab_size < 2) throw ConfigError("vocab_size must include blank plus >=1 token");
  if (feat_dim < 7) throw ConfigError("feat_dim must be >= 7");
  if (variant == Variant::folded) {
    if (n_base < 0) throw ConfigError("n_base must be >= 0");
    if (n_folded < 1) throw ConfigError("n_folded must be >= 1");
    if (n_repeat_train < 1) throw ConfigError("n_repeat_train must be >= 1");
  } else {
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (variant != Variant::ctc) {
      for (int n : inter_layers) {
        if (n < 1 || n >= n_layers) {
          throw ConfigError("inter layer index " + std::to_string(n) +
                            " outside [1, n_layers-1]");
        }
      }
    }
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "variant=" << variant_name(variant) << "\n";
  os << "n_layers=" << n_layers << "\n";
  os << "n_base=" << n_base << "\n";
  os << "n_folded=" << n_folded << "\n";
  os << "n_repeat_train=" << n_repeat_train << "\n";
  os << "inter_layers=" << kv::join_ints(inter_layers) << "\n";
  os << "inter_weight=" << inter_weight << "\n";
  os << "d_model=" << encoder.d_model << "\n";
  os << "d_ff=" << encoder.d_ff << "\n";
  os << "n_heads=" << encoder.n_heads << "\n";
  os << "conv_kernel=" << encoder.conv_kernel << "\n";
  os << "dropout=" << encoder.dropout << "\n";
  os << "vocab_size=" << vocab_size << "\n";
  os << "feat_dim=" << feat_dim << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  kv::Lookup kv(kv::parse(text));
  ModelConfig cfg;
  cfg.variant = variant_from_name(kv.require("variant"));
  cfg.n_layers = static_cast<int>(kv.integer("n_layers", cfg.n_layers));
  cfg.n_base = static_cast<int>(kv.integer("n_base", cfg.n_base));
  cfg.n_folded = static_cast<int>(kv.integer("n_folded", cfg.n_folded));
  cfg.n_repeat_train = static_cast<int>(kv.integer("n_repeat_train", cfg.n_repeat_train));
  cfg.inter_layers = kv.int_list("inter_layers", cfg.inter_layers);
  cfg.inter_weight = kv.real("inter_weight", cfg.inter_weight);
  cfg.encoder.d_model = static_cast<int>(kv.integer("d_model", cfg.encoder.d_model));
  cfg.encoder.d_ff = static_cast<int>(kv.integer("d_ff", cfg.encoder.d_ff));
  cfg.encoder.n_heads = static_cast<int>(kv.integer("n_heads", cfg.encoder.n_heads));
  cfg.encoder.conv_kernel =
      static_cast<int>(kv.integer("conv_kernel", cfg.encoder.conv_kernel));
  cfg.encoder.dropout = kv.real("dropout", cfg.encoder.dropout);
  cfg.vocab_size = static_cast<int>(kv.integer("vocab_size", cfg.vocab_size));
  cfg.feat_dim = static_cast<int>(kv.integer("feat_dim", cfg.feat_dim));
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open model config: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

ParameterStore build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore store;
  Rng rng(seed);
  register_frontend(store, "frontend", cfg.encoder, cfg.feat_dim, rng);
  if (cfg.variant == Variant::folded) {
    for (int i = 0; i < cfg.n_base; ++i) {
      register_conformer_layer(store, "base." + std::to_string(i), cfg.encoder, rng);
    }
    // The folded block is allocated once; every repeat reads the same slots.
    for (int i = 0; i < cfg.n_folded; ++i) {
      register_conformer_layer(store, "folded." + std::to_string(i), cfg.encoder, rng);
    }
  } else {
    for (int i = 0; i < cfg.n_layers; ++i) {
      register_conformer_layer(store, "layer." + std::to_string(i), cfg.encoder, rng);
    }
  }
  register_norm(store, "readout_norm", cfg.encoder.d_model);
  register_linear(store, "vocab_proj", cfg.encoder.d_model, cfg.vocab_size, rng);
  if (cfg.variant == Variant::self_cond || cfg.variant == Variant::folded) {
    register_linear(store, "feedback", cfg.vocab_size, cfg.encoder.d_model, rng);
  }
  return store;
}

ag::Node project_vocab(ag::Graph& g, ParameterStore& store, ag::Node x) {
  return ag::softmax_rows(linear(g, store, "vocab_proj", norm(g, store, "readout_norm", x)));
}

ag::Node self_condition(ag::Graph& g, ParameterStore& store, ag::Node x, ag::Node z) {
  if (x.rows() != z.rows()) throw DimensionError("self_condition: frame count mismatch");
  return ag::add(x, linear(g, store, "feedback", z));
}

namespace {

ag::Node run_block(ag::Graph& g, ParameterStore& store, const ModelConfig& cfg,
                   const std::string& block, int n_layers, ag::Node x, const RunMode& mode) {
  for (int i = 0; i < n_layers; ++i) {
    x = conformer_layer(g, store, block + "." + std::to_string(i), cfg.encoder, x, mode);
  }
  return x;
}

}  // namespace

ForwardOutput forward_folded(ag::Graph& g, ParameterStore& store, const ModelConfig& cfg,
                             const Mat& features, int n_repeat, const RunMode& mode) {
  if (cfg.variant != Variant::folded) throw ConfigError("forward_folded: wrong variant");
  if (n_repeat < 1) throw ConfigError("n_repeat must be >= 1");
  ag::Node h = subsample_frontend(g, store, "frontend", cfg.encoder, features, mode);
  h = run_block(g, store, cfg, "base", cfg.n_base, h, mode);
  ForwardOutput out;
  for (int r = 1; r <= n_repeat; ++r) {
    h = run_block(g, store, cfg, "folded", cfg.n_folded, h, mode);
    ag::Node z = project_vocab(g, store, h);
    out.predictions.push_back(z);
    if (r < n_repeat) h = self_condition(g, store, h, z);  // trailing feedback unused
  }
  out.final = out.predictions.back();
  return out;
}

ForwardOutput forward_baseline(ag::Graph& g, ParameterStore& store, const ModelConfig& cfg,
                               const Mat& features, const RunMode& mode) {
  if (cfg.variant == Variant::folded) throw ConfigError("forward_baseline: wrong variant");
  ag::Node h = subsample_frontend(g, store, "frontend", cfg.encoder, features, mode);
  ForwardOutput out;
  for (int n = 1; n <= cfg.n_layers; ++n) {
    h = conformer_layer(g, store, "layer." + std::to_string(n - 1), cfg.encoder, h, mode);
    const bool is_inter =
        cfg.variant != Variant::ctc && n < cfg.n_layers &&
        std::find(cfg.inter_layers.begin(), cfg.inter_layers.end(), n) != cfg.inter_layers.end();
    if (is_inter) {
      ag::Node z = project_vocab(g, store, h);
      out.predictions.push_back(z);
      if (cfg.variant == Variant::self_cond) h = self_condition(g, store, h, z);
    }
  }
  out.predictions.push_back(project_vocab(g, store, h));
  out.final = out.predictions.back();
  return out;
}

ForwardOutput forward(ag::Graph& g, ParameterStore& store, const ModelConfig& cfg,
                      const Mat& features, int n_repeat, const RunMode& mode) {
  if (cfg.variant == Variant::folded) {
    return forward_folded(g, store, cfg, features, n_repeat, mode);
  }
  return forward_baseline(g, store, cfg, features, mode);
}

ag::Node loss_repeat(const ForwardOutput& out, const TokenSequence& y) {
  if (out.predictions.empty()) throw ConfigError("loss_repeat: empty predictions");
  ag::Node acc = ctc_neg_log_likelihood(out.predictions[0], y);
  for (std::size_t i = 1; i < out.predictions.size(); ++i) {
    acc = ag::add(acc, ctc_neg_log_likelihood(out.predictions[i], y));
  }
  return ag::scale(acc, 1.0 / static_cast<double>(out.predictions.size()));
}

ag::Node loss_baseline(const ForwardOutput& out, const TokenSequence& y, double w,
                       Variant variant) {
  ag::Node final_loss = ctc_neg_log_likelihood(out.final, y);
  if (variant == Variant::ctc || out.predictions.size() == 1) return final_loss;
  ag::Node inter;
  const std::size_t n_inter = out.predictions.size() - 1;
  for (std::size_t i = 0; i < n_inter; ++i) {
    ag::Node li = ctc_neg_log_likelihood(out.predictions[i], y);
    inter = inter.valid() ? ag::add(inter, li) : li;
  }
  inter = ag::scale(inter, 1.0 / static_cast<double>(n_inter));
  return ag::add(ag::scale(final_loss, 1.0 - w), ag::scale(inter, w));
}

ag::Node loss_for(const ModelConfig& cfg, const ForwardOutput& out, const TokenSequence& y) {
  if (cfg.variant == Variant::folded) return loss_repeat(out, y);
  return loss_baseline(out, y, cfg.inter_weight, cfg.variant);
}

std::int64_t count_params(const ParameterStore& store) { return store.count_params(); }

std::map<std::string, std::int64_t> param_breakdown(const ParameterStore& store) {
  std::map<std::string, std::int64_t> out;
  for (const auto& [name, p] : store) {
    const auto dot = name.find('.');
    std::string head = dot == std::string::npos ? name : name.substr(0, dot);
    // group "base.3.ffn1..." under "base", "vocab_proj.w" under "vocab_proj"
    out[head] += p.value.size();
  }
  return out;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParameterStore& store) {
  auto os = binio::open_out(path);
  binio::write_magic(os, "FCTC");
  binio::write_u32(os, 1);  // format version
  binio::write_string(os, cfg.to_text());
  binio::write_u32(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, p] : store) {  // lexicographic by map order
    binio::write_string(os, name);
    binio::write_u32(os, 2);
    binio::write_u32(os, static_cast<std::uint32_t>(p.value.rows()));
    binio::write_u32(os, static_cast<std::uint32_t>(p.value.cols()));
    binio::write_bytes(os, p.value.data(), sizeof(double) * p.value.size());
  }
}

std::pair<ModelConfig, ParameterStore> load_checkpoint(const std::string& path) {
  auto is = binio::open_in(path);
  binio::Reader r(is, path);
  r.expect_magic("FCTC");
  const std::uint32_t version = r.read_u32();
  if (version != 1) throw FormatError(path + ": unsupported checkpoint version");
  ModelConfig cfg = ModelConfig::from_text(r.read_string());
  ParameterStore store;
  const std::uint32_t count = r.read_u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.read_string();
    const std::uint32_t rank = r.read_u32();
    if (rank != 2) throw FormatError(path + ": unexpected tensor rank");
    const std::uint32_t rows = r.read_u32();
    const std::uint32_t cols = r.read_u32();
    Mat value(rows, cols);
    r.read_f64_block(value.data(), static_cast<std::size_t>(rows) * cols);
    store.add(name, std::move(value));
  }
  return {cfg, std::move(store)};
}

}  // namespace fctc
