#include "fctc/encoder.hpp"

#include "fd_check.hpp"

#include <doctest.h>

#include <cmath>

using namespace fctc;
using namespace fctc::test;

namespace {

EncoderConfig toy_cfg(int d_model = 8, int d_ff = 16, int heads = 2, int kernel = 3) {
  EncoderConfig cfg;
  cfg.d_model = d_model;
  cfg.d_ff = d_ff;
  cfg.n_heads = heads;
  cfg.conv_kernel = kernel;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS(toy_cfg(8, 16, 3).validate(), ConfigError);   // 8 % 3 != 0
  CHECK_THROWS_AS(toy_cfg(8, 16, 2, 4).validate(), ConfigError);  // even kernel
  CHECK_NOTHROW(toy_cfg().validate());
}

TEST_CASE("subsampled lengths") {
  CHECK(subsampled_length(16) == 3);
  CHECK(subsampled_length(100) == 24);
  CHECK(subsampled_length(7) == 1);
}

TEST_CASE("frontend output shape and length formula") {
  EncoderConfig cfg = toy_cfg();
  Rng rng(1);
  ParameterStore store;
  register_frontend(store, "frontend", cfg, 20, rng);
  for (Eigen::Index t : {16, 31, 100}) {
    ag::Graph g;
    ag::Node out = subsample_frontend(g, store, "frontend", cfg, random_mat(rng, t, 20), {});
    CHECK(out.rows() == subsampled_length(t));
    CHECK(out.cols() == cfg.d_model);
  }
  ag::Graph g;
  CHECK_THROWS_AS(subsample_frontend(g, store, "frontend", cfg, random_mat(rng, 6, 20), {}),
                  DimensionError);
}

TEST_CASE("positional encoding") {
  Mat pe = positional_encoding(5, 8);
  for (int i = 0; i < 8; ++i) {
    CHECK(pe(0, i) == doctest::Approx(i % 2 == 0 ? 0.0 : 1.0));
  }
  CHECK(pe.maxCoeff() <= 1.0);
  CHECK(pe.minCoeff() >= -1.0);
  CHECK(pe == positional_encoding(5, 8));  // deterministic
}

TEST_CASE("mhsa") {
  EncoderConfig cfg = toy_cfg();
  Rng rng(2);
  ParameterStore store;
  register_conformer_layer(store, "l", cfg, rng);

  SUBCASE("single frame passes through a singleton softmax") {
    ag::Graph g;
    Mat x = random_mat(rng, 1, cfg.d_model);
    ag::Node out = mhsa(g, store, "l.mhsa", cfg, g.constant(x), {});
    CHECK(out.rows() == 1);
    CHECK(out.cols() == cfg.d_model);
    // With T=1 attention is the identity over values: out = (x Wv + bv) Wo + bo.
    Mat v = (x * store.at("l.mhsa.v.w").value).rowwise() + store.at("l.mhsa.v.b").value.row(0);
    Mat expect = (v * store.at("l.mhsa.o.w").value).rowwise() + store.at("l.mhsa.o.b").value.row(0);
    CHECK(out.value().isApprox(expect, 1e-12));
  }

  SUBCASE("gradient check") {
    ParameterStore probe;
    Rng prng(3);
    register_conformer_layer(probe, "l", cfg, prng);
    probe.add("x", random_mat(prng, 3, cfg.d_model));
    auto f = [&cfg](ag::Graph& g, ParameterStore& s) {
      return ag::sum(ag::swish(mhsa(g, s, "l.mhsa", cfg, g.param(s, "x"), {})));
    };
    CHECK(max_rel_err(probe, f) < 1e-4);
  }
}

TEST_CASE("conv module") {
  EncoderConfig cfg = toy_cfg();
  Rng rng(5);
  ParameterStore store;
  register_conformer_layer(store, "l", cfg, rng);

  SUBCASE("shape preserved") {
    ag::Graph g;
    ag::Node out = conv_module(g, store, "l.conv", cfg, g.constant(random_mat(rng, 6, 8)), {});
    CHECK(out.rows() == 6);
    CHECK(out.cols() == 8);
  }

  SUBCASE("zero final projection gives zero output") {
    store.at("l.conv.pw2.w").value.setZero();
    store.at("l.conv.pw2.b").value.setZero();
    ag::Graph g;
    ag::Node out = conv_module(g, store, "l.conv", cfg, g.constant(random_mat(rng, 4, 8)), {});
    CHECK(out.value().cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("gradient check") {
    ParameterStore probe;
    Rng prng(7);
    register_conformer_layer(probe, "l", cfg, prng);
    probe.add("x", random_mat(prng, 4, cfg.d_model));
    auto f = [&cfg](ag::Graph& g, ParameterStore& s) {
      return ag::sum(ag::tanh_n(conv_module(g, s, "l.conv", cfg, g.param(s, "x"), {})));
    };
    CHECK(max_rel_err(probe, f) < 1e-4);
  }
}

TEST_CASE("conformer layer") {
  EncoderConfig cfg = toy_cfg();
  Rng rng(11);
  ParameterStore store;
  register_conformer_layer(store, "l", cfg, rng);

  SUBCASE("shape preserved") {
    ag::Graph g;
    ag::Node out = conformer_layer(g, store, "l", cfg, g.constant(random_mat(rng, 5, 8)), {});
    CHECK(out.rows() == 5);
    CHECK(out.cols() == 8);
  }

  SUBCASE("zeroed sub-block projections reduce to the final norm") {
    for (const char* p : {"l.ffn1.lin2", "l.mhsa.o", "l.conv.pw2", "l.ffn2.lin2"}) {
      store.at(std::string(p) + ".w").value.setZero();
      store.at(std::string(p) + ".b").value.setZero();
    }
    Mat x = random_mat(rng, 5, 8);
    ag::Graph g;
    ag::Node out = conformer_layer(g, store, "l", cfg, g.constant(x), {});
    ag::Node expect = norm(g, store, "l.final_norm", g.constant(x));
    CHECK(out.value().isApprox(expect.value(), 1e-12));
  }

  SUBCASE("full-layer gradient check") {
    ParameterStore probe;
    Rng prng(13);
    EncoderConfig small = toy_cfg(4, 8, 2, 3);
    register_conformer_layer(probe, "l", small, prng);
    probe.add("x", random_mat(prng, 4, 4));
    auto f = [&small](ag::Graph& g, ParameterStore& s) {
      return ag::sum(ag::swish(conformer_layer(g, s, "l", small, g.param(s, "x"), {})));
    };
    CHECK(max_rel_err(probe, f) < 1e-4);
  }
}

TEST_CASE("parameter count matches the analytic formula") {
  Rng rng(17);
  for (const EncoderConfig& cfg :
       {toy_cfg(8, 16, 2, 3), toy_cfg(12, 20, 4, 5), toy_cfg(256, 1024, 4, 15)}) {
    ParameterStore store;
    register_conformer_layer(store, "l", cfg, rng);
    CHECK(store.count_params() == conformer_layer_param_count(cfg));
  }
  // A full-scale layer lands near 1.5M trainable scalars.
  const double m = static_cast<double>(conformer_layer_param_count(toy_cfg(256, 1024, 4, 15)));
  CHECK(m / 1e6 == doctest::Approx(1.52).epsilon(0.05));
}

TEST_CASE("determinism under a fixed seed") {
  EncoderConfig cfg = toy_cfg();
  ParameterStore a, b;
  Rng ra(99), rb(99);
  register_conformer_layer(a, "l", cfg, ra);
  register_conformer_layer(b, "l", cfg, rb);
  for (const auto& [name, p] : a) CHECK(p.value == b.at(name).value);  // bit-identical

  Rng rng(1);
  Mat x = random_mat(rng, 5, 8);
  ag::Graph g1, g2;
  Mat o1 = conformer_layer(g1, a, "l", cfg, g1.constant(x), {}).value();
  Mat o2 = conformer_layer(g2, b, "l", cfg, g2.constant(x), {}).value();
  CHECK(o1 == o2);
}
