#include "doctest.h"

#include <cmath>

#include "mstdp/layers.hpp"

using namespace mstdp;

TEST_CASE("sinusoidal position tables interleave sine and cosine") {
  Tensor pe = sinusoidal_table(10, 6);
  REQUIRE(pe.rows() == 10);
  REQUIRE(pe.cols() == 6);
  for (int i = 0; i < 3; ++i) {
    CHECK(pe(0, 2 * i) == doctest::Approx(0.0));     // sin 0
    CHECK(pe(0, 2 * i + 1) == doctest::Approx(1.0)); // cos 0
  }
  for (int p = 0; p < 10; ++p) {
    for (int i = 0; i < 3; ++i) {
      double freq = std::pow(10000.0, -2.0 * i / 6.0);
      CHECK(pe(p, 2 * i) == doctest::Approx(std::sin(p * freq)).epsilon(1e-12));
      CHECK(pe(p, 2 * i + 1) == doctest::Approx(std::cos(p * freq)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(sinusoidal_table(4, 5), ContractError); // odd width
}

TEST_CASE("causal masks keep the lower triangle") {
  Tensor m = causal_mask(4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(m(r, c) == (c <= r ? 1.0 : 0.0));
}

TEST_CASE("linear layers compute x W + b") {
  ParameterStore store;
  Rng rng = make_rng(1, 0);
  init_linear(store, rng, "fc", 3, 2);
  REQUIRE(store.has("fc.w"));
  REQUIRE(store.has("fc.b"));
  CHECK(store.value("fc.b").isZero());

  Tensor x = gaussian(4, 3, 1.0, rng);
  Tape t;
  Value y = linear(t, t.constant(x), store, "fc");
  Tensor expect = x * store.value("fc.w");
  expect.rowwise() += store.value("fc.b").row(0);
  CHECK((y.val() - expect).norm() == doctest::Approx(0.0));
}

TEST_CASE("attention rows are distributions and respect the mask") {
  ParameterStore store;
  Rng rng = make_rng(2, 0);
  init_attention(store, rng, "att", 8, 6, 2);

  Tape t;
  Value q = t.constant(gaussian(5, 8, 1.0, rng));
  Value kv = t.constant(gaussian(7, 6, 1.0, rng));
  Tensor keep = Tensor::Ones(5, 7);
  keep(1, 2) = 0.0;
  keep(1, 5) = 0.0;
  keep(4, 0) = 0.0;

  AttentionProbe probe;
  Value out = multi_head_attention(t, q, kv, kv, store, "att", 2, &keep, &probe);
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 8);

  REQUIRE(probe.weights.size() == 2); // one alpha matrix per head
  for (const Value& alpha : probe.weights) {
    const Tensor& a = alpha.val();
    REQUIRE(a.rows() == 5);
    REQUIRE(a.cols() == 7);
    for (int r = 0; r < 5; ++r) {
      CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-9);
      for (int c = 0; c < 7; ++c) CHECK(a(r, c) >= 0.0);
    }
    CHECK(a(1, 2) == 0.0);
    CHECK(a(1, 5) == 0.0);
    CHECK(a(4, 0) == 0.0);
  }
}

TEST_CASE("attention gradients pass finite differences") {
  ParameterStore store;
  Rng rng = make_rng(3, 0);
  init_attention(store, rng, "att", 4, 4, 2);
  store.create("x", 3, 4) = gaussian(3, 4, 0.5, rng);

  auto loss = [&](bool accumulate) {
    Tape t;
    Value x = t.param(store, "x");
    Value out = multi_head_attention(t, x, x, x, store, "att", 2);
    Value l = t.mean_all(t.mul(out, out));
    if (accumulate) t.backward(l);
    return l.val()(0, 0);
  };
  auto res = grad_check(loss, store);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("encoder blocks keep shape and differentiate") {
  ParameterStore store;
  Rng rng = make_rng(4, 0);
  init_encoder_block(store, rng, "enc", 6, 2, 2);
  store.create("x", 4, 6) = gaussian(4, 6, 0.5, rng);

  auto loss = [&](bool accumulate) {
    Tape t;
    Value out = encoder_block(t, t.param(store, "x"), store, "enc", 2);
    Value l = t.mean_all(t.mul(out, out));
    if (accumulate) t.backward(l);
    return l.val()(0, 0);
  };
  {
    Tape t;
    Value out = encoder_block(t, t.param(store, "x"), store, "enc", 2);
    CHECK(out.rows() == 4);
    CHECK(out.cols() == 6);
  }
  store.zero_grads();
  auto res = grad_check(loss, store);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("decoder blocks attend causally to themselves and fully to memory") {
  ParameterStore store;
  Rng rng = make_rng(5, 0);
  init_decoder_block(store, rng, "dec", 6, 4, 2, 2);
  store.create("x", 3, 6) = gaussian(3, 6, 0.5, rng);
  store.create("mem", 2, 4) = gaussian(2, 4, 0.5, rng);

  Tensor mask = causal_mask(3);
  {
    Tape t;
    AttentionProbe probe;
    Value out = decoder_block(t, t.param(store, "x"), t.param(store, "mem"), store, "dec", 2,
                              &mask, &probe);
    CHECK(out.rows() == 3);
    CHECK(out.cols() == 6);
    // Self-attention heads come first and must be lower-triangular.
    REQUIRE(probe.weights.size() == 4);
    for (int h = 0; h < 2; ++h) {
      const Tensor& a = probe.weights[static_cast<std::size_t>(h)].val();
      REQUIRE(a.rows() == 3);
      REQUIRE(a.cols() == 3);
      for (int r = 0; r < 3; ++r)
        for (int c = r + 1; c < 3; ++c) CHECK(a(r, c) == 0.0);
    }
    // Cross-attention heads cover the two memory rows.
    for (std::size_t h = 2; h < 4; ++h) {
      const Tensor& a = probe.weights[h].val();
      REQUIRE(a.cols() == 2);
      for (int r = 0; r < 3; ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-9);
    }
  }

  store.zero_grads();
  auto loss = [&](bool accumulate) {
    Tape t;
    Value out = decoder_block(t, t.param(store, "x"), t.param(store, "mem"), store, "dec", 2,
                              &mask);
    Value l = t.mean_all(t.mul(out, out));
    if (accumulate) t.backward(l);
    return l.val()(0, 0);
  };
  auto res = grad_check(loss, store);
  CHECK(res.max_rel_err < 1e-5);
}
