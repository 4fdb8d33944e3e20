#include <doctest.h>

#include <cmath>
#include <vector>

#include "dmh/params.hpp"
#include "dmh/rng.hpp"
#include "dmh/ssm.hpp"
#include "helpers.hpp"

using dmh::MambaStack;
using dmh::Rng;
using dmh::SsmConfig;
using dmh::Tensor;

TEST_CASE("selective scan with constant inputs reduces to the LTI scan") {
  Rng rng(10);
  const int64_t L = 12, E = 3, N = 4;
  // Time-invariant delta/B/C replicated across positions.
  std::vector<double> dt_row(E), B_row(N), C_row(N);
  for (auto& v : dt_row) v = 0.05 + 0.2 * rng.uniform();
  for (auto& v : B_row) v = rng.normal();
  for (auto& v : C_row) v = rng.normal();
  auto A_log = Tensor<double>::zeros({E, N});
  for (int64_t i = 0; i < E * N; ++i) A_log.data()[i] = -1.0 + 2.0 * rng.uniform();

  auto u = Tensor<double>::randn({1, L, E}, rng);
  auto delta = Tensor<double>::zeros({1, L, E});
  auto Bm = Tensor<double>::zeros({1, L, N});
  auto Cm = Tensor<double>::zeros({1, L, N});
  for (int64_t t = 0; t < L; ++t) {
    for (int64_t e = 0; e < E; ++e) delta.data()[t * E + e] = dt_row[static_cast<size_t>(e)];
    for (int64_t n = 0; n < N; ++n) {
      Bm.data()[t * N + n] = B_row[static_cast<size_t>(n)];
      Cm.data()[t * N + n] = C_row[static_cast<size_t>(n)];
    }
  }
  auto y = dmh::selective_scan(u, delta, Bm, Cm, A_log);

  // Equivalent per-channel LTI systems: each channel e has its own dt, so
  // discretize per channel and scan each one independently.
  for (int64_t e = 0; e < E; ++e) {
    dmh::LtiSsm<double> p;
    p.channels = 1;
    p.state_size = N;
    std::vector<double> a(static_cast<size_t>(N)), b(static_cast<size_t>(N));
    for (int64_t n = 0; n < N; ++n) {
      a[static_cast<size_t>(n)] = -std::exp(A_log.data()[e * N + n]);
      b[static_cast<size_t>(n)] = B_row[static_cast<size_t>(n)];
    }
    auto d = dmh::discretize(a, b, dt_row[static_cast<size_t>(e)]);
    p.a_bar = d.a_bar;
    p.b_bar = d.b_bar;
    p.c = C_row;
    std::vector<double> x(static_cast<size_t>(L));
    for (int64_t t = 0; t < L; ++t) x[static_cast<size_t>(t)] = u.data()[t * E + e];
    auto ref = dmh::scan_sequential(x, L, p);
    for (int64_t t = 0; t < L; ++t)
      CHECK(y.data()[t * E + e] == doctest::Approx(ref[static_cast<size_t>(t)]).epsilon(1e-10));
  }
}

TEST_CASE("gradcheck: selective scan backward") {
  Rng rng(11);
  const int64_t B = 2, L = 5, E = 2, N = 3;
  auto u = Tensor<double>::randn({B, L, E}, rng, 0.7).set_requires_grad(true);
  auto delta = Tensor<double>::uniform({B, L, E}, rng, 0.02, 0.3).set_requires_grad(true);
  auto Bm = Tensor<double>::randn({B, L, N}, rng, 0.7).set_requires_grad(true);
  auto Cm = Tensor<double>::randn({B, L, N}, rng, 0.7).set_requires_grad(true);
  auto A_log = Tensor<double>::uniform({E, N}, rng, -1.0, 1.0).set_requires_grad(true);
  auto loss_fn = [&]() {
    auto y = dmh::selective_scan(u, delta, Bm, Cm, A_log);
    return dmh::mean_all(dmh::mul(y, y));
  };
  Rng crng(6);
  CHECK(dmh_test::gradcheck({u, delta, Bm, Cm, A_log}, loss_fn, crng) < 1e-3);
}

TEST_CASE("gradcheck: causal depthwise convolution") {
  Rng rng(12);
  auto x = Tensor<double>::randn({2, 6, 3}, rng).set_requires_grad(true);
  auto w = Tensor<double>::randn({3, 4}, rng).set_requires_grad(true);
  auto b = Tensor<double>::randn({3}, rng).set_requires_grad(true);
  auto loss_fn = [&]() {
    auto y = dmh::conv1d_causal_depthwise(x, w, b);
    return dmh::mean_all(dmh::mul(y, y));
  };
  Rng crng(7);
  CHECK(dmh_test::gradcheck({x, w, b}, loss_fn, crng) < 1e-3);
}

TEST_CASE("causal conv ignores the future") {
  Rng rng(13);
  auto x = Tensor<float>::randn({1, 8, 2}, rng);
  auto w = Tensor<float>::randn({2, 4}, rng);
  auto b = Tensor<float>::randn({2}, rng);
  auto y1 = dmh::conv1d_causal_depthwise(x, w, b);
  auto x2 = x.detach();
  x2.data()[6 * 2 + 0] += 10.0f;  // perturb position 6
  auto y2 = dmh::conv1d_causal_depthwise(x2, w, b);
  for (int64_t t = 0; t < 6; ++t)
    for (int64_t e = 0; e < 2; ++e) CHECK(y1.data()[t * 2 + e] == y2.data()[t * 2 + e]);
  CHECK(y1.data()[6 * 2 + 0] != y2.data()[6 * 2 + 0]);
}

namespace {

SsmConfig tiny_cfg() {
  SsmConfig cfg;
  cfg.embed_dim = 8;
  cfg.n_layers = 2;
  cfg.state_size = 4;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("mamba stack output is strictly causal") {
  Rng rng(14);
  dmh::ParameterRegistry<float> params;
  MambaStack<float> stack(tiny_cfg(), params, "m", rng);
  const int64_t L = 10, D = 8;
  auto x = Tensor<float>::randn({1, L, D}, rng);
  Rng r1(0), r2(0);
  auto y1 = stack.forward(x, false, r1);
  auto x2 = x.detach();
  for (int64_t d = 0; d < D; ++d) x2.data()[5 * D + d] += 3.0f;  // perturb position 5
  auto y2 = stack.forward(x2, false, r2);
  for (int64_t t = 0; t < 5; ++t)
    for (int64_t d = 0; d < D; ++d) CHECK(y1.data()[t * D + d] == y2.data()[t * D + d]);
  bool later_changed = false;
  for (int64_t d = 0; d < D; ++d)
    later_changed = later_changed || y1.data()[5 * D + d] != y2.data()[5 * D + d];
  CHECK(later_changed);
}

TEST_CASE("mamba stepper matches the batched forward token by token") {
  Rng rng(15);
  dmh::ParameterRegistry<float> params;
  MambaStack<float> stack(tiny_cfg(), params, "m", rng);
  const int64_t L = 9, D = 8;
  auto x = Tensor<float>::randn({1, L, D}, rng);
  Rng fr(0);
  auto y = stack.forward(x, false, fr);
  auto st = stack.make_state();
  for (int64_t t = 0; t < L; ++t) {
    std::vector<float> tok(x.data() + t * D, x.data() + (t + 1) * D);
    auto out = stack.step(tok, st);
    for (int64_t d = 0; d < D; ++d) CHECK(out[static_cast<size_t>(d)] == y.data()[t * D + d]);
  }
}

TEST_CASE("mamba stack stays bounded on a long bounded input") {
  Rng rng(16);
  dmh::ParameterRegistry<float> params;
  MambaStack<float> stack(tiny_cfg(), params, "m", rng);
  auto st = stack.make_state();
  float max_abs = 0.0f;
  for (int64_t t = 0; t < 5000; ++t) {
    std::vector<float> tok(8);
    for (auto& v : tok) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
    auto out = stack.step(tok, st);
    for (float v : out) {
      CHECK(std::isfinite(v));
      max_abs = std::max(max_abs, std::abs(v));
    }
  }
  CHECK(max_abs < 1e3f);
}

TEST_CASE("gradcheck: full mamba stack in double precision") {
  Rng rng(17);
  SsmConfig cfg;
  cfg.embed_dim = 4;
  cfg.n_layers = 1;
  cfg.state_size = 2;
  cfg.dropout = 0.0;
  dmh::ParameterRegistry<double> params;
  MambaStack<double> stack(cfg, params, "m", rng);
  auto x = Tensor<double>::randn({1, 5, 4}, rng);
  auto loss_fn = [&]() {
    Rng fr(0);
    auto y = stack.forward(x, false, fr);
    return dmh::mean_all(dmh::mul(y, y));
  };
  Rng crng(8);
  CHECK(dmh_test::gradcheck(params.trainable(), loss_fn, crng, 8) < 1e-3);
}
