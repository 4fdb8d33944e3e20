#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "dmh/ops.hpp"
#include "dmh/params.hpp"
#include "dmh/scan.hpp"

namespace dmh {

// ---------------------------------------------------------------------------
// Zero-order-hold discretization
//
//   A_bar = exp(dt*A)              (elementwise, A diagonal negative real)
//   B_bar = (dt*A)^{-1} (exp(dt*A) - 1) (dt*B) = expm1(dt*A)/A * B
//
// expm1 keeps B_bar accurate for small dt*A.
template <typename Real>
struct Discretized {
  std::vector<Real> a_bar;
  std::vector<Real> b_bar;
};

template <typename Real>
Discretized<Real> discretize(const std::vector<Real>& a, const std::vector<Real>& b,
                             Real dt) {
  DMH_CHECK(dt > Real(0), "discretize requires dt > 0, got ", dt);
  DMH_CHECK(a.size() == b.size(), "discretize: A and B must have equal length");
  Discretized<Real> out;
  out.a_bar.resize(a.size());
  out.b_bar.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    DMH_CHECK(a[i] < Real(0), "discretize requires A < 0, got A[", i, "]=", a[i]);
    Real u = dt * a[i];
    out.a_bar[i] = std::exp(u);
    out.b_bar[i] = std::expm1(u) / a[i] * b[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Time-invariant diagonal SSM, the reference form for the scan paths:
// per channel ch a state vector of size N with fixed (a_bar, b_bar, c).
template <typename Real>
struct LtiSsm {
  int64_t channels = 0;
  int64_t state_size = 0;
  std::vector<Real> a_bar;  // (channels, N)
  std::vector<Real> b_bar;  // (channels, N)
  std::vector<Real> c;      // (channels, N)
};

// Carried hidden state; lets a split sequence reproduce the whole-sequence
// result exactly.
template <typename Real>
struct ScanState {
  std::vector<Real> h;  // (channels, N), zeros when empty
  int64_t step = 0;
};

// y[t,ch] = sum_n c[ch,n] * h[t,ch,n],  h via the sequential recurrence.
template <typename Real>
std::vector<Real> scan_sequential(const std::vector<Real>& x, int64_t L,
                                  const LtiSsm<Real>& p,
                                  ScanState<Real>* state = nullptr) {
  int64_t C = p.channels, N = p.state_size;
  DMH_CHECK(static_cast<int64_t>(x.size()) == L * C, "scan input size mismatch");
  std::vector<Real> h(C * N);
  if (state && !state->h.empty()) h = state->h;
  std::vector<Real> y(L * C, Real(0));
  for (int64_t t = 0; t < L; ++t) {
    for (int64_t ch = 0; ch < C; ++ch) {
      Real xt = x[t * C + ch];
      Real acc = 0;
      for (int64_t n = 0; n < N; ++n) {
        Real& hv = h[ch * N + n];
        hv = p.a_bar[ch * N + n] * hv + p.b_bar[ch * N + n] * xt;
        acc += p.c[ch * N + n] * hv;
      }
      y[t * C + ch] = acc;
    }
  }
  if (state) {
    state->h = h;
    state->step += L;
  }
  return y;
}

// Same result via the associative parallel scan (no carried state).
template <typename Real>
std::vector<Real> scan_parallel(const std::vector<Real>& x, int64_t L,
                                const LtiSsm<Real>& p) {
  int64_t C = p.channels, N = p.state_size;
  DMH_CHECK(static_cast<int64_t>(x.size()) == L * C, "scan input size mismatch");
  int64_t M = C * N;
  std::vector<Real> a(L * M), b(L * M), h(L * M);
  for (int64_t t = 0; t < L; ++t)
    for (int64_t ch = 0; ch < C; ++ch)
      for (int64_t n = 0; n < N; ++n) {
        a[t * M + ch * N + n] = p.a_bar[ch * N + n];
        b[t * M + ch * N + n] = p.b_bar[ch * N + n] * x[t * C + ch];
      }
  linear_scan_parallel(a.data(), b.data(), h.data(), L, M);
  std::vector<Real> y(L * C, Real(0));
  for (int64_t t = 0; t < L; ++t)
    for (int64_t ch = 0; ch < C; ++ch) {
      Real acc = 0;
      for (int64_t n = 0; n < N; ++n) acc += p.c[ch * N + n] * h[t * M + ch * N + n];
      y[t * C + ch] = acc;
    }
  return y;
}

// ---------------------------------------------------------------------------
// Autograd ops used by the Mamba block

// Depthwise causal 1-D convolution: x (B,L,E), w (E,W), bias (E); the window
// covers positions t-W+1..t with zero left padding.
template <typename Real>
Tensor<Real> conv1d_causal_depthwise(const Tensor<Real>& x, const Tensor<Real>& w,
                                     const Tensor<Real>& bias) {
  DMH_CHECK(x.ndim() == 3 && w.ndim() == 2, "conv1d expects x (B,L,E), w (E,W)");
  int64_t B = x.dim(0), L = x.dim(1), E = x.dim(2), W = w.dim(1);
  DMH_CHECK_T(ShapeError, w.dim(0) == E && bias.size() == E,
              "conv1d channel mismatch: x ", shape_str(x.shape()), ", w ",
              shape_str(w.shape()));
  auto out = Tensor<Real>::zeros(x.shape());
  DMH_PARALLEL_FOR(B) {
    for (int64_t t = 0; t < L; ++t)
      for (int64_t e = 0; e < E; ++e) {
        Real acc = bias.data()[e];
        for (int64_t k = 0; k < W; ++k) {
          int64_t s = t - W + 1 + k;
          if (s >= 0) acc += w.data()[e * W + k] * x.data()[(_i * L + s) * E + e];
        }
        out.data()[(_i * L + t) * E + e] = acc;
      }
  }
  attach_backward(out, {x, w, bias}, [x, w, bias, B, L, E, W](TensorNode<Real>& o) mutable {
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < L; ++t)
        for (int64_t e = 0; e < E; ++e) {
          Real go = o.grad[(b * L + t) * E + e];
          if (go == Real(0)) continue;
          if (bias.requires_grad()) bias.grad()[e] += go;
          for (int64_t k = 0; k < W; ++k) {
            int64_t s = t - W + 1 + k;
            if (s < 0) continue;
            if (w.requires_grad())
              w.grad()[e * W + k] += go * x.data()[(b * L + s) * E + e];
            if (x.requires_grad())
              x.grad()[(b * L + s) * E + e] += go * w.data()[e * W + k];
          }
        }
  });
  return out;
}

// Input-dependent (selective) scan with ZOH discretization fused in.
//   u     (B,L,E)  scan input
//   delta (B,L,E)  positive timescales
//   Bm    (B,L,N)  input projection, shared across channels
//   Cm    (B,L,N)  output projection, shared across channels
//   A_log (E,N)    A = -exp(A_log)
// Output y (B,L,E): h_t = exp(dt*A) h_{t-1} + expm1(dt*A)/A * B_t * u_t,
// y_t = <C_t, h_t>.
template <typename Real>
Tensor<Real> selective_scan(const Tensor<Real>& u, const Tensor<Real>& delta,
                            const Tensor<Real>& Bm, const Tensor<Real>& Cm,
                            const Tensor<Real>& A_log) {
  DMH_CHECK(u.ndim() == 3 && delta.shape() == u.shape(), "selective_scan: bad u/delta");
  int64_t B = u.dim(0), L = u.dim(1), E = u.dim(2);
  DMH_CHECK(A_log.ndim() == 2 && A_log.dim(0) == E, "selective_scan: A_log must be (E,N)");
  int64_t N = A_log.dim(1);
  DMH_CHECK(Bm.ndim() == 3 && Bm.dim(0) == B && Bm.dim(1) == L && Bm.dim(2) == N &&
                Cm.shape() == Bm.shape(),
            "selective_scan: B/C must be (B,L,N)");
  auto out = Tensor<Real>::zeros({B, L, E});
  auto hsave = std::make_shared<std::vector<Real>>(static_cast<size_t>(B * L * E * N));
  std::vector<Real> A(static_cast<size_t>(E * N));
  for (int64_t i = 0; i < E * N; ++i) A[i] = -std::exp(A_log.data()[i]);
  auto shared_A = std::make_shared<std::vector<Real>>(std::move(A));
  const Real* Ad = shared_A->data();
  DMH_PARALLEL_FOR(B * E) {
    int64_t b = _i / E, e = _i % E;
    std::vector<Real> h(N, Real(0));
    for (int64_t t = 0; t < L; ++t) {
      Real ut = u.data()[(b * L + t) * E + e];
      Real dt = delta.data()[(b * L + t) * E + e];
      const Real* Bt = Bm.data() + (b * L + t) * N;
      const Real* Ct = Cm.data() + (b * L + t) * N;
      Real acc = 0;
      Real* hs = hsave->data() + ((b * L + t) * E + e) * N;
      for (int64_t n = 0; n < N; ++n) {
        Real Aen = Ad[e * N + n];
        Real x = dt * Aen;
        Real abar = std::exp(x);
        Real bbar = std::expm1(x) / Aen;
        h[n] = abar * h[n] + bbar * Bt[n] * ut;
        hs[n] = h[n];
        acc += Ct[n] * h[n];
      }
      out.data()[(b * L + t) * E + e] = acc;
    }
  }
  attach_backward(out, {u, delta, Bm, Cm, A_log},
                  [u, delta, Bm, Cm, A_log, hsave, shared_A, B, L, E, N](
                      TensorNode<Real>& o) mutable {
    const Real* Ad = shared_A->data();
    // Pre-size grads before the parallel region (lazy sizing is not
    // thread-safe); each batch index owns disjoint grad slices.
    if (u.requires_grad()) u.grad();
    if (delta.requires_grad()) delta.grad();
    if (Bm.requires_grad()) Bm.grad();
    if (Cm.requires_grad()) Cm.grad();
    // Per-batch scratch for dA keeps the reduction order fixed.
    std::vector<std::vector<Real>> dA_scratch(
        static_cast<size_t>(B), std::vector<Real>(static_cast<size_t>(E * N), Real(0)));
    DMH_PARALLEL_FOR(B) {
      int64_t b = _i;
      std::vector<Real> g(static_cast<size_t>(E * N));  // dL/dh at step t+1, per (e,n)
      std::fill(g.begin(), g.end(), Real(0));
      for (int64_t t = L - 1; t >= 0; --t) {
        const Real* Bt = Bm.data() + (b * L + t) * N;
        const Real* Ct = Cm.data() + (b * L + t) * N;
        Real* dB_t = Bm.requires_grad() ? Bm.grad().data() + (b * L + t) * N : nullptr;
        Real* dC_t = Cm.requires_grad() ? Cm.grad().data() + (b * L + t) * N : nullptr;
        for (int64_t e = 0; e < E; ++e) {
          Real go = o.grad[(b * L + t) * E + e];
          Real ut = u.data()[(b * L + t) * E + e];
          Real dt = delta.data()[(b * L + t) * E + e];
          const Real* hs = hsave->data() + ((b * L + t) * E + e) * N;
          const Real* hprev =
              t > 0 ? hsave->data() + ((b * L + t - 1) * E + e) * N : nullptr;
          Real du = 0, ddt = 0;
          for (int64_t n = 0; n < N; ++n) {
            Real Aen = Ad[e * N + n];
            Real x = dt * Aen;
            Real abar = std::exp(x);
            Real bbar = std::expm1(x) / Aen;
            Real hp = hprev ? hprev[n] : Real(0);
            // dL/dh_t for this lane: local output term plus carry from t+1.
            Real gh = g[e * N + n] + go * Ct[n];
            if (dC_t) dC_t[n] += go * hs[n];
            du += gh * bbar * Bt[n];
            if (dB_t) dB_t[n] += gh * bbar * ut;
            // d(abar)/ddt = Aen*abar ; d(bbar)/ddt = abar
            ddt += gh * (hp * Aen * abar + Bt[n] * ut * abar);
            // d(abar)/dA = dt*abar ; d(bbar)/dA = (dt*abar - bbar)/A
            Real dA = gh * (hp * dt * abar + Bt[n] * ut * (dt * abar - bbar) / Aen);
            dA_scratch[b][e * N + n] += dA;
            // carry to h_{t-1}
            g[e * N + n] = gh * abar;
          }
          if (u.requires_grad()) u.grad()[(b * L + t) * E + e] += du;
          if (delta.requires_grad()) delta.grad()[(b * L + t) * E + e] += ddt;
        }
      }
    }
    if (A_log.requires_grad()) {
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < E * N; ++i)
          A_log.grad()[i] += dA_scratch[b][i] * Ad[i];  // dA/dA_log = A
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Mamba block stack

struct SsmConfig {
  int64_t embed_dim = 128;
  int64_t n_layers = 2;
  int64_t state_size = 16;
  int64_t expand = 2;
  int64_t conv_width = 4;
  double dropout = 0.1;
};

// Gated selective-SSM blocks with pre-layer-norm and residual connections:
// expand projection -> causal depthwise conv -> SiLU -> selective scan ->
// SiLU gate -> contract projection.
template <typename Real>
class MambaStack {
 public:
  MambaStack(const SsmConfig& cfg, ParameterRegistry<Real>& params,
             const std::string& prefix, Rng& rng)
      : cfg_(cfg) {
    int64_t D = cfg.embed_dim, E = cfg.expand * D, N = cfg.state_size, W = cfg.conv_width;
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
      std::string p = prefix + ".layer" + std::to_string(l) + ".";
      Layer lay;
      lay.ln_g = params.add(p + "ln_g", Tensor<Real>::filled({D}, Real(1)));
      lay.ln_b = params.add(p + "ln_b", Tensor<Real>::zeros({D}));
      lay.w_in = params.add(p + "w_in",
                            Tensor<Real>::randn({D, 2 * E}, rng, Real(1.0 / std::sqrt((double)D))));
      lay.b_in = params.add(p + "b_in", Tensor<Real>::zeros({2 * E}));
      lay.conv_w = params.add(p + "conv_w",
                              Tensor<Real>::randn({E, W}, rng, Real(1.0 / std::sqrt((double)W))));
      lay.conv_b = params.add(p + "conv_b", Tensor<Real>::zeros({E}));
      lay.w_delta = params.add(
          p + "w_delta", Tensor<Real>::randn({E, E}, rng, Real(1.0 / std::sqrt((double)E))));
      // softplus(b_delta) spans [0.001, 0.1] at init
      auto bd = Tensor<Real>::zeros({E});
      for (int64_t e = 0; e < E; ++e) {
        double dt = std::exp(std::log(0.001) +
                             rng.uniform() * (std::log(0.1) - std::log(0.001)));
        bd.data()[e] = static_cast<Real>(std::log(std::expm1(dt)));
      }
      lay.b_delta = params.add(p + "b_delta", std::move(bd));
      lay.w_B = params.add(p + "w_B",
                           Tensor<Real>::randn({E, N}, rng, Real(1.0 / std::sqrt((double)E))));
      lay.w_C = params.add(p + "w_C",
                           Tensor<Real>::randn({E, N}, rng, Real(1.0 / std::sqrt((double)E))));
      // S4D-real style init: A = -(1..N) per channel
      auto alog = Tensor<Real>::zeros({E, N});
      for (int64_t e = 0; e < E; ++e)
        for (int64_t n = 0; n < N; ++n)
          alog.data()[e * N + n] = static_cast<Real>(std::log((double)(n + 1)));
      lay.A_log = params.add(p + "A_log", std::move(alog));
      lay.w_out = params.add(
          p + "w_out", Tensor<Real>::randn({E, D}, rng, Real(1.0 / std::sqrt((double)E))));
      lay.b_out = params.add(p + "b_out", Tensor<Real>::zeros({D}));
      layers_.push_back(std::move(lay));
    }
  }

  const SsmConfig& config() const { return cfg_; }

  // x: (B, L, D). Strictly causal; training enables dropout.
  Tensor<Real> forward(const Tensor<Real>& x, bool training, Rng& rng) const {
    DMH_CHECK(x.ndim() == 3 && x.dim(2) == cfg_.embed_dim, "MambaStack expects (B,L,D)");
    int64_t B = x.dim(0), L = x.dim(1), D = cfg_.embed_dim, E = cfg_.expand * D;
    Tensor<Real> cur = x;
    for (const auto& lay : layers_) {
      auto flat = reshape(cur, {B * L, D});
      auto xn = layer_norm(flat, lay.ln_g, lay.ln_b);
      auto proj = add_rowvec(matmul(xn, lay.w_in), lay.b_in);
      auto xpart = slice_cols(proj, 0, E);
      auto gate = slice_cols(proj, E, 2 * E);
      auto xc = conv1d_causal_depthwise(reshape(xpart, {B, L, E}), lay.conv_w, lay.conv_b);
      auto u = reshape(silu(xc), {B * L, E});
      auto dt = softplus(add_rowvec(matmul(u, lay.w_delta), lay.b_delta));
      auto Bmat = matmul(u, lay.w_B);
      auto Cmat = matmul(u, lay.w_C);
      auto y = selective_scan(reshape(u, {B, L, E}), reshape(dt, {B, L, E}),
                              reshape(Bmat, {B, L, cfg_.state_size}),
                              reshape(Cmat, {B, L, cfg_.state_size}), lay.A_log);
      auto gated = mul(reshape(y, {B * L, E}), silu(gate));
      auto outp = add_rowvec(matmul(gated, lay.w_out), lay.b_out);
      outp = dropout(outp, training ? cfg_.dropout : 0.0, rng, training);
      cur = reshape(add(flat, outp), {B, L, D});
    }
    return cur;
  }

  // Incremental per-token evaluation with carried state; matches forward()
  // in evaluation mode on the concatenated sequence.
  struct StepState {
    struct LayerState {
      std::vector<Real> conv_hist;  // (W-1, E), oldest first
      std::vector<Real> h;          // (E, N)
    };
    std::vector<LayerState> layers;
  };

  StepState make_state() const {
    StepState st;
    int64_t E = cfg_.expand * cfg_.embed_dim;
    st.layers.resize(static_cast<size_t>(cfg_.n_layers));
    for (auto& ls : st.layers) {
      ls.conv_hist.assign(static_cast<size_t>((cfg_.conv_width - 1) * E), Real(0));
      ls.h.assign(static_cast<size_t>(E * cfg_.state_size), Real(0));
    }
    return st;
  }

  // token: length-D input embedding; returns the block-stack output for this
  // position and advances the state.
  std::vector<Real> step(const std::vector<Real>& token, StepState& st) const {
    int64_t D = cfg_.embed_dim, E = cfg_.expand * D, N = cfg_.state_size,
            W = cfg_.conv_width;
    DMH_CHECK(static_cast<int64_t>(token.size()) == D, "step token must have length D");
    std::vector<Real> cur = token;
    for (size_t li = 0; li < layers_.size(); ++li) {
      const auto& lay = layers_[li];
      auto& ls = st.layers[li];
      // layer norm
      Real mean = 0;
      for (int64_t j = 0; j < D; ++j) mean += cur[j];
      mean /= Real(D);
      Real var = 0;
      for (int64_t j = 0; j < D; ++j) var += (cur[j] - mean) * (cur[j] - mean);
      var /= Real(D);
      Real rstd = Real(1) / std::sqrt(var + Real(1e-5));
      std::vector<Real> xn(D);
      for (int64_t j = 0; j < D; ++j)
        xn[j] = (cur[j] - mean) * rstd * lay.ln_g.data()[j] + lay.ln_b.data()[j];
      // in projection (bias added after the sum, matching matmul+add_rowvec)
      std::vector<Real> xe(E), ge(E);
      for (int64_t e = 0; e < 2 * E; ++e) {
        Real acc = 0;
        for (int64_t j = 0; j < D; ++j) acc += xn[j] * lay.w_in.data()[j * 2 * E + e];
        acc += lay.b_in.data()[e];
        (e < E ? xe[e] : ge[e - E]) = acc;
      }
      // causal depthwise conv over (history, current); same summation order
      // as the batched forward so results are bit-identical
      std::vector<Real> u(E);
      for (int64_t e = 0; e < E; ++e) {
        Real acc = lay.conv_b.data()[e];
        for (int64_t k = 0; k < W - 1; ++k)
          acc += lay.conv_w.data()[e * W + k] * ls.conv_hist[k * E + e];
        acc += lay.conv_w.data()[e * W + (W - 1)] * xe[e];
        Real s = acc;
        u[e] = s / (Real(1) + std::exp(-s));  // SiLU
      }
      // shift history
      if (W > 1) {
        std::copy(ls.conv_hist.begin() + E, ls.conv_hist.end(), ls.conv_hist.begin());
        std::copy(xe.begin(), xe.end(), ls.conv_hist.end() - E);
      }
      // delta, B, C projections
      std::vector<Real> dt(E), Bv(N), Cv(N);
      for (int64_t e = 0; e < E; ++e) {
        Real acc = 0;
        for (int64_t j = 0; j < E; ++j) acc += u[j] * lay.w_delta.data()[j * E + e];
        acc += lay.b_delta.data()[e];
        dt[e] = acc > Real(20) ? acc : std::log1p(std::exp(acc));
      }
      for (int64_t n = 0; n < N; ++n) {
        Real accB = 0, accC = 0;
        for (int64_t j = 0; j < E; ++j) {
          accB += u[j] * lay.w_B.data()[j * N + n];
          accC += u[j] * lay.w_C.data()[j * N + n];
        }
        Bv[n] = accB;
        Cv[n] = accC;
      }
      // selective scan step + gate + out projection
      std::vector<Real> yg(E);
      for (int64_t e = 0; e < E; ++e) {
        Real acc = 0;
        for (int64_t n = 0; n < N; ++n) {
          Real Aen = -std::exp(lay.A_log.data()[e * N + n]);
          Real x = dt[e] * Aen;
          Real abar = std::exp(x);
          Real bbar = std::expm1(x) / Aen;
          Real& hv = ls.h[e * N + n];
          hv = abar * hv + bbar * Bv[n] * u[e];
          acc += Cv[n] * hv;
        }
        Real g = ge[e];
        yg[e] = acc * (g / (Real(1) + std::exp(-g)));
      }
      std::vector<Real> outp(D);
      for (int64_t j = 0; j < D; ++j) {
        Real acc = 0;
        for (int64_t e = 0; e < E; ++e) acc += yg[e] * lay.w_out.data()[e * D + j];
        acc += lay.b_out.data()[j];
        outp[j] = cur[j] + acc;  // residual
      }
      cur = std::move(outp);
    }
    return cur;
  }

 private:
  struct Layer {
    Tensor<Real> ln_g, ln_b, w_in, b_in, conv_w, conv_b, w_delta, b_delta, w_B, w_C,
        A_log, w_out, b_out;
  };
  SsmConfig cfg_;
  std::vector<Layer> layers_;
};

// Spec-level convenience: one forward through the block stack.
template <typename Real>
Tensor<Real> mamba_block_forward(const MambaStack<Real>& stack, const Tensor<Real>& tokens,
                                 bool training, Rng& rng) {
  return stack.forward(tokens, training, rng);
}

}  // namespace dmh
