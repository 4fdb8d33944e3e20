#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dmh/ops.hpp"
#include "dmh/params.hpp"

namespace dmh {

struct AttentionConfig {
  int64_t n_layers = 3;
  int64_t n_heads = 3;
  int64_t embed_dim = 128;
  double dropout = 0.1;
  int64_t max_context_tokens = 0;  // 0 = unlimited

  int64_t head_dim() const {
    DMH_CHECK(n_heads >= 1 && embed_dim >= n_heads, "invalid attention config: D=",
              embed_dim, " heads=", n_heads);
    return embed_dim / n_heads;
  }
};

// Scaled dot-product attention with a causal mask, one head.
// Q, K, V: (L, D_head); output row i is a convex combination of V rows 0..i.
template <typename Real>
Tensor<Real> causal_attention(const Tensor<Real>& q, const Tensor<Real>& k,
                              const Tensor<Real>& v) {
  DMH_CHECK(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "causal_attention: 2-D inputs");
  int64_t L = q.dim(0), dh = q.dim(1);
  DMH_CHECK(k.dim(0) == L && v.dim(0) == L, "causal_attention: Q, K, V length mismatch (",
            L, ", ", k.dim(0), ", ", v.dim(0), ")");
  DMH_CHECK(k.dim(1) == dh && v.dim(1) == dh, "causal_attention: head dim mismatch");
  auto q3 = reshape(q, {1, L, dh});
  auto k3 = reshape(k, {1, L, dh});
  auto v3 = reshape(v, {1, L, dh});
  auto scores = scale(bmm(q3, k3, /*transpose_b=*/true),
                      Real(1.0 / std::sqrt(static_cast<double>(dh))));
  auto w = causal_masked_softmax(scores);
  return reshape(bmm(w, v3), {L, dh});
}

// GPT-style pre-layer-norm causal transformer block stack with ReLU MLPs.
// Dropout sits on attention weights and on the MLP output; evaluation mode
// disables it.
template <typename Real>
class TransformerStack {
 public:
  TransformerStack(const AttentionConfig& cfg, ParameterRegistry<Real>& params,
                   const std::string& prefix, Rng& rng)
      : cfg_(cfg) {
    int64_t D = cfg.embed_dim, H = cfg.n_heads, dh = cfg.head_dim();
    Real wstd = Real(1.0 / std::sqrt(static_cast<double>(D)));
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
      std::string p = prefix + ".layer" + std::to_string(l) + ".";
      Layer lay;
      lay.ln1_g = params.add(p + "ln1_g", Tensor<Real>::filled({D}, Real(1)));
      lay.ln1_b = params.add(p + "ln1_b", Tensor<Real>::zeros({D}));
      lay.w_q = params.add(p + "w_q", Tensor<Real>::randn({D, H * dh}, rng, wstd));
      lay.b_q = params.add(p + "b_q", Tensor<Real>::zeros({H * dh}));
      lay.w_k = params.add(p + "w_k", Tensor<Real>::randn({D, H * dh}, rng, wstd));
      lay.b_k = params.add(p + "b_k", Tensor<Real>::zeros({H * dh}));
      lay.w_v = params.add(p + "w_v", Tensor<Real>::randn({D, H * dh}, rng, wstd));
      lay.b_v = params.add(p + "b_v", Tensor<Real>::zeros({H * dh}));
      lay.w_o = params.add(p + "w_o", Tensor<Real>::randn({H * dh, D}, rng,
                                                          Real(1.0 / std::sqrt((double)(H * dh)))));
      lay.b_o = params.add(p + "b_o", Tensor<Real>::zeros({D}));
      lay.ln2_g = params.add(p + "ln2_g", Tensor<Real>::filled({D}, Real(1)));
      lay.ln2_b = params.add(p + "ln2_b", Tensor<Real>::zeros({D}));
      lay.w_mlp1 = params.add(p + "w_mlp1", Tensor<Real>::randn({D, 4 * D}, rng, wstd));
      lay.b_mlp1 = params.add(p + "b_mlp1", Tensor<Real>::zeros({4 * D}));
      lay.w_mlp2 = params.add(p + "w_mlp2", Tensor<Real>::randn({4 * D, D}, rng,
                                                                Real(1.0 / std::sqrt((double)(4 * D)))));
      lay.b_mlp2 = params.add(p + "b_mlp2", Tensor<Real>::zeros({D}));
      layers_.push_back(std::move(lay));
    }
  }

  const AttentionConfig& config() const { return cfg_; }

  // tokens: (B, L, D) embedded sequence; causality is preserved through all
  // layers. Throws CapacityError when L exceeds the configured window.
  Tensor<Real> forward(const Tensor<Real>& x, bool training, Rng& rng) const {
    DMH_CHECK(x.ndim() == 3 && x.dim(2) == cfg_.embed_dim,
              "TransformerStack expects (B,L,D), got ", shape_str(x.shape()));
    int64_t B = x.dim(0), L = x.dim(1), D = cfg_.embed_dim;
    DMH_CHECK_T(CapacityError,
                cfg_.max_context_tokens == 0 || L <= cfg_.max_context_tokens,
                "context of ", L, " tokens exceeds capacity ", cfg_.max_context_tokens);
    int64_t H = cfg_.n_heads, dh = cfg_.head_dim();
    Real inv_sqrt = Real(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<Real> flat = reshape(x, {B * L, D});
    for (const auto& lay : layers_) {
      auto xn = layer_norm(flat, lay.ln1_g, lay.ln1_b);
      auto q = add_rowvec(matmul(xn, lay.w_q), lay.b_q);
      auto k = add_rowvec(matmul(xn, lay.w_k), lay.b_k);
      auto v = add_rowvec(matmul(xn, lay.w_v), lay.b_v);
      Tensor<Real> attn_out;
      for (int64_t h = 0; h < H; ++h) {
        auto qh = reshape(slice_cols(q, h * dh, (h + 1) * dh), {B, L, dh});
        auto kh = reshape(slice_cols(k, h * dh, (h + 1) * dh), {B, L, dh});
        auto vh = reshape(slice_cols(v, h * dh, (h + 1) * dh), {B, L, dh});
        auto w = causal_masked_softmax(scale(bmm(qh, kh, true), inv_sqrt));
        w = dropout(w, training ? cfg_.dropout : 0.0, rng, training);
        auto oh = reshape(bmm(w, vh), {B * L, dh});
        std::vector<int64_t> rows(static_cast<size_t>(dh));
        for (int64_t r = 0; r < dh; ++r) rows[static_cast<size_t>(r)] = h * dh + r;
        auto proj = matmul(oh, gather_rows(lay.w_o, rows));
        attn_out = h == 0 ? proj : add(attn_out, proj);
      }
      attn_out = add_rowvec(attn_out, lay.b_o);
      flat = add(flat, attn_out);
      auto xn2 = layer_norm(flat, lay.ln2_g, lay.ln2_b);
      auto hidden = relu(add_rowvec(matmul(xn2, lay.w_mlp1), lay.b_mlp1));
      auto mlp = add_rowvec(matmul(hidden, lay.w_mlp2), lay.b_mlp2);
      mlp = dropout(mlp, training ? cfg_.dropout : 0.0, rng, training);
      flat = add(flat, mlp);
    }
    return reshape(flat, {B, L, D});
  }

  // Incremental evaluation with cached keys/values: step() appends one token
  // and returns the stack output at that position. Equals the full forward
  // in evaluation mode at the last position.
  struct StepState {
    struct LayerState {
      std::vector<Real> k, v;  // (t, H*dh), grown per step
    };
    std::vector<LayerState> layers;
    int64_t length = 0;
  };

  StepState make_state() const {
    StepState st;
    st.layers.resize(static_cast<size_t>(cfg_.n_layers));
    return st;
  }

  std::vector<Real> step(const std::vector<Real>& token, StepState& st) const {
    int64_t D = cfg_.embed_dim, H = cfg_.n_heads, dh = cfg_.head_dim();
    DMH_CHECK(static_cast<int64_t>(token.size()) == D, "step token must have length D");
    DMH_CHECK_T(CapacityError,
                cfg_.max_context_tokens == 0 || st.length < cfg_.max_context_tokens,
                "context of ", st.length + 1, " tokens exceeds capacity ",
                cfg_.max_context_tokens);
    std::vector<Real> cur = token;
    int64_t t = st.length;
    for (size_t li = 0; li < layers_.size(); ++li) {
      const auto& lay = layers_[li];
      auto& ls = st.layers[li];
      std::vector<Real> xn = ln_row(cur, lay.ln1_g, lay.ln1_b);
      std::vector<Real> qr = affine_row(xn, lay.w_q, lay.b_q);
      std::vector<Real> kr = affine_row(xn, lay.w_k, lay.b_k);
      std::vector<Real> vr = affine_row(xn, lay.w_v, lay.b_v);
      ls.k.insert(ls.k.end(), kr.begin(), kr.end());
      ls.v.insert(ls.v.end(), vr.begin(), vr.end());
      Real inv_sqrt = Real(1.0 / std::sqrt(static_cast<double>(dh)));
      std::vector<Real> attn(static_cast<size_t>(D), Real(0));
      std::vector<Real> logits(static_cast<size_t>(t + 1));
      std::vector<Real> ohead(static_cast<size_t>(dh));
      for (int64_t h = 0; h < H; ++h) {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (int64_t j = 0; j <= t; ++j) {
          Real acc = 0;
          for (int64_t d = 0; d < dh; ++d)
            acc += qr[h * dh + d] * ls.k[j * H * dh + h * dh + d];
          logits[j] = acc * inv_sqrt;
          mx = std::max(mx, logits[j]);
        }
        Real sum = 0;
        for (int64_t j = 0; j <= t; ++j) {
          logits[j] = std::exp(logits[j] - mx);
          sum += logits[j];
        }
        std::fill(ohead.begin(), ohead.end(), Real(0));
        for (int64_t j = 0; j <= t; ++j) {
          Real w = logits[j] / sum;
          for (int64_t d = 0; d < dh; ++d) ohead[d] += w * ls.v[j * H * dh + h * dh + d];
        }
        for (int64_t jd = 0; jd < D; ++jd) {
          Real acc = 0;
          for (int64_t d = 0; d < dh; ++d)
            acc += ohead[d] * lay.w_o.data()[(h * dh + d) * D + jd];
          attn[jd] += acc;
        }
      }
      for (int64_t jd = 0; jd < D; ++jd) cur[jd] += attn[jd] + lay.b_o.data()[jd];
      std::vector<Real> xn2 = ln_row(cur, lay.ln2_g, lay.ln2_b);
      std::vector<Real> hidden = affine_row(xn2, lay.w_mlp1, lay.b_mlp1);
      for (auto& hv : hidden) hv = hv > Real(0) ? hv : Real(0);
      std::vector<Real> mlp = affine_row(hidden, lay.w_mlp2, lay.b_mlp2);
      for (int64_t jd = 0; jd < D; ++jd) cur[jd] += mlp[jd];
    }
    ++st.length;
    return cur;
  }

 private:
  struct Layer {
    Tensor<Real> ln1_g, ln1_b, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, ln2_g, ln2_b,
        w_mlp1, b_mlp1, w_mlp2, b_mlp2;
  };

  static std::vector<Real> ln_row(const std::vector<Real>& x, const Tensor<Real>& g,
                                  const Tensor<Real>& b) {
    int64_t d = static_cast<int64_t>(x.size());
    Real mean = 0;
    for (Real v : x) mean += v;
    mean /= Real(d);
    Real var = 0;
    for (Real v : x) var += (v - mean) * (v - mean);
    var /= Real(d);
    Real rstd = Real(1) / std::sqrt(var + Real(1e-5));
    std::vector<Real> out(x.size());
    for (int64_t j = 0; j < d; ++j)
      out[j] = (x[j] - mean) * rstd * g.data()[j] + b.data()[j];
    return out;
  }

  static std::vector<Real> affine_row(const std::vector<Real>& x, const Tensor<Real>& w,
                                      const Tensor<Real>& b) {
    int64_t in = w.dim(0), out_d = w.dim(1);
    std::vector<Real> out(static_cast<size_t>(out_d));
    for (int64_t j = 0; j < out_d; ++j) {
      Real acc = 0;
      for (int64_t i = 0; i < in; ++i) acc += x[i] * w.data()[i * out_d + j];
      out[j] = acc + b.data()[j];
    }
    return out;
  }

  AttentionConfig cfg_;
  std::vector<Layer> layers_;
};

// Spec-level convenience wrapper.
template <typename Real>
Tensor<Real> transformer_forward(const TransformerStack<Real>& stack,
                                 const Tensor<Real>& tokens, bool training, Rng& rng) {
  return stack.forward(tokens, training, rng);
}

}  // namespace dmh
