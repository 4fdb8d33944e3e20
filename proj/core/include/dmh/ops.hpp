#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

#include "dmh/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dmh {

// Worker count for data-parallel loops. Every loop assigns disjoint output
// elements per iteration, so results are bit-identical for any thread count.
inline int default_thread_count() {
  if (const char* env = std::getenv("DMH_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(hw == 0 ? 1u : hw, 8u));
}

inline int& thread_count_ref() {
  static int n = default_thread_count();
  return n;
}
inline int num_threads() { return thread_count_ref(); }
inline void set_num_threads(int n) { thread_count_ref() = n < 1 ? 1 : n; }

#ifdef _OPENMP
#define DMH_PARALLEL_FOR(n)                                                  \
  _Pragma("omp parallel for schedule(static) num_threads(dmh::num_threads())") \
      for (int64_t _i = 0; _i < (n); ++_i)
#else
#define DMH_PARALLEL_FOR(n) for (int64_t _i = 0; _i < (n); ++_i)
#endif

// Draws an index from softmax(logits) with the caller's rng. Online policies
// sample rather than argmax: with a weak context the predicted distribution is
// the (exploratory) behavior policy, and greedy decoding would collapse it to
// a constant action that can never discover reward on a new task.
template <typename Real>
int32_t sample_from_logits(const std::vector<Real>& logits, Rng& rng,
                           double temperature = 1.0) {
  Real mx = logits[0];
  for (Real v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<double> p(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i] - mx) / temperature);
    sum += p[i];
  }
  double u = rng.uniform() * sum;
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int32_t>(i);
  }
  return static_cast<int32_t>(p.size() - 1);
}

namespace detail {

// C[m,n] += A[m,k] * B[k,n], ikj order, parallel over rows of A.
template <typename Real>
void gemm_acc(const Real* a, const Real* b, Real* c, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(dmh::num_threads()) if (m > 1 && dmh::num_threads() > 1)
#endif
  for (int64_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    const Real* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename Real>
void gemm_bt_acc(const Real* a, const Real* b, Real* c, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(dmh::num_threads()) if (m > 1 && dmh::num_threads() > 1)
#endif
  for (int64_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      Real acc = 0;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename Real>
void gemm_at_acc(const Real* a, const Real* b, Real* c, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(dmh::num_threads()) if (k > 1 && dmh::num_threads() > 1)
#endif
  for (int64_t p = 0; p < k; ++p) {
    Real* crow = c + p * n;
    for (int64_t i = 0; i < m; ++i) {
      Real av = a[i * k + p];
      if (av == Real(0)) continue;
      const Real* brow = b + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix products

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  DMH_CHECK_T(ShapeError, a.ndim() == 2 && b.ndim() == 2,
              "matmul expects 2-D tensors, got ", shape_str(a.shape()), " and ",
              shape_str(b.shape()));
  DMH_CHECK_T(ShapeError, a.dim(1) == b.dim(0), "matmul inner dimensions disagree: ",
              shape_str(a.shape()), " x ", shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = Tensor<Real>::zeros({m, n});
  detail::gemm_acc(a.data(), b.data(), out.data(), m, k, n);
  attach_backward(out, {a, b}, [a, b, m, k, n](TensorNode<Real>& o) mutable {
    if (a.requires_grad()) {
      detail::gemm_bt_acc(o.grad.data(), b.data(), a.grad().data(), m, n, k);
    }
    if (b.requires_grad()) {
      detail::gemm_at_acc(a.data(), o.grad.data(), b.grad().data(), m, k, n);
    }
  });
  return out;
}

// Batched product over the leading dim: out[i] = a[i] * b[i] (or b[i]^T).
template <typename Real>
Tensor<Real> bmm(const Tensor<Real>& a, const Tensor<Real>& b, bool transpose_b = false) {
  DMH_CHECK_T(ShapeError, a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0),
              "bmm expects matching 3-D tensors, got ", shape_str(a.shape()), " and ",
              shape_str(b.shape()));
  int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2);
  int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  int64_t bk = transpose_b ? b.dim(2) : b.dim(1);
  DMH_CHECK_T(ShapeError, bk == k, "bmm inner dimensions disagree: ",
              shape_str(a.shape()), " x ", shape_str(b.shape()),
              transpose_b ? " (b transposed)" : "");
  auto out = Tensor<Real>::zeros({B, m, n});
  int64_t as = m * k, bs = b.dim(1) * b.dim(2), os = m * n;
  DMH_PARALLEL_FOR(B) {
    if (transpose_b)
      detail::gemm_bt_acc(a.data() + _i * as, b.data() + _i * bs, out.data() + _i * os, m, k, n);
    else
      detail::gemm_acc(a.data() + _i * as, b.data() + _i * bs, out.data() + _i * os, m, k, n);
  }
  attach_backward(out, {a, b},
                  [a, b, transpose_b, B, m, k, n, as, bs, os](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < B; ++i) {
      const Real* go = o.grad.data() + i * os;
      if (a.requires_grad()) {
        if (transpose_b)
          detail::gemm_acc(go, b.data() + i * bs, a.grad().data() + i * as, m, n, k);
        else
          detail::gemm_bt_acc(go, b.data() + i * bs, a.grad().data() + i * as, m, n, k);
      }
      if (b.requires_grad()) {
        if (transpose_b)
          detail::gemm_at_acc(go, a.data() + i * as, b.grad().data() + i * bs, m, n, k);
        else
          detail::gemm_at_acc(a.data() + i * as, go, b.grad().data() + i * bs, m, k, n);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  DMH_CHECK_T(ShapeError, a.shape() == b.shape(), "add shape mismatch: ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
  auto out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  attach_backward(out, {a, b}, [a, b, n](TensorNode<Real>& o) mutable {
    if (a.requires_grad())
      for (int64_t i = 0; i < n; ++i) a.grad()[i] += o.grad[i];
    if (b.requires_grad())
      for (int64_t i = 0; i < n; ++i) b.grad()[i] += o.grad[i];
  });
  return out;
}

// x[..., D] + row[D], broadcast over leading dims (bias add).
template <typename Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& row) {
  int64_t d = row.size();
  DMH_CHECK_T(ShapeError, x.dim(x.ndim() - 1) == d, "add_rowvec: last dim of ",
              shape_str(x.shape()), " != ", d);
  auto out = Tensor<Real>::zeros(x.shape());
  int64_t rows = x.size() / d;
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < d; ++j)
      out.data()[i * d + j] = x.data()[i * d + j] + row.data()[j];
  attach_backward(out, {x, row}, [x, row, rows, d](TensorNode<Real>& o) mutable {
    if (x.requires_grad())
      for (int64_t i = 0; i < rows * d; ++i) x.grad()[i] += o.grad[i];
    if (row.requires_grad())
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < d; ++j) row.grad()[j] += o.grad[i * d + j];
  });
  return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  DMH_CHECK_T(ShapeError, a.shape() == b.shape(), "mul shape mismatch: ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
  auto out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  attach_backward(out, {a, b}, [a, b, n](TensorNode<Real>& o) mutable {
    if (a.requires_grad())
      for (int64_t i = 0; i < n; ++i) a.grad()[i] += o.grad[i] * b.data()[i];
    if (b.requires_grad())
      for (int64_t i = 0; i < n; ++i) b.grad()[i] += o.grad[i] * a.data()[i];
  });
  return out;
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  auto out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
  attach_backward(out, {a}, [a, s, n](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < n; ++i) a.grad()[i] += o.grad[i] * s;
  });
  return out;
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return add(a, scale(b, Real(-1)));
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  auto out = Tensor<Real>::zeros(x.shape());
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > Real(0) ? x.data()[i] : Real(0);
  attach_backward(out, {x}, [x, n](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < n; ++i)
      if (x.data()[i] > Real(0)) x.grad()[i] += o.grad[i];
  });
  return out;
}

template <typename Real>
Tensor<Real> silu(const Tensor<Real>& x) {
  auto out = Tensor<Real>::zeros(x.shape());
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) {
    Real v = x.data()[i];
    out.data()[i] = v / (Real(1) + std::exp(-v));
  }
  attach_backward(out, {x}, [x, n](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < n; ++i) {
      Real v = x.data()[i];
      Real sig = Real(1) / (Real(1) + std::exp(-v));
      x.grad()[i] += o.grad[i] * sig * (Real(1) + v * (Real(1) - sig));
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> softplus(const Tensor<Real>& x) {
  auto out = Tensor<Real>::zeros(x.shape());
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) {
    Real v = x.data()[i];
    out.data()[i] = v > Real(20) ? v : std::log1p(std::exp(v));
  }
  attach_backward(out, {x}, [x, n](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < n; ++i)
      x.grad()[i] += o.grad[i] / (Real(1) + std::exp(-x.data()[i]));
  });
  return out;
}

template <typename Real>
Tensor<Real> exp_elem(const Tensor<Real>& x) {
  auto out = Tensor<Real>::zeros(x.shape());
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::exp(x.data()[i]);
  // the output value is read from the node itself: capturing `out` here would
  // make the node own its own handle and leak the graph
  attach_backward(out, {x}, [x, n](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < n; ++i) x.grad()[i] += o.grad[i] * o.value[i];
  });
  return out;
}

// Gradient passes only where the value lies strictly inside [lo, hi].
template <typename Real>
Tensor<Real> clamp(const Tensor<Real>& x, Real lo, Real hi) {
  auto out = Tensor<Real>::zeros(x.shape());
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::min(hi, std::max(lo, x.data()[i]));
  attach_backward(out, {x}, [x, lo, hi, n](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < n; ++i)
      if (x.data()[i] > lo && x.data()[i] < hi) x.grad()[i] += o.grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization / softmax

template <typename Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& x) {
  DMH_CHECK(x.ndim() >= 1 && x.dim(x.ndim() - 1) >= 1, "softmax needs a last dim");
  int64_t d = x.dim(x.ndim() - 1);
  int64_t rows = x.size() / d;
  auto out = Tensor<Real>::zeros(x.shape());
  for (int64_t i = 0; i < rows; ++i) {
    const Real* xi = x.data() + i * d;
    Real* oi = out.data() + i * d;
    Real mx = xi[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, xi[j]);
    Real sum = 0;
    for (int64_t j = 0; j < d; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      sum += oi[j];
    }
    for (int64_t j = 0; j < d; ++j) oi[j] /= sum;
  }
  attach_backward(out, {x}, [x, rows, d](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < rows; ++i) {
      const Real* s = o.value.data() + i * d;
      const Real* g = o.grad.data() + i * d;
      Real dot = 0;
      for (int64_t j = 0; j < d; ++j) dot += s[j] * g[j];
      for (int64_t j = 0; j < d; ++j) x.grad()[i * d + j] += s[j] * (g[j] - dot);
    }
  });
  return out;
}

// Softmax over j <= i of the last two dims (scores [..., L, L]); entries above
// the diagonal are exactly zero.
template <typename Real>
Tensor<Real> causal_masked_softmax(const Tensor<Real>& scores) {
  DMH_CHECK(scores.ndim() >= 2, "causal_masked_softmax expects [..., L, L]");
  int64_t L = scores.dim(scores.ndim() - 1);
  DMH_CHECK_T(ShapeError, scores.dim(scores.ndim() - 2) == L,
              "causal_masked_softmax expects square trailing dims, got ",
              shape_str(scores.shape()));
  int64_t mats = scores.size() / (L * L);
  auto out = Tensor<Real>::zeros(scores.shape());
  for (int64_t b = 0; b < mats; ++b) {
    for (int64_t i = 0; i < L; ++i) {
      const Real* row = scores.data() + (b * L + i) * L;
      Real* orow = out.data() + (b * L + i) * L;
      Real mx = row[0];
      for (int64_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
      Real sum = 0;
      for (int64_t j = 0; j <= i; ++j) {
        orow[j] = std::exp(row[j] - mx);
        sum += orow[j];
      }
      for (int64_t j = 0; j <= i; ++j) orow[j] /= sum;
    }
  }
  attach_backward(out, {scores}, [scores, mats, L](TensorNode<Real>& o) mutable {
    for (int64_t b = 0; b < mats; ++b) {
      for (int64_t i = 0; i < L; ++i) {
        int64_t off = (b * L + i) * L;
        const Real* s = o.value.data() + off;
        const Real* g = o.grad.data() + off;
        Real dot = 0;
        for (int64_t j = 0; j <= i; ++j) dot += s[j] * g[j];
        for (int64_t j = 0; j <= i; ++j) scores.grad()[off + j] += s[j] * (g[j] - dot);
      }
    }
  });
  return out;
}

// Normalizes the last dim to zero mean / unit variance, then applies an
// elementwise affine (gain, bias). epsilon = 1e-5.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain,
                        const Tensor<Real>& bias) {
  int64_t d = x.dim(x.ndim() - 1);
  DMH_CHECK_T(ShapeError, gain.size() == d && bias.size() == d,
              "layer_norm affine params must have length ", d);
  const Real eps = Real(1e-5);
  int64_t rows = x.size() / d;
  auto out = Tensor<Real>::zeros(x.shape());
  auto stats = std::make_shared<std::vector<Real>>(rows * 2);  // mean, rstd
  for (int64_t i = 0; i < rows; ++i) {
    const Real* xi = x.data() + i * d;
    Real mean = 0;
    for (int64_t j = 0; j < d; ++j) mean += xi[j];
    mean /= Real(d);
    Real var = 0;
    for (int64_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= Real(d);
    Real rstd = Real(1) / std::sqrt(var + eps);
    (*stats)[i * 2] = mean;
    (*stats)[i * 2 + 1] = rstd;
    Real* oi = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j)
      oi[j] = (xi[j] - mean) * rstd * gain.data()[j] + bias.data()[j];
  }
  attach_backward(out, {x, gain, bias},
                  [x, gain, bias, stats, rows, d](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < rows; ++i) {
      Real mean = (*stats)[i * 2], rstd = (*stats)[i * 2 + 1];
      const Real* xi = x.data() + i * d;
      const Real* g = o.grad.data() + i * d;
      if (gain.requires_grad() || bias.requires_grad()) {
        for (int64_t j = 0; j < d; ++j) {
          Real xhat = (xi[j] - mean) * rstd;
          if (gain.requires_grad()) gain.grad()[j] += g[j] * xhat;
          if (bias.requires_grad()) bias.grad()[j] += g[j];
        }
      }
      if (x.requires_grad()) {
        Real sum_g = 0, sum_gx = 0;
        for (int64_t j = 0; j < d; ++j) {
          Real gj = g[j] * gain.data()[j];
          Real xhat = (xi[j] - mean) * rstd;
          sum_g += gj;
          sum_gx += gj * xhat;
        }
        for (int64_t j = 0; j < d; ++j) {
          Real gj = g[j] * gain.data()[j];
          Real xhat = (xi[j] - mean) * rstd;
          x.grad()[i * d + j] +=
              rstd * (gj - sum_g / Real(d) - xhat * sum_gx / Real(d));
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dropout

template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, Rng& rng, bool training) {
  DMH_CHECK(p >= 0.0 && p < 1.0, "dropout rate must be in [0,1), got ", p);
  if (!training || p == 0.0) return x;
  const int64_t n = x.size();
  auto mask = std::make_shared<std::vector<Real>>(n);
  Real keep_scale = Real(1.0 / (1.0 - p));
  auto out = Tensor<Real>::zeros(x.shape());
  for (int64_t i = 0; i < n; ++i) {
    (*mask)[i] = rng.uniform() < p ? Real(0) : keep_scale;
    out.data()[i] = x.data()[i] * (*mask)[i];
  }
  attach_backward(out, {x}, [x, mask, n](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < n; ++i) x.grad()[i] += o.grad[i] * (*mask)[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  DMH_CHECK_T(ShapeError, numel(shape) == x.size(), "reshape to ", shape_str(shape),
              " incompatible with ", shape_str(x.shape()));
  auto out = Tensor<Real>::from_data(std::move(shape), x.values());
  const int64_t n = x.size();
  attach_backward(out, {x}, [x, n](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < n; ++i) x.grad()[i] += o.grad[i];
  });
  return out;
}

// Row gather from a 2-D tensor. Index -1 selects a zero row (padding).
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& x, std::vector<int64_t> idx) {
  DMH_CHECK(x.ndim() == 2, "gather_rows expects 2-D input, got ", shape_str(x.shape()));
  int64_t d = x.dim(1), m = x.dim(0);
  auto out = Tensor<Real>::zeros({static_cast<int64_t>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i) {
    int64_t r = idx[i];
    DMH_CHECK(r >= -1 && r < m, "gather_rows index ", r, " out of range [0,", m, ")");
    if (r >= 0)
      std::copy(x.data() + r * d, x.data() + (r + 1) * d, out.data() + i * d);
  }
  auto shared_idx = std::make_shared<std::vector<int64_t>>(std::move(idx));
  attach_backward(out, {x}, [x, shared_idx, d](TensorNode<Real>& o) mutable {
    for (size_t i = 0; i < shared_idx->size(); ++i) {
      int64_t r = (*shared_idx)[i];
      if (r < 0) continue;
      for (int64_t j = 0; j < d; ++j) x.grad()[r * d + j] += o.grad[i * d + j];
    }
  });
  return out;
}

// Vertical concatenation of 2-D tensors with equal column counts.
template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts);

template <typename Real>
Tensor<Real> concat_rows(std::initializer_list<Tensor<Real>> parts) {
  return concat_rows(std::vector<Tensor<Real>>(parts));
}

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  DMH_CHECK(!parts.empty(), "concat_rows of empty list");
  int64_t d = parts[0].dim(1), rows = 0;
  for (const auto& p : parts) {
    DMH_CHECK_T(ShapeError, p.ndim() == 2 && p.dim(1) == d,
                "concat_rows column mismatch: ", shape_str(p.shape()));
    rows += p.dim(0);
  }
  auto out = Tensor<Real>::zeros({rows, d});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  auto out2 = out;
  attach_backward(out2, parts, [parts, d](TensorNode<Real>& o) mutable {
    int64_t off = 0;
    for (auto& p : parts) {
      if (p.requires_grad())
        for (int64_t i = 0; i < p.size(); ++i) p.grad()[i] += o.grad[off + i];
      off += p.size();
    }
  });
  return out2;
}

template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, int64_t c0, int64_t c1) {
  DMH_CHECK(x.ndim() == 2 && c0 >= 0 && c1 <= x.dim(1) && c0 < c1,
            "slice_cols [", c0, ",", c1, ") invalid for ", shape_str(x.shape()));
  int64_t m = x.dim(0), d = x.dim(1), w = c1 - c0;
  auto out = Tensor<Real>::zeros({m, w});
  for (int64_t i = 0; i < m; ++i)
    std::copy(x.data() + i * d + c0, x.data() + i * d + c1, out.data() + i * w);
  attach_backward(out, {x}, [x, c0, m, d, w](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < w; ++j) x.grad()[i * d + c0 + j] += o.grad[i * w + j];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions / losses

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
  Real s = 0;
  for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
  auto out = Tensor<Real>::scalar(s);
  const int64_t n = x.size();
  attach_backward(out, {x}, [x, n](TensorNode<Real>& o) mutable {
    for (int64_t i = 0; i < n; ++i) x.grad()[i] += o.grad[0];
  });
  return out;
}

template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& x) {
  return scale(sum_all(x), Real(1) / Real(x.size()));
}

// Mean cross-entropy over rows of `logits` against integer targets.
template <typename Real>
Tensor<Real> cross_entropy_mean(const Tensor<Real>& logits, std::vector<int64_t> targets) {
  DMH_CHECK(logits.ndim() == 2, "cross_entropy expects 2-D logits");
  int64_t m = logits.dim(0), k = logits.dim(1);
  DMH_CHECK(static_cast<int64_t>(targets.size()) == m, "cross_entropy: ", targets.size(),
            " targets for ", m, " rows");
  auto probs = std::make_shared<std::vector<Real>>(m * k);
  Real loss = 0;
  for (int64_t i = 0; i < m; ++i) {
    const Real* row = logits.data() + i * k;
    int64_t t = targets[i];
    DMH_CHECK(t >= 0 && t < k, "cross_entropy target ", t, " out of range [0,", k, ")");
    Real mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    Real sum = 0;
    for (int64_t j = 0; j < k; ++j) {
      (*probs)[i * k + j] = std::exp(row[j] - mx);
      sum += (*probs)[i * k + j];
    }
    for (int64_t j = 0; j < k; ++j) (*probs)[i * k + j] /= sum;
    loss += std::log(sum) + mx - row[t];
  }
  auto out = Tensor<Real>::scalar(loss / Real(m));
  auto shared_t = std::make_shared<std::vector<int64_t>>(std::move(targets));
  attach_backward(out, {logits}, [logits, probs, shared_t, m, k](TensorNode<Real>& o) mutable {
    Real g = o.grad[0] / Real(m);
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < k; ++j)
        logits.grad()[i * k + j] += g * (*probs)[i * k + j];
      logits.grad()[i * k + (*shared_t)[i]] -= g;
    }
  });
  return out;
}

}  // namespace dmh
