#pragma once

#include <deque>
#include <string>
#include <vector>

#include "dmh/attention.hpp"
#include "dmh/ops.hpp"
#include "dmh/params.hpp"
#include "dmh/ssm.hpp"
#include "dmh/trajectory.hpp"

namespace dmh {

// Hybrid configuration: the long-context SSM reads block-aggregated
// across-episodic sequences; the short-context transformer reads one
// prompt-conditioned segment of at most c steps (4c tokens).
struct DmhConfig {
  int64_t c = 5;   // steps governed by one sub-goal
  int64_t n = 10;  // trajectories per across-episodic context
  int64_t embed_dim = 128;
  int64_t mamba_layers = 2;
  int64_t state_size = 16;
  int64_t tf_layers = 3;
  int64_t tf_heads = 3;
  double dropout = 0.1;
  int64_t state_dim = 2;
  int64_t n_actions = 5;
  int64_t max_timestep = 4096;      // timestep-embedding table size
  int64_t segments_per_item = 0;    // 0 = one segment per block
  bool use_valuable_subgoals = true;
  double logvar_min = -10.0;
  double logvar_max = 2.0;
  double action_temperature = 1.0;  // online sampling softmax temperature
  std::vector<double> state_scale;  // per-dim divisor; empty = no scaling

  void validate() const {
    DMH_CHECK_T(ConfigError, c >= 1, "c must be >= 1, got ", c);
    DMH_CHECK_T(ConfigError, n >= 1, "n must be >= 1, got ", n);
    DMH_CHECK_T(ConfigError,
                embed_dim >= 1 && mamba_layers >= 1 && state_size >= 1 &&
                    tf_layers >= 1 && tf_heads >= 1 && state_dim >= 1 &&
                    n_actions >= 2 && max_timestep >= 1,
                "all model dimensions must be positive");
    DMH_CHECK_T(ConfigError, embed_dim >= tf_heads, "embed_dim < n_heads");
    DMH_CHECK_T(ConfigError, action_temperature > 0.0,
                "action_temperature must be > 0");
    DMH_CHECK_T(ConfigError,
                state_scale.empty() ||
                    static_cast<int64_t>(state_scale.size()) == state_dim,
                "state_scale length must match state_dim");
  }

  SsmConfig ssm() const {
    SsmConfig s;
    s.embed_dim = embed_dim;
    s.n_layers = mamba_layers;
    s.state_size = state_size;
    s.dropout = dropout;
    return s;
  }

  AttentionConfig attention() const {
    AttentionConfig a;
    a.n_layers = tf_layers;
    a.n_heads = tf_heads;
    a.embed_dim = embed_dim;
    a.dropout = dropout;
    a.max_context_tokens = 4 * c;  // horizon-independent window
    return a;
  }
};

// Diagonal-Gaussian sub-goal distribution in latent space.
template <typename Real>
struct SubGoal {
  Tensor<Real> mean;          // (1, D)
  Tensor<Real> log_variance;  // (1, D), clamped
};

// Reparameterized in training (gradient flows to mean and log-variance);
// exactly the mean at evaluation.
template <typename Real>
Tensor<Real> sample_subgoal(const SubGoal<Real>& g, bool train, Rng& rng) {
  if (!train) return g.mean;
  auto eps = Tensor<Real>::randn(g.mean.shape(), rng);
  return add(g.mean, mul(exp_elem(scale(g.log_variance, Real(0.5))), eps));
}

// One training example: episodes of a single task (any order; the loss sorts
// them by total return).
struct TrainItem {
  std::vector<const Trajectory*> episodes;
};

template <typename Real>
class DmhModel {
 public:
  DmhModel(const DmhConfig& cfg, Rng& rng)
      : cfg_(cfg),
        mamba_(cfg.ssm(), params_, "mamba", (cfg.validate(), rng)),
        tf_(cfg.attention(), params_, "tf", rng) {
    int64_t D = cfg_.embed_dim, sd = cfg_.state_dim;
    Real s_in = Real(1.0 / std::sqrt(static_cast<double>(sd)));
    Real s_d = Real(1.0 / std::sqrt(static_cast<double>(D)));
    m_lnf_g_ = params_.add("mamba.ln_f_g", Tensor<Real>::filled({D}, Real(1)));
    m_lnf_b_ = params_.add("mamba.ln_f_b", Tensor<Real>::zeros({D}));
    tf_lnf_g_ = params_.add("tf.ln_f_g", Tensor<Real>::filled({D}, Real(1)));
    tf_lnf_b_ = params_.add("tf.ln_f_b", Tensor<Real>::zeros({D}));
    w_ms_ = params_.add("embed.mamba_state.w", Tensor<Real>::randn({sd, D}, rng, s_in));
    b_ms_ = params_.add("embed.mamba_state.b", Tensor<Real>::zeros({D}));
    w_mr_ = params_.add("embed.mamba_reward.w", Tensor<Real>::randn({1, D}, rng));
    b_mr_ = params_.add("embed.mamba_reward.b", Tensor<Real>::zeros({D}));
    done_table_ = params_.add("embed.mamba_done", Tensor<Real>::randn({2, D}, rng, Real(0.02)));
    ts_table_ = params_.add("embed.timestep",
                            Tensor<Real>::randn({cfg_.max_timestep, D}, rng, Real(0.02)));
    w_sg_ = params_.add("subgoal.w", Tensor<Real>::randn({D, 2 * D}, rng, s_d));
    b_sg_ = params_.add("subgoal.b", Tensor<Real>::zeros({2 * D}));
    // frozen random goal map f: never trained, but saved and checksummed
    w_goal_ = params_.add("goal_map.w", Tensor<Real>::randn({sd, D}, rng, s_in),
                          /*trainable=*/false);
    w_prompt_ = params_.add("embed.prompt.w", Tensor<Real>::randn({D, D}, rng, s_d));
    b_prompt_ = params_.add("embed.prompt.b", Tensor<Real>::zeros({D}));
    w_ts_ = params_.add("embed.tf_state.w", Tensor<Real>::randn({sd, D}, rng, s_in));
    b_ts_ = params_.add("embed.tf_state.b", Tensor<Real>::zeros({D}));
    action_table_ =
        params_.add("embed.action", Tensor<Real>::randn({cfg_.n_actions, D}, rng, Real(0.02)));
    w_tr_ = params_.add("embed.tf_reward.w", Tensor<Real>::randn({1, D}, rng));
    b_tr_ = params_.add("embed.tf_reward.b", Tensor<Real>::zeros({D}));
    pos_table_ =
        params_.add("embed.position", Tensor<Real>::randn({4 * cfg_.c, D}, rng, Real(0.02)));
    w_act_ = params_.add("head.action.w", Tensor<Real>::randn({D, cfg_.n_actions}, rng, s_d));
    b_act_ = params_.add("head.action.b", Tensor<Real>::zeros({cfg_.n_actions}));
  }

  const DmhConfig& config() const { return cfg_; }
  ParameterRegistry<Real>& params() { return params_; }
  const ParameterRegistry<Real>& params() const { return params_; }
  const MambaStack<Real>& mamba() const { return mamba_; }
  const TransformerStack<Real>& transformer() const { return tf_; }

  // Long-context encoding of one sequence; one SubGoal per block of the final
  // (current) trajectory, each computed causally from the preceding tokens.
  std::vector<SubGoal<Real>> mamba_encode(const MambaSequence& seq) const {
    DMH_CHECK(!seq.blocks.empty(), "mamba_encode on an empty sequence");
    Rng dummy(0);
    auto flat = encode_sequences({&seq}, /*training=*/false, dummy);
    int64_t D = cfg_.embed_dim;
    int64_t start = seq.traj_block_start.back();
    int64_t nb = seq.traj_block_count.back();
    std::vector<SubGoal<Real>> out;
    out.reserve(static_cast<size_t>(nb));
    for (int64_t k = 0; k < nb; ++k) {
      auto hin = gather_rows(flat, {3 * (start + k)});
      auto hout = add_rowvec(matmul(hin, w_sg_), b_sg_);
      SubGoal<Real> g;
      g.mean = slice_cols(hout, 0, D);
      g.log_variance =
          clamp(slice_cols(hout, D, 2 * D), Real(cfg_.logvar_min), Real(cfg_.logvar_max));
      out.push_back(std::move(g));
    }
    return out;
  }

  // Frozen-map prompt f(s_g) for a mapped-goal segment.
  Tensor<Real> goal_prompt(const std::vector<int32_t>& goal_state) const {
    auto feat = scaled_state_feat(goal_state);
    auto g = Tensor<Real>::from_data({1, cfg_.state_dim}, std::move(feat));
    return matmul(g, w_goal_);
  }

  // Short-context action prediction for one segment; logits row t depends only
  // on tokens up to and including the step-t state token.
  Tensor<Real> predict_actions(const LocalSegment& seg, const Tensor<Real>& prompt_vec,
                               bool training, Rng& rng) const {
    DMH_CHECK(!seg.steps.empty(), "predict_actions on an empty segment");
    DMH_CHECK(prompt_vec.ndim() == 2 && prompt_vec.dim(0) == 1 &&
                  prompt_vec.dim(1) == cfg_.embed_dim,
              "prompt must be (1, D)");
    int64_t len = static_cast<int64_t>(seg.steps.size());
    auto toks = segment_tokens(seg, prompt_vec, len);
    auto out = tf_.forward(reshape(toks, {1, 4 * len, cfg_.embed_dim}), training, rng);
    auto flat = layer_norm(reshape(out, {4 * len, cfg_.embed_dim}), tf_lnf_g_, tf_lnf_b_);
    std::vector<int64_t> rows(static_cast<size_t>(len));
    for (int64_t t = 0; t < len; ++t) rows[static_cast<size_t>(t)] = 4 * t + 1;
    return add_rowvec(matmul(gather_rows(flat, rows), w_act_), b_act_);
  }

  // Joint loss over a batch: per item, sub-goals are generated at every chosen
  // block boundary of the highest-return trajectory; each conditions a
  // generated-prompt segment, and (unless ablated) a paired mapped-goal
  // segment with the frozen-map prompt. Mean cross-entropy over all action
  // positions of both families.
  Tensor<Real> compute_loss(const std::vector<TrainItem>& batch, bool training, Rng& rng) const {
    DMH_CHECK(!batch.empty(), "compute_loss on an empty batch");
    int64_t D = cfg_.embed_dim, c = cfg_.c, sd = cfg_.state_dim;
    int64_t B = static_cast<int64_t>(batch.size());
    std::vector<std::vector<const Trajectory*>> sorted;
    std::vector<MambaSequence> seqs;
    sorted.reserve(batch.size());
    seqs.reserve(batch.size());
    for (const auto& item : batch) {
      DMH_CHECK(!item.episodes.empty(), "train item has no episodes");
      sorted.push_back(sort_context(item.episodes));
      seqs.push_back(build_mamba_sequence(sorted.back(), c));
    }
    int64_t Lm = seqs[0].token_count();
    for (const auto& s : seqs)
      DMH_CHECK(s.token_count() == Lm, "batch items must share a context length");
    std::vector<const MambaSequence*> seq_ptrs;
    for (const auto& s : seqs) seq_ptrs.push_back(&s);
    auto menc = encode_sequences(seq_ptrs, training, rng);  // (B*Lm, D)

    // chosen block anchors of the final trajectory per item
    struct SegRef {
      int64_t item;
      int64_t anchor;
    };
    std::vector<SegRef> segs6;
    std::vector<int64_t> zrows;
    for (int64_t b = 0; b < B; ++b) {
      int64_t nb = seqs[static_cast<size_t>(b)].traj_block_count.back();
      int64_t start = seqs[static_cast<size_t>(b)].traj_block_start.back();
      std::vector<int64_t> ks(static_cast<size_t>(nb));
      for (int64_t k = 0; k < nb; ++k) ks[static_cast<size_t>(k)] = k;
      if (cfg_.segments_per_item > 0 && cfg_.segments_per_item < nb) {
        for (int64_t k = 0; k < cfg_.segments_per_item; ++k) {
          int64_t j = k + static_cast<int64_t>(
                              rng.uniform_int(static_cast<uint64_t>(nb - k)));
          std::swap(ks[static_cast<size_t>(k)], ks[static_cast<size_t>(j)]);
        }
        ks.resize(static_cast<size_t>(cfg_.segments_per_item));
      }
      for (int64_t k : ks) {
        segs6.push_back({b, k * c});
        zrows.push_back(b * Lm + 3 * (start + k));
      }
    }
    int64_t S6 = static_cast<int64_t>(segs6.size());

    // sub-goal head + reparameterized sampling, batched over all anchors
    auto hin = gather_rows(menc, zrows);
    auto hout = add_rowvec(matmul(hin, w_sg_), b_sg_);
    auto mean = slice_cols(hout, 0, D);
    auto logv = clamp(slice_cols(hout, D, 2 * D), Real(cfg_.logvar_min), Real(cfg_.logvar_max));
    Tensor<Real> z = mean;
    if (training) {
      auto eps = Tensor<Real>::randn(mean.shape(), rng);
      z = add(mean, mul(exp_elem(scale(logv, Real(0.5))), eps));
    }
    auto p6 = add_rowvec(matmul(z, w_prompt_), b_prompt_);

    // paired mapped-goal segments (valuable sub-goal selected ahead of the
    // anchor; skipped when no future step exists)
    std::vector<SegRef> segs7;
    std::vector<Real> gfeat;
    if (cfg_.use_valuable_subgoals) {
      for (const auto& s : segs6) {
        const Trajectory& cur = *sorted[static_cast<size_t>(s.item)].back();
        if (s.anchor >= cur.length() - 1) continue;
        auto sel = select_valuable_subgoal(cur, s.anchor);
        auto feat = scaled_state_feat(cur.steps[static_cast<size_t>(sel.selected)].state);
        gfeat.insert(gfeat.end(), feat.begin(), feat.end());
        segs7.push_back(s);
      }
    }
    int64_t S7 = static_cast<int64_t>(segs7.size());
    Tensor<Real> p7;
    if (S7 > 0) {
      auto g = Tensor<Real>::from_data({S7, sd}, std::move(gfeat));
      p7 = add_rowvec(matmul(matmul(g, w_goal_), w_prompt_), b_prompt_);
    }

    // flatten all segment steps (family 6 then 7)
    int64_t S = S6 + S7;
    std::vector<Real> sfeat, rfeat;
    std::vector<int64_t> aidx;
    std::vector<int64_t> seg_len(static_cast<size_t>(S));
    std::vector<int64_t> targets;
    auto append_seg = [&](int64_t si, const SegRef& ref) {
      const Trajectory& cur = *sorted[static_cast<size_t>(ref.item)].back();
      int64_t len = std::min(c, cur.length() - ref.anchor);
      seg_len[static_cast<size_t>(si)] = len;
      for (int64_t t = 0; t < len; ++t) {
        const Step& st = cur.steps[static_cast<size_t>(ref.anchor + t)];
        auto feat = scaled_state_feat(st.state);
        sfeat.insert(sfeat.end(), feat.begin(), feat.end());
        aidx.push_back(st.action);
        rfeat.push_back(static_cast<Real>(st.reward));
        targets.push_back(st.action);
      }
    };
    for (int64_t s = 0; s < S6; ++s) append_seg(s, segs6[static_cast<size_t>(s)]);
    for (int64_t s = 0; s < S7; ++s) append_seg(S6 + s, segs7[static_cast<size_t>(s)]);
    int64_t NS = static_cast<int64_t>(aidx.size());

    auto est = add_rowvec(matmul(Tensor<Real>::from_data({NS, sd}, std::move(sfeat)), w_ts_),
                          b_ts_);
    auto ea = gather_rows(action_table_, aidx);
    auto er = add_rowvec(matmul(Tensor<Real>::from_data({NS, 1}, std::move(rfeat)), w_tr_),
                         b_tr_);
    std::vector<Tensor<Real>> parts{p6};
    if (S7 > 0) parts.push_back(p7);
    parts.push_back(est);
    parts.push_back(ea);
    parts.push_back(er);
    int64_t off_st = S6 + S7, off_a = off_st + NS, off_r = off_a + NS;

    // interleave into (S, 4c, D) with end padding (zero rows) for short tails
    int64_t Lt = 4 * c;
    std::vector<int64_t> perm(static_cast<size_t>(S * Lt), -1);
    std::vector<int64_t> pos(static_cast<size_t>(S * Lt), -1);
    std::vector<int64_t> loss_rows;
    loss_rows.reserve(static_cast<size_t>(NS));
    int64_t step_off = 0;
    for (int64_t s = 0; s < S; ++s) {
      int64_t prompt_src = s < S6 ? s : S6 + (s - S6);
      for (int64_t t = 0; t < seg_len[static_cast<size_t>(s)]; ++t) {
        int64_t base = s * Lt + 4 * t;
        perm[static_cast<size_t>(base)] = prompt_src;
        perm[static_cast<size_t>(base + 1)] = off_st + step_off + t;
        perm[static_cast<size_t>(base + 2)] = off_a + step_off + t;
        perm[static_cast<size_t>(base + 3)] = off_r + step_off + t;
        for (int64_t m = 0; m < 4; ++m) pos[static_cast<size_t>(base + m)] = 4 * t + m;
        loss_rows.push_back(base + 1);
      }
      step_off += seg_len[static_cast<size_t>(s)];
    }
    auto toks = add(gather_rows(concat_rows(parts), std::move(perm)),
                    gather_rows(pos_table_, std::move(pos)));
    auto out = tf_.forward(reshape(toks, {S, Lt, D}), training, rng);
    auto flat = layer_norm(reshape(out, {S * Lt, D}), tf_lnf_g_, tf_lnf_b_);
    auto logits = add_rowvec(matmul(gather_rows(flat, std::move(loss_rows)), w_act_), b_act_);
    return cross_entropy_mean(logits, std::move(targets));
  }

  // ---- row-level evaluation helpers (match the batched math exactly) ----

  std::vector<Real> scaled_state_feat(const std::vector<int32_t>& s) const {
    DMH_CHECK(static_cast<int64_t>(s.size()) == cfg_.state_dim,
              "state has dim ", s.size(), ", expected ", cfg_.state_dim);
    std::vector<Real> f(s.size());
    for (size_t d = 0; d < s.size(); ++d) {
      double scale = cfg_.state_scale.empty() ? 1.0 : cfg_.state_scale[d];
      f[d] = static_cast<Real>(static_cast<double>(s[d]) / scale);
    }
    return f;
  }

  std::vector<Real> mamba_state_token(const std::vector<int32_t>& state, int64_t ts) const {
    auto v = affine_row(scaled_state_feat(state), w_ms_, b_ms_);
    add_table_row(v, ts_table_, ts_index(ts));
    return v;
  }

  std::vector<Real> mamba_reward_token(float reward_sum, int64_t ts) const {
    auto v = affine_row({static_cast<Real>(reward_sum)}, w_mr_, b_mr_);
    add_table_row(v, ts_table_, ts_index(ts));
    return v;
  }

  std::vector<Real> mamba_done_token(int32_t done, int64_t ts) const {
    std::vector<Real> v(done_table_.data() + done * cfg_.embed_dim,
                        done_table_.data() + (done + 1) * cfg_.embed_dim);
    add_table_row(v, ts_table_, ts_index(ts));
    return v;
  }

  // Sub-goal mean from a long-context stack output row (evaluation z).
  std::vector<Real> subgoal_mean(const std::vector<Real>& mamba_out) const {
    auto xn = ln_row(mamba_out, m_lnf_g_, m_lnf_b_);
    int64_t D = cfg_.embed_dim;
    std::vector<Real> mean(static_cast<size_t>(D));
    for (int64_t j = 0; j < D; ++j) {
      Real acc = 0;
      for (int64_t i = 0; i < D; ++i) acc += xn[i] * w_sg_.data()[i * 2 * D + j];
      mean[j] = acc + b_sg_.data()[j];
    }
    return mean;
  }

  std::vector<Real> prompt_row_from(const std::vector<Real>& z) const {
    return affine_row(z, w_prompt_, b_prompt_);
  }

  std::vector<Real> tf_prompt_token(const std::vector<Real>& prompt_row, int64_t pos) const {
    auto v = prompt_row;
    add_table_row(v, pos_table_, pos);
    return v;
  }

  std::vector<Real> tf_state_token(const std::vector<int32_t>& state, int64_t pos) const {
    auto v = affine_row(scaled_state_feat(state), w_ts_, b_ts_);
    add_table_row(v, pos_table_, pos);
    return v;
  }

  std::vector<Real> tf_action_token(int32_t action, int64_t pos) const {
    DMH_CHECK(action >= 0 && action < cfg_.n_actions, "action ", action, " out of range");
    std::vector<Real> v(action_table_.data() + action * cfg_.embed_dim,
                        action_table_.data() + (action + 1) * cfg_.embed_dim);
    add_table_row(v, pos_table_, pos);
    return v;
  }

  std::vector<Real> tf_reward_token(float reward, int64_t pos) const {
    auto v = affine_row({static_cast<Real>(reward)}, w_tr_, b_tr_);
    add_table_row(v, pos_table_, pos);
    return v;
  }

  std::vector<Real> action_logits(const std::vector<Real>& tf_out) const {
    return affine_row(ln_row(tf_out, tf_lnf_g_, tf_lnf_b_), w_act_, b_act_);
  }

 private:
  int64_t ts_index(int64_t ts) const {
    return ts < cfg_.max_timestep ? ts : cfg_.max_timestep - 1;
  }

  static std::vector<Real> affine_row(const std::vector<Real>& x, const Tensor<Real>& w,
                                      const Tensor<Real>& b) {
    int64_t in = w.dim(0), out_d = w.dim(1);
    DMH_CHECK(static_cast<int64_t>(x.size()) == in, "affine_row input dim mismatch");
    std::vector<Real> out(static_cast<size_t>(out_d));
    for (int64_t j = 0; j < out_d; ++j) {
      Real acc = 0;
      for (int64_t i = 0; i < in; ++i) acc += x[i] * w.data()[i * out_d + j];
      out[j] = acc + b.data()[j];
    }
    return out;
  }

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

  static void add_table_row(std::vector<Real>& v, const Tensor<Real>& table, int64_t row) {
    int64_t d = table.dim(1);
    DMH_CHECK(row >= 0 && row < table.dim(0), "table row ", row, " out of range");
    for (int64_t j = 0; j < d; ++j) v[j] += table.data()[row * d + j];
  }

  // Embeds and runs the long-context stack over equal-length sequences;
  // returns (B*Lm, D) after the final layer norm.
  Tensor<Real> encode_sequences(const std::vector<const MambaSequence*>& seqs, bool training,
                                Rng& rng) const {
    int64_t B = static_cast<int64_t>(seqs.size());
    int64_t Lb = static_cast<int64_t>(seqs[0]->blocks.size());
    int64_t D = cfg_.embed_dim, sd = cfg_.state_dim;
    std::vector<Real> sfeat, rfeat;
    std::vector<int64_t> didx, tidx;
    sfeat.reserve(static_cast<size_t>(B * Lb * sd));
    for (const auto* seq : seqs) {
      DMH_CHECK(static_cast<int64_t>(seq->blocks.size()) == Lb,
                "sequences must share a block count");
      for (const auto& blk : seq->blocks) {
        auto f = scaled_state_feat(blk.state);
        sfeat.insert(sfeat.end(), f.begin(), f.end());
        rfeat.push_back(static_cast<Real>(blk.reward_sum));
        didx.push_back(blk.done);
        tidx.push_back(ts_index(blk.timestep));
      }
    }
    auto ts = gather_rows(ts_table_, tidx);
    auto es = add(add_rowvec(matmul(Tensor<Real>::from_data({B * Lb, sd}, std::move(sfeat)),
                                    w_ms_),
                             b_ms_),
                  ts);
    auto er = add(add_rowvec(matmul(Tensor<Real>::from_data({B * Lb, 1}, std::move(rfeat)),
                                    w_mr_),
                             b_mr_),
                  ts);
    auto ed = add(gather_rows(done_table_, std::move(didx)), ts);
    int64_t Lm = 3 * Lb;
    std::vector<int64_t> perm(static_cast<size_t>(B * Lm));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t k = 0; k < Lb; ++k)
        for (int64_t m = 0; m < 3; ++m)
          perm[static_cast<size_t>(b * Lm + 3 * k + m)] = m * B * Lb + b * Lb + k;
    auto x = reshape(gather_rows(concat_rows({es, er, ed}), std::move(perm)), {B, Lm, D});
    auto y = mamba_.forward(x, training, rng);
    return layer_norm(reshape(y, {B * Lm, D}), m_lnf_g_, m_lnf_b_);
  }

  Tensor<Real> segment_tokens(const LocalSegment& seg, const Tensor<Real>& prompt_vec,
                              int64_t len) const {
    int64_t sd = cfg_.state_dim;
    std::vector<Real> sfeat, rfeat;
    std::vector<int64_t> aidx;
    for (const auto& st : seg.steps) {
      auto f = scaled_state_feat(st.state);
      sfeat.insert(sfeat.end(), f.begin(), f.end());
      aidx.push_back(st.action);
      rfeat.push_back(static_cast<Real>(st.reward));
    }
    auto pe = add_rowvec(matmul(prompt_vec, w_prompt_), b_prompt_);
    auto est = add_rowvec(matmul(Tensor<Real>::from_data({len, sd}, std::move(sfeat)), w_ts_),
                          b_ts_);
    auto ea = gather_rows(action_table_, std::move(aidx));
    auto er = add_rowvec(matmul(Tensor<Real>::from_data({len, 1}, std::move(rfeat)), w_tr_),
                         b_tr_);
    std::vector<int64_t> perm(static_cast<size_t>(4 * len));
    std::vector<int64_t> pos(static_cast<size_t>(4 * len));
    for (int64_t t = 0; t < len; ++t) {
      perm[static_cast<size_t>(4 * t)] = 0;
      perm[static_cast<size_t>(4 * t + 1)] = 1 + t;
      perm[static_cast<size_t>(4 * t + 2)] = 1 + len + t;
      perm[static_cast<size_t>(4 * t + 3)] = 1 + 2 * len + t;
      for (int64_t m = 0; m < 4; ++m) pos[static_cast<size_t>(4 * t + m)] = 4 * t + m;
    }
    return add(gather_rows(concat_rows({pe, est, ea, er}), std::move(perm)),
               gather_rows(pos_table_, std::move(pos)));
  }

  DmhConfig cfg_;
  ParameterRegistry<Real> params_;
  MambaStack<Real> mamba_;
  TransformerStack<Real> tf_;
  Tensor<Real> m_lnf_g_, m_lnf_b_, tf_lnf_g_, tf_lnf_b_;
  Tensor<Real> w_ms_, b_ms_, w_mr_, b_mr_, done_table_, ts_table_;
  Tensor<Real> w_sg_, b_sg_, w_goal_, w_prompt_, b_prompt_;
  Tensor<Real> w_ts_, b_ts_, action_table_, w_tr_, b_tr_, pos_table_;
  Tensor<Real> w_act_, b_act_;
};

// Gradient-free online policy (Algorithm: at each block boundary the long
// context yields a fresh sub-goal; the transformer then generates the block's
// actions greedily). Per-step cost is independent of the horizon; the long
// context is rebuilt once per episode over the most recent n-1 completed
// episodes, sorted by return.
template <typename Real>
class DmhOnlinePolicy {
 public:
  explicit DmhOnlinePolicy(const DmhModel<Real>& model)
      : model_(model),
        mstate_(model.mamba().make_state()),
        tstate_(model.transformer().make_state()) {}

  void begin_episode() {
    const auto& cfg = model_.config();
    mstate_ = model_.mamba().make_state();
    if (!window_.empty()) {
      std::vector<const Trajectory*> ptrs;
      for (const auto& t : window_) ptrs.push_back(&t);
      auto seq = build_mamba_sequence(sort_context(ptrs), cfg.c);
      for (const auto& blk : seq.blocks) {
        model_.mamba().step(model_.mamba_state_token(blk.state, blk.timestep), mstate_);
        model_.mamba().step(model_.mamba_reward_token(blk.reward_sum, blk.timestep), mstate_);
        model_.mamba().step(model_.mamba_done_token(blk.done, blk.timestep), mstate_);
      }
    }
    cur_steps_.clear();
    step_ = 0;
    tib_ = cfg.c;  // force a fresh block at the first step
  }

  int32_t act(const std::vector<int32_t>& obs) {
    const auto& cfg = model_.config();
    if (tib_ == cfg.c) {
      auto out = model_.mamba().step(model_.mamba_state_token(obs, step_), mstate_);
      prompt_ = model_.prompt_row_from(model_.subgoal_mean(out));
      tstate_ = model_.transformer().make_state();
      tib_ = 0;
      block_ts_ = step_;
      block_rsum_ = 0.0f;
      block_done_ = 0;
    }
    model_.transformer().step(model_.tf_prompt_token(prompt_, 4 * tib_), tstate_);
    auto out = model_.transformer().step(model_.tf_state_token(obs, 4 * tib_ + 1), tstate_);
    auto logits = model_.action_logits(out);
    last_obs_ = obs;
    return sample_from_logits(logits, rng_, model_.config().action_temperature);
  }

  // Resets the action-sampling stream; same seed, same rollout.
  void reseed(uint64_t seed) { rng_ = Rng(seed); }

  void record(int32_t action, float reward, bool done) {
    const auto& cfg = model_.config();
    model_.transformer().step(model_.tf_action_token(action, 4 * tib_ + 2), tstate_);
    model_.transformer().step(model_.tf_reward_token(reward, 4 * tib_ + 3), tstate_);
    Step st;
    st.state = last_obs_;
    st.action = action;
    st.reward = reward;
    st.done = done ? 1 : 0;
    cur_steps_.push_back(std::move(st));
    block_rsum_ += reward;
    block_done_ |= done ? 1 : 0;
    ++tib_;
    ++step_;
    if (tib_ == cfg.c || done) {
      model_.mamba().step(model_.mamba_reward_token(block_rsum_, block_ts_), mstate_);
      model_.mamba().step(model_.mamba_done_token(block_done_, block_ts_), mstate_);
      tib_ = cfg.c;
    }
    if (done) {
      window_.push_back(Trajectory::from_steps(std::move(cur_steps_)));
      cur_steps_.clear();
      while (static_cast<int64_t>(window_.size()) > cfg.n - 1) window_.pop_front();
    }
  }

 private:
  const DmhModel<Real>& model_;
  typename MambaStack<Real>::StepState mstate_;
  typename TransformerStack<Real>::StepState tstate_;
  std::deque<Trajectory> window_;
  std::vector<Step> cur_steps_;
  std::vector<int32_t> last_obs_;
  std::vector<Real> prompt_;
  Rng rng_{0};
  int64_t step_ = 0;
  int64_t tib_ = 0;
  int64_t block_ts_ = 0;
  float block_rsum_ = 0.0f;
  int32_t block_done_ = 0;
};

}  // namespace dmh
