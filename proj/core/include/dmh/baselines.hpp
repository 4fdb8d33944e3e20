#pragma once

#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "dmh/attention.hpp"
#include "dmh/model.hpp"
#include "dmh/ssm.hpp"
#include "dmh/trajectory.hpp"

namespace dmh {

// Shared settings for the flat-context baselines.
struct BaselineConfig {
  int64_t n = 10;           // episodes per across-episodic context
  int64_t layers = 3;
  int64_t heads = 3;        // attention backbone only
  int64_t state_size = 16;  // SSM backbone only
  int64_t embed_dim = 128;
  double dropout = 0.1;
  int64_t state_dim = 2;
  int64_t n_actions = 5;
  int64_t max_timestep = 4096;
  std::vector<double> state_scale;
  double target_return = 0.0;      // return-to-go conditioning (DT only)
  double action_temperature = 1.0; // online sampling softmax temperature

  void validate() const {
    DMH_CHECK_T(ConfigError,
                n >= 1 && layers >= 1 && heads >= 1 && state_size >= 1 &&
                    embed_dim >= heads && state_dim >= 1 && n_actions >= 2 &&
                    max_timestep >= 1 && action_temperature > 0.0,
                "invalid baseline configuration");
  }
};

// Either backbone behind one interface, so the AD token pipeline is written
// once.
template <typename Real>
class SeqBackbone {
 public:
  SeqBackbone(bool attention, const BaselineConfig& cfg, ParameterRegistry<Real>& params,
              const std::string& prefix, Rng& rng) {
    if (attention) {
      AttentionConfig a;
      a.n_layers = cfg.layers;
      a.n_heads = cfg.heads;
      a.embed_dim = cfg.embed_dim;
      a.dropout = cfg.dropout;
      tf_ = std::make_unique<TransformerStack<Real>>(a, params, prefix, rng);
    } else {
      SsmConfig s;
      s.embed_dim = cfg.embed_dim;
      s.n_layers = cfg.layers;
      s.state_size = cfg.state_size;
      s.dropout = cfg.dropout;
      ssm_ = std::make_unique<MambaStack<Real>>(s, params, prefix, rng);
    }
  }

  bool is_attention() const { return tf_ != nullptr; }

  Tensor<Real> forward(const Tensor<Real>& x, bool training, Rng& rng) const {
    return tf_ ? tf_->forward(x, training, rng) : ssm_->forward(x, training, rng);
  }

  struct State {
    typename TransformerStack<Real>::StepState tf;
    typename MambaStack<Real>::StepState ssm;
  };

  State make_state() const {
    State st;
    if (tf_)
      st.tf = tf_->make_state();
    else
      st.ssm = ssm_->make_state();
    return st;
  }

  std::vector<Real> step(const std::vector<Real>& token, State& st) const {
    return tf_ ? tf_->step(token, st.tf) : ssm_->step(token, st.ssm);
  }

 private:
  std::unique_ptr<TransformerStack<Real>> tf_;
  std::unique_ptr<MambaStack<Real>> ssm_;
};

// Algorithm-distillation baseline: the full sorted across-episodic context as
// a flat stream of per-step (s, a, r, d) tokens; actions are predicted at
// every state-token position. The context therefore grows with the horizon
// (4·n·T tokens), unlike the hybrid's fixed 4·c window.
template <typename Real>
class AdModel {
 public:
  AdModel(const BaselineConfig& cfg, bool attention, Rng& rng)
      : cfg_((cfg.validate(), cfg)), net_(attention, cfg, params_, "net", rng) {
    int64_t D = cfg_.embed_dim, sd = cfg_.state_dim;
    Real s_in = Real(1.0 / std::sqrt(static_cast<double>(sd)));
    Real s_d = Real(1.0 / std::sqrt(static_cast<double>(D)));
    lnf_g_ = params_.add("ln_f_g", Tensor<Real>::filled({D}, Real(1)));
    lnf_b_ = params_.add("ln_f_b", Tensor<Real>::zeros({D}));
    w_s_ = params_.add("embed.state.w", Tensor<Real>::randn({sd, D}, rng, s_in));
    b_s_ = params_.add("embed.state.b", Tensor<Real>::zeros({D}));
    action_table_ =
        params_.add("embed.action", Tensor<Real>::randn({cfg_.n_actions, D}, rng, Real(0.02)));
    w_r_ = params_.add("embed.reward.w", Tensor<Real>::randn({1, D}, rng));
    b_r_ = params_.add("embed.reward.b", Tensor<Real>::zeros({D}));
    done_table_ = params_.add("embed.done", Tensor<Real>::randn({2, D}, rng, Real(0.02)));
    ts_table_ = params_.add("embed.timestep",
                            Tensor<Real>::randn({cfg_.max_timestep, D}, rng, Real(0.02)));
    ep_table_ = params_.add("embed.episode", Tensor<Real>::randn({cfg_.n, D}, rng, Real(0.02)));
    w_act_ = params_.add("head.action.w", Tensor<Real>::randn({D, cfg_.n_actions}, rng, s_d));
    b_act_ = params_.add("head.action.b", Tensor<Real>::zeros({cfg_.n_actions}));
  }

  const BaselineConfig& config() const { return cfg_; }
  ParameterRegistry<Real>& params() { return params_; }
  const ParameterRegistry<Real>& params() const { return params_; }
  const SeqBackbone<Real>& net() const { return net_; }

  Tensor<Real> compute_loss(const std::vector<TrainItem>& batch, bool training,
                            Rng& rng) const {
    DMH_CHECK(!batch.empty(), "compute_loss on an empty batch");
    int64_t D = cfg_.embed_dim, sd = cfg_.state_dim;
    int64_t B = static_cast<int64_t>(batch.size());
    std::vector<Real> sfeat, rfeat;
    std::vector<int64_t> aidx, didx, tsidx, epidx, targets;
    int64_t NS = -1;
    for (const auto& item : batch) {
      DMH_CHECK(!item.episodes.empty(), "train item has no episodes");
      auto sorted = sort_context(item.episodes);
      int64_t count = 0;
      for (size_t e = 0; e < sorted.size(); ++e) {
        const Trajectory& traj = *sorted[e];
        for (int64_t t = 0; t < traj.length(); ++t) {
          const Step& st = traj.steps[static_cast<size_t>(t)];
          auto f = scaled_state_feat(st.state);
          sfeat.insert(sfeat.end(), f.begin(), f.end());
          aidx.push_back(st.action);
          rfeat.push_back(static_cast<Real>(st.reward));
          didx.push_back(st.done);
          tsidx.push_back(ts_index(t));
          epidx.push_back(ep_index(static_cast<int64_t>(e)));
          targets.push_back(st.action);
          ++count;
        }
      }
      if (NS < 0) NS = count;
      DMH_CHECK(count == NS, "batch items must share a context length");
    }
    int64_t total = B * NS;
    auto ctx = add(gather_rows(ts_table_, std::move(tsidx)),
                   gather_rows(ep_table_, std::move(epidx)));
    auto es = add(add_rowvec(matmul(Tensor<Real>::from_data({total, sd}, std::move(sfeat)),
                                    w_s_),
                             b_s_),
                  ctx);
    auto ea = add(gather_rows(action_table_, std::move(aidx)), ctx);
    auto er = add(add_rowvec(matmul(Tensor<Real>::from_data({total, 1}, std::move(rfeat)),
                                    w_r_),
                             b_r_),
                  ctx);
    auto ed = add(gather_rows(done_table_, std::move(didx)), ctx);
    int64_t L = 4 * NS;
    std::vector<int64_t> perm(static_cast<size_t>(B * L));
    std::vector<int64_t> loss_rows(static_cast<size_t>(total));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < NS; ++t) {
        int64_t base = b * L + 4 * t;
        int64_t src = b * NS + t;
        perm[static_cast<size_t>(base)] = src;
        perm[static_cast<size_t>(base + 1)] = total + src;
        perm[static_cast<size_t>(base + 2)] = 2 * total + src;
        perm[static_cast<size_t>(base + 3)] = 3 * total + src;
        loss_rows[static_cast<size_t>(src)] = base;
      }
    auto x = reshape(gather_rows(concat_rows({es, ea, er, ed}), std::move(perm)), {B, L, D});
    auto out = net_.forward(x, training, rng);
    auto flat = layer_norm(reshape(out, {B * L, D}), lnf_g_, lnf_b_);
    auto logits = add_rowvec(matmul(gather_rows(flat, std::move(loss_rows)), w_act_), b_act_);
    return cross_entropy_mean(logits, std::move(targets));
  }

  // row-level token builders for the online stepper
  std::vector<Real> state_token(const std::vector<int32_t>& s, int64_t ts, int64_t ep) const {
    auto v = affine_row(scaled_state_feat(s), w_s_, b_s_);
    add_ctx(v, ts, ep);
    return v;
  }
  std::vector<Real> action_token(int32_t a, int64_t ts, int64_t ep) const {
    DMH_CHECK(a >= 0 && a < cfg_.n_actions, "action out of range");
    std::vector<Real> v(action_table_.data() + a * cfg_.embed_dim,
                        action_table_.data() + (a + 1) * cfg_.embed_dim);
    add_ctx(v, ts, ep);
    return v;
  }
  std::vector<Real> reward_token(float r, int64_t ts, int64_t ep) const {
    auto v = affine_row({static_cast<Real>(r)}, w_r_, b_r_);
    add_ctx(v, ts, ep);
    return v;
  }
  std::vector<Real> done_token(int32_t d, int64_t ts, int64_t ep) const {
    std::vector<Real> v(done_table_.data() + d * cfg_.embed_dim,
                        done_table_.data() + (d + 1) * cfg_.embed_dim);
    add_ctx(v, ts, ep);
    return v;
  }
  std::vector<Real> action_logits(const std::vector<Real>& out) const {
    return affine_row(ln_row(out, lnf_g_, lnf_b_), w_act_, b_act_);
  }

  std::vector<Real> scaled_state_feat(const std::vector<int32_t>& s) const {
    DMH_CHECK(static_cast<int64_t>(s.size()) == cfg_.state_dim, "state dim mismatch");
    std::vector<Real> f(s.size());
    for (size_t d = 0; d < s.size(); ++d) {
      double scale = cfg_.state_scale.empty() ? 1.0 : cfg_.state_scale[d];
      f[d] = static_cast<Real>(static_cast<double>(s[d]) / scale);
    }
    return f;
  }

 private:
  int64_t ts_index(int64_t t) const { return t < cfg_.max_timestep ? t : cfg_.max_timestep - 1; }
  int64_t ep_index(int64_t e) const { return e < cfg_.n ? e : cfg_.n - 1; }

  void add_ctx(std::vector<Real>& v, int64_t ts, int64_t ep) const {
    int64_t D = cfg_.embed_dim;
    const Real* tr = ts_table_.data() + ts_index(ts) * D;
    const Real* er = ep_table_.data() + ep_index(ep) * D;
    // matches add(emb, add(ts_rows, ep_rows)) ordering: emb + (ts + ep)
    for (int64_t j = 0; j < D; ++j) v[j] += tr[j] + er[j];
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

  BaselineConfig cfg_;
  ParameterRegistry<Real> params_;
  SeqBackbone<Real> net_;
  Tensor<Real> lnf_g_, lnf_b_;
  Tensor<Real> w_s_, b_s_, action_table_, w_r_, b_r_, done_table_, ts_table_, ep_table_;
  Tensor<Real> w_act_, b_act_;
};

// Online stepper for AD: the sorted window of completed episodes is replayed
// into the backbone state at each episode start (quadratic per episode for
// attention, linear for the SSM), then the live episode streams token by
// token.
template <typename Real>
class AdOnlinePolicy {
 public:
  explicit AdOnlinePolicy(const AdModel<Real>& model)
      : model_(model), state_(model.net().make_state()) {}

  void begin_episode() {
    state_ = model_.net().make_state();
    if (!window_.empty()) {
      std::vector<const Trajectory*> ptrs;
      for (const auto& t : window_) ptrs.push_back(&t);
      auto sorted = sort_context(ptrs);
      for (size_t e = 0; e < sorted.size(); ++e)
        for (int64_t t = 0; t < sorted[e]->length(); ++t) {
          const Step& st = sorted[e]->steps[static_cast<size_t>(t)];
          int64_t ep = static_cast<int64_t>(e);
          model_.net().step(model_.state_token(st.state, t, ep), state_);
          model_.net().step(model_.action_token(st.action, t, ep), state_);
          model_.net().step(model_.reward_token(st.reward, t, ep), state_);
          model_.net().step(model_.done_token(st.done, t, ep), state_);
        }
    }
    cur_steps_.clear();
    step_ = 0;
    cur_ep_ = static_cast<int64_t>(window_.size());
  }

  int32_t act(const std::vector<int32_t>& obs) {
    auto out = model_.net().step(model_.state_token(obs, step_, cur_ep_), state_);
    auto logits = model_.action_logits(out);
    last_obs_ = obs;
    return sample_from_logits(logits, rng_, model_.config().action_temperature);
  }

  void reseed(uint64_t seed) { rng_ = Rng(seed); }

  void record(int32_t action, float reward, bool done) {
    model_.net().step(model_.action_token(action, step_, cur_ep_), state_);
    model_.net().step(model_.reward_token(reward, step_, cur_ep_), state_);
    model_.net().step(model_.done_token(done ? 1 : 0, step_, cur_ep_), state_);
    Step st;
    st.state = last_obs_;
    st.action = action;
    st.reward = reward;
    st.done = done ? 1 : 0;
    cur_steps_.push_back(std::move(st));
    ++step_;
    if (done) {
      window_.push_back(Trajectory::from_steps(std::move(cur_steps_)));
      cur_steps_.clear();
      while (static_cast<int64_t>(window_.size()) > model_.config().n - 1)
        window_.pop_front();
    }
  }

 private:
  const AdModel<Real>& model_;
  typename SeqBackbone<Real>::State state_;
  std::deque<Trajectory> window_;
  std::vector<Step> cur_steps_;
  std::vector<int32_t> last_obs_;
  Rng rng_{0};
  int64_t step_ = 0;
  int64_t cur_ep_ = 0;
};

// Decision-transformer baseline: single-episode contexts with (return-to-go,
// state, action) token triples; evaluation conditions on the task's target
// return.
template <typename Real>
class DtModel {
 public:
  DtModel(const BaselineConfig& cfg, Rng& rng)
      : cfg_((cfg.validate(), cfg)), net_(/*attention=*/true, cfg, params_, "net", rng) {
    int64_t D = cfg_.embed_dim, sd = cfg_.state_dim;
    Real s_in = Real(1.0 / std::sqrt(static_cast<double>(sd)));
    Real s_d = Real(1.0 / std::sqrt(static_cast<double>(D)));
    lnf_g_ = params_.add("ln_f_g", Tensor<Real>::filled({D}, Real(1)));
    lnf_b_ = params_.add("ln_f_b", Tensor<Real>::zeros({D}));
    w_g_ = params_.add("embed.rtg.w", Tensor<Real>::randn({1, D}, rng));
    b_g_ = params_.add("embed.rtg.b", Tensor<Real>::zeros({D}));
    w_s_ = params_.add("embed.state.w", Tensor<Real>::randn({sd, D}, rng, s_in));
    b_s_ = params_.add("embed.state.b", Tensor<Real>::zeros({D}));
    action_table_ =
        params_.add("embed.action", Tensor<Real>::randn({cfg_.n_actions, D}, rng, Real(0.02)));
    ts_table_ = params_.add("embed.timestep",
                            Tensor<Real>::randn({cfg_.max_timestep, D}, rng, Real(0.02)));
    w_act_ = params_.add("head.action.w", Tensor<Real>::randn({D, cfg_.n_actions}, rng, s_d));
    b_act_ = params_.add("head.action.b", Tensor<Real>::zeros({cfg_.n_actions}));
  }

  const BaselineConfig& config() const { return cfg_; }
  ParameterRegistry<Real>& params() { return params_; }
  const ParameterRegistry<Real>& params() const { return params_; }
  const SeqBackbone<Real>& net() const { return net_; }

  // Each item contributes its episodes as independent sequences.
  Tensor<Real> compute_loss(const std::vector<TrainItem>& batch, bool training,
                            Rng& rng) const {
    DMH_CHECK(!batch.empty(), "compute_loss on an empty batch");
    int64_t D = cfg_.embed_dim, sd = cfg_.state_dim;
    std::vector<const Trajectory*> eps;
    for (const auto& item : batch)
      for (const auto* t : item.episodes) eps.push_back(t);
    DMH_CHECK(!eps.empty(), "no episodes in batch");
    int64_t T = eps[0]->length();
    std::vector<Real> gfeat, sfeat;
    std::vector<int64_t> aidx, tsidx, targets;
    for (const auto* traj : eps) {
      DMH_CHECK(traj->length() == T, "batch episodes must share a length");
      double rtg = traj->total_return;
      for (int64_t t = 0; t < T; ++t) {
        const Step& st = traj->steps[static_cast<size_t>(t)];
        gfeat.push_back(static_cast<Real>(rtg));
        auto f = scaled_state_feat(st.state);
        sfeat.insert(sfeat.end(), f.begin(), f.end());
        aidx.push_back(st.action);
        tsidx.push_back(ts_index(t));
        targets.push_back(st.action);
        rtg -= static_cast<double>(st.reward);
      }
    }
    int64_t B = static_cast<int64_t>(eps.size());
    int64_t total = B * T;
    auto ts = gather_rows(ts_table_, std::move(tsidx));
    auto eg = add(add_rowvec(matmul(Tensor<Real>::from_data({total, 1}, std::move(gfeat)),
                                    w_g_),
                             b_g_),
                  ts);
    auto es = add(add_rowvec(matmul(Tensor<Real>::from_data({total, sd}, std::move(sfeat)),
                                    w_s_),
                             b_s_),
                  ts);
    auto ea = add(gather_rows(action_table_, std::move(aidx)), ts);
    int64_t L = 3 * T;
    std::vector<int64_t> perm(static_cast<size_t>(B * L));
    std::vector<int64_t> loss_rows(static_cast<size_t>(total));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < T; ++t) {
        int64_t base = b * L + 3 * t;
        int64_t src = b * T + t;
        perm[static_cast<size_t>(base)] = src;
        perm[static_cast<size_t>(base + 1)] = total + src;
        perm[static_cast<size_t>(base + 2)] = 2 * total + src;
        loss_rows[static_cast<size_t>(src)] = base + 1;
      }
    auto x = reshape(gather_rows(concat_rows({eg, es, ea}), std::move(perm)), {B, L, D});
    auto out = net_.forward(x, training, rng);
    auto flat = layer_norm(reshape(out, {B * L, D}), lnf_g_, lnf_b_);
    auto logits = add_rowvec(matmul(gather_rows(flat, std::move(loss_rows)), w_act_), b_act_);
    return cross_entropy_mean(logits, std::move(targets));
  }

  std::vector<Real> rtg_token(double rtg, int64_t t) const {
    auto v = affine_row({static_cast<Real>(rtg)}, w_g_, b_g_);
    add_table_row(v, ts_table_, ts_index(t));
    return v;
  }
  std::vector<Real> state_token(const std::vector<int32_t>& s, int64_t t) const {
    auto v = affine_row(scaled_state_feat(s), w_s_, b_s_);
    add_table_row(v, ts_table_, ts_index(t));
    return v;
  }
  std::vector<Real> action_token(int32_t a, int64_t t) const {
    std::vector<Real> v(action_table_.data() + a * cfg_.embed_dim,
                        action_table_.data() + (a + 1) * cfg_.embed_dim);
    add_table_row(v, ts_table_, ts_index(t));
    return v;
  }
  std::vector<Real> action_logits(const std::vector<Real>& out) const {
    return affine_row(ln_row(out, lnf_g_, lnf_b_), w_act_, b_act_);
  }

  std::vector<Real> scaled_state_feat(const std::vector<int32_t>& s) const {
    DMH_CHECK(static_cast<int64_t>(s.size()) == cfg_.state_dim, "state dim mismatch");
    std::vector<Real> f(s.size());
    for (size_t d = 0; d < s.size(); ++d) {
      double scale = cfg_.state_scale.empty() ? 1.0 : cfg_.state_scale[d];
      f[d] = static_cast<Real>(static_cast<double>(s[d]) / scale);
    }
    return f;
  }

 private:
  int64_t ts_index(int64_t t) const { return t < cfg_.max_timestep ? t : cfg_.max_timestep - 1; }

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
    for (int64_t j = 0; j < d; ++j) v[j] += table.data()[row * d + j];
  }

  BaselineConfig cfg_;
  ParameterRegistry<Real> params_;
  SeqBackbone<Real> net_;
  Tensor<Real> lnf_g_, lnf_b_;
  Tensor<Real> w_g_, b_g_, w_s_, b_s_, action_table_, ts_table_;
  Tensor<Real> w_act_, b_act_;
};

// Online DT rollouts: fresh single-episode context per episode, return-to-go
// initialized at the configured target return and decremented by observed
// rewards.
template <typename Real>
class DtOnlinePolicy {
 public:
  explicit DtOnlinePolicy(const DtModel<Real>& model)
      : model_(model), state_(model.net().make_state()) {}

  void begin_episode() {
    state_ = model_.net().make_state();
    step_ = 0;
    rtg_ = model_.config().target_return;
  }

  int32_t act(const std::vector<int32_t>& obs) {
    model_.net().step(model_.rtg_token(rtg_, step_), state_);
    auto out = model_.net().step(model_.state_token(obs, step_), state_);
    auto logits = model_.action_logits(out);
    return sample_from_logits(logits, rng_, model_.config().action_temperature);
  }

  void reseed(uint64_t seed) { rng_ = Rng(seed); }

  void record(int32_t action, float reward, bool /*done*/) {
    model_.net().step(model_.action_token(action, step_), state_);
    rtg_ -= static_cast<double>(reward);
    ++step_;
  }

 private:
  const DtModel<Real>& model_;
  typename SeqBackbone<Real>::State state_;
  Rng rng_{0};
  int64_t step_ = 0;
  double rtg_ = 0.0;
};

}  // namespace dmh
