#include "dmh/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "dmh/datagen.hpp"
#include "dmh/optimizer.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace dmh {

namespace {

// Training allocates and frees many multi-megabyte activation buffers per
// iteration. glibc serves those with mmap/munmap by default, which roughly
// doubles wall time in syscall overhead; keep them on the heap instead.
#ifdef __GLIBC__
const bool malloc_tuned = [] {
  if (std::getenv("DMH_DEFAULT_MALLOC")) return false;
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

}  // namespace

ModelKind parse_model_kind(const std::string& name) {
  if (name == "dmh") return ModelKind::kDmh;
  if (name == "ad_transformer") return ModelKind::kAdTransformer;
  if (name == "ad_mamba") return ModelKind::kAdMamba;
  if (name == "dt") return ModelKind::kDt;
  throw ConfigError("unknown model kind: " + name);
}

std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kDmh: return "dmh";
    case ModelKind::kAdTransformer: return "ad_transformer";
    case ModelKind::kAdMamba: return "ad_mamba";
    case ModelKind::kDt: return "dt";
  }
  throw ContractError("bad model kind");
}

namespace {

std::vector<double> to_scale(const std::vector<float>& s) {
  return std::vector<double>(s.begin(), s.end());
}

template <typename P>
class PolicyAdapter : public OnlinePolicy {
 public:
  explicit PolicyAdapter(P p) : p_(std::move(p)) {}
  void begin_episode() override { p_.begin_episode(); }
  int32_t act(const std::vector<int32_t>& obs) override { return p_.act(obs); }
  void record(int32_t action, float reward, bool done) override {
    p_.record(action, reward, done);
  }
  void reseed(uint64_t seed) override { p_.reseed(seed); }

 private:
  P p_;
};

}  // namespace

Model::Model(const RunConfig& cfg, const Task& reference_task, uint64_t seed)
    : kind_(parse_model_kind(cfg.model.kind)) {
  EnvMeta meta = env_meta(reference_task);
  Rng rng(seed);
  if (kind_ == ModelKind::kDmh) {
    DmhConfig mc;
    mc.c = cfg.model.c;
    mc.n = cfg.model.n;
    mc.embed_dim = cfg.model.embed_dim;
    mc.mamba_layers = cfg.model.mamba_layers;
    mc.state_size = cfg.model.state_size;
    mc.tf_layers = cfg.model.tf_layers;
    mc.tf_heads = cfg.model.tf_heads;
    mc.dropout = cfg.model.dropout;
    mc.segments_per_item = cfg.model.segments_per_item;
    mc.use_valuable_subgoals = cfg.model.use_valuable_subgoals;
    mc.action_temperature = cfg.model.action_temperature;
    mc.state_dim = meta.state_dim;
    mc.n_actions = meta.n_actions;
    mc.max_timestep = std::max<int64_t>(1, meta.max_steps);
    mc.state_scale = to_scale(meta.state_scale);
    dmh_ = std::make_unique<DmhModel<float>>(mc, rng);
    return;
  }
  BaselineConfig bc;
  bc.n = cfg.model.n;
  bc.layers = kind_ == ModelKind::kAdMamba ? cfg.model.mamba_layers : cfg.model.tf_layers;
  bc.heads = cfg.model.tf_heads;
  bc.state_size = cfg.model.state_size;
  bc.embed_dim = cfg.model.embed_dim;
  bc.dropout = cfg.model.dropout;
  bc.state_dim = meta.state_dim;
  bc.n_actions = meta.n_actions;
  bc.max_timestep = std::max<int64_t>(1, meta.max_steps);
  bc.state_scale = to_scale(meta.state_scale);
  bc.target_return = target_return(reference_task.family);
  bc.action_temperature = cfg.model.action_temperature;
  if (kind_ == ModelKind::kDt)
    dt_ = std::make_unique<DtModel<float>>(bc, rng);
  else
    ad_ = std::make_unique<AdModel<float>>(bc, kind_ == ModelKind::kAdTransformer, rng);
}

ParameterRegistry<float>& Model::params() {
  if (dmh_) return dmh_->params();
  if (ad_) return ad_->params();
  return dt_->params();
}

const ParameterRegistry<float>& Model::params() const {
  if (dmh_) return dmh_->params();
  if (ad_) return ad_->params();
  return dt_->params();
}

int64_t Model::episodes_per_item() const {
  if (dmh_) return dmh_->config().n;
  if (ad_) return ad_->config().n;
  return 1;
}

Tensor<float> Model::compute_loss(const std::vector<TrainItem>& batch, bool training,
                                  Rng& rng) const {
  if (dmh_) return dmh_->compute_loss(batch, training, rng);
  if (ad_) return ad_->compute_loss(batch, training, rng);
  return dt_->compute_loss(batch, training, rng);
}

std::unique_ptr<OnlinePolicy> Model::make_policy() const {
  if (dmh_)
    return std::make_unique<PolicyAdapter<DmhOnlinePolicy<float>>>(
        DmhOnlinePolicy<float>(*dmh_));
  if (ad_)
    return std::make_unique<PolicyAdapter<AdOnlinePolicy<float>>>(AdOnlinePolicy<float>(*ad_));
  return std::make_unique<PolicyAdapter<DtOnlinePolicy<float>>>(DtOnlinePolicy<float>(*dt_));
}

TrainResult train_model(Model& model, const Dataset& data, const RunConfig& cfg,
                        std::ostream* log) {
  DMH_CHECK_T(ConfigError, !data.empty(), "training dataset is empty");
  int64_t per_item = model.episodes_per_item();
  for (const auto& hist : data)
    DMH_CHECK_T(ConfigError, static_cast<int64_t>(hist.episodes.size()) >= per_item,
                "task history has ", hist.episodes.size(), " episodes, context needs ",
                per_item);
  OptimizerConfig ocfg;
  ocfg.lr = cfg.train.lr;
  ocfg.weight_decay = cfg.train.weight_decay;
  ocfg.clip_norm = cfg.train.clip_norm;
  ocfg.warmup_steps = cfg.train.warmup_steps;
  AdamW<float> opt(model.params().trainable(), ocfg);
  Rng rng(static_cast<uint64_t>(cfg.train.seed));
  TrainResult result;
  for (int64_t it = 0; it < cfg.train.iterations; ++it) {
    std::vector<TrainItem> batch(static_cast<size_t>(cfg.train.batch_size));
    for (auto& item : batch) {
      const auto& hist = data[static_cast<size_t>(rng.uniform_int(
          static_cast<int64_t>(data.size())))];
      int64_t total = static_cast<int64_t>(hist.episodes.size());
      // Half the items take a contiguous slice of the learning progression:
      // early slices hold only exploratory episodes, so the model also learns
      // what to do when its online context has found no reward yet. The other
      // half sample episodes from the whole history, whose best member is
      // usually near-optimal, teaching sharp exploitation of a good context.
      if (rng.uniform() < 0.5) {
        // Squaring the uniform draw biases the slice toward the start of the
        // history, where the behavior policy is still learning; the long
        // converged tail would otherwise dominate.
        double u = rng.uniform();
        int64_t start = static_cast<int64_t>(u * u *
                                             static_cast<double>(total - per_item + 1));
        start = std::min(start, total - per_item);
        for (int64_t k = 0; k < per_item; ++k)
          item.episodes.push_back(&hist.episodes[static_cast<size_t>(start + k)]);
      } else {
        for (int64_t k = 0; k < per_item; ++k)
          item.episodes.push_back(
              &hist.episodes[static_cast<size_t>(rng.uniform_int(total))]);
      }
    }
    auto loss = model.compute_loss(batch, /*training=*/true, rng);
    backward(loss);
    opt.step();
    if (it % 100 == 0 || it + 1 == cfg.train.iterations) {
      result.loss_log.emplace_back(it, static_cast<double>(loss.item()));
      if (log) *log << "iter " << it << " loss " << loss.item() << "\n";
    }
  }
  result.param_checksum = model.params().checksum();
  return result;
}

double EvalReport::mean_return() const {
  double sum = 0;
  int64_t count = 0;
  for (const auto& task : returns)
    for (double r : task) {
      sum += r;
      ++count;
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

std::vector<double> EvalReport::per_episode_mean() const {
  std::vector<double> out;
  if (returns.empty()) return out;
  size_t m = returns[0].size();
  out.assign(m, 0.0);
  for (const auto& task : returns) {
    DMH_CHECK(task.size() == m, "ragged evaluation report");
    for (size_t e = 0; e < m; ++e) out[e] += task[e];
  }
  for (double& v : out) v /= static_cast<double>(returns.size());
  return out;
}

EvalReport online_test(const Model& model, const std::vector<Task>& tasks,
                       int64_t episodes) {
  DMH_CHECK(!tasks.empty() && episodes >= 1, "online_test needs tasks and episodes");
  uint64_t before = model.params().checksum();
  EvalReport report;
  report.model = model_kind_name(model.kind());
  NoGradGuard no_grad;
  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    const Task& task = tasks[ti];
    report.task_labels.push_back(env_family_name(task.family) + "#" + std::to_string(ti));
    auto policy = model.make_policy();
    policy->reseed(0xAC70000u + static_cast<uint64_t>(ti));
    std::vector<double> rets, times;
    for (int64_t ep = 0; ep < episodes; ++ep) {
      auto t0 = std::chrono::steady_clock::now();
      policy->begin_episode();
      EnvState state = reset_env(task);
      double ret = 0;
      while (!state.done) {
        auto obs = observe(task, state);
        int32_t action = policy->act(obs);
        StepOutcome out = env_step(task, state, action);
        policy->record(action, out.reward, out.done);
        ret += static_cast<double>(out.reward);
      }
      auto t1 = std::chrono::steady_clock::now();
      rets.push_back(ret);
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    report.returns.push_back(std::move(rets));
    report.wall_ms.push_back(std::move(times));
  }
  DMH_CHECK(model.params().checksum() == before,
            "parameters changed during gradient-free evaluation");
  return report;
}

Dataset generate_dataset(const RunConfig& cfg, uint64_t seed) {
  DMH_CHECK_T(ConfigError, cfg.data.tasks >= 1, "need at least one task");
  EnvFamily family = parse_env_family(cfg.data.env);
  Rng base(seed);
  std::vector<Task> tasks;
  tasks.reserve(static_cast<size_t>(cfg.data.tasks));
  for (int64_t i = 0; i < cfg.data.tasks; ++i)
    tasks.push_back(sample_task(family, base, static_cast<int32_t>(cfg.data.tmaze_horizon)));
  Dataset out(static_cast<size_t>(cfg.data.tasks));
  DMH_PARALLEL_FOR(cfg.data.tasks) {
    Rng r = base.derive(static_cast<uint64_t>(_i));
    if (family == EnvFamily::kTmaze)
      out[static_cast<size_t>(_i)] =
          collect_tmaze_data(tasks[static_cast<size_t>(_i)], cfg.data.tmaze_episodes,
                             cfg.data.optimal_fraction, r);
    else
      out[static_cast<size_t>(_i)] =
          collect_history(tasks[static_cast<size_t>(_i)], cfg.data.steps_per_task, r);
  }
  return out;
}

std::vector<Task> sample_eval_tasks(const RunConfig& cfg, int64_t count, uint64_t seed) {
  EnvFamily family = parse_env_family(cfg.data.env);
  Rng rng = Rng(seed).derive(0xE7A1u);
  std::vector<Task> tasks;
  tasks.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i)
    tasks.push_back(sample_task(family, rng, static_cast<int32_t>(cfg.data.tmaze_horizon)));
  return tasks;
}

double fit_loglog_slope(const std::vector<int64_t>& x, const std::vector<double>& y) {
  DMH_CHECK(x.size() == y.size() && x.size() >= 2, "slope fit needs >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double n = static_cast<double>(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double lx = std::log(static_cast<double>(x[i]));
    double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

TimingReport benchmark_timing(const RunConfig& base, const std::vector<std::string>& kinds,
                              const std::vector<int64_t>& horizons,
                              int64_t episodes_per_point, uint64_t seed) {
  DMH_CHECK(horizons.size() >= 4, "timing fits need at least 4 horizons");
  DMH_CHECK(episodes_per_point >= 2, "need warmup plus at least one timed episode");
  int saved_threads = num_threads();
  set_num_threads(1);
  TimingReport report;
  report.horizons = horizons;
  try {
    for (const auto& kind : kinds) {
      std::vector<double> times;
      for (int64_t h : horizons) {
        RunConfig cfg = base;
        cfg.model.kind = kind;
        cfg.data.env = "tmaze";
        cfg.data.tmaze_horizon = h;
        Rng trng = Rng(seed).derive(static_cast<uint64_t>(h));
        Task task = sample_task(EnvFamily::kTmaze, trng, static_cast<int32_t>(h));
        Model model(cfg, task, seed);
        NoGradGuard no_grad;
        auto policy = model.make_policy();
        std::vector<double> ms;
        for (int64_t ep = 0; ep < episodes_per_point; ++ep) {
          auto t0 = std::chrono::steady_clock::now();
          policy->begin_episode();
          EnvState state = reset_env(task);
          while (!state.done) {
            auto obs = observe(task, state);
            int32_t action = policy->act(obs);
            StepOutcome out = env_step(task, state, action);
            policy->record(action, out.reward, out.done);
          }
          auto t1 = std::chrono::steady_clock::now();
          if (ep > 0)  // first episode is warmup (empty context, cold caches)
            ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        std::sort(ms.begin(), ms.end());
        times.push_back(ms[ms.size() / 2]);
      }
      report.slope[kind] = fit_loglog_slope(horizons, times);
      report.ms_per_episode[kind] = std::move(times);
    }
  } catch (...) {
    set_num_threads(saved_threads);
    throw;
  }
  set_num_threads(saved_threads);
  return report;
}

AblationResult ablate_subgoals(const RunConfig& cfg, const Dataset& data, std::ostream* log) {
  DMH_CHECK_T(ConfigError, cfg.model.kind == "dmh", "sub-goal ablation applies to dmh only");
  DMH_CHECK_T(ConfigError, !data.empty(), "ablation needs a dataset");
  auto tasks = sample_eval_tasks(cfg, cfg.eval.tasks, static_cast<uint64_t>(cfg.eval.seed));
  AblationResult result;
  for (bool with : {true, false}) {
    RunConfig variant = cfg;  // config diff is exactly this one flag
    variant.model.use_valuable_subgoals = with;
    Model model(variant, data[0].task, static_cast<uint64_t>(cfg.train.seed));
    auto trained = train_model(model, data, variant, log);
    auto report = online_test(model, tasks, cfg.eval.episodes);
    if (with) {
      result.with_subgoals = std::move(report);
      result.train_with = std::move(trained);
    } else {
      result.without_subgoals = std::move(report);
      result.train_without = std::move(trained);
    }
  }
  return result;
}

void write_metrics_jsonl(const std::string& path, const std::string& run_id,
                         const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  DMH_CHECK_T(ParseError, out.good(), "cannot open ", path, " for writing");
  for (size_t t = 0; t < report.returns.size(); ++t)
    for (size_t e = 0; e < report.returns[t].size(); ++e) {
      nlohmann::json rec;
      rec["run_id"] = run_id;
      rec["model"] = report.model;
      rec["task"] = report.task_labels[t];
      rec["episode"] = e;
      rec["return"] = report.returns[t][e];
      rec["wall_ms"] = report.wall_ms[t][e];
      out << rec.dump() << "\n";
    }
}

void write_summary_csv(const std::string& path, const std::string& run_id,
                       const std::vector<EvalReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  DMH_CHECK_T(ParseError, out.good(), "cannot open ", path, " for writing");
  out << "run_id,model,task,episodes,mean_return\n";
  for (const auto& r : reports) {
    for (size_t t = 0; t < r.returns.size(); ++t) {
      double mean = 0;
      for (double v : r.returns[t]) mean += v;
      if (!r.returns[t].empty()) mean /= static_cast<double>(r.returns[t].size());
      out << run_id << "," << r.model << "," << r.task_labels[t] << ","
          << r.returns[t].size() << "," << mean << "\n";
    }
    out << run_id << "," << r.model << ",all,"
        << (r.returns.empty() ? 0 : r.returns[0].size()) << "," << r.mean_return() << "\n";
  }
}

}  // namespace dmh
