#pragma once

#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "dmh/baselines.hpp"
#include "dmh/config.hpp"
#include "dmh/dataset.hpp"
#include "dmh/envs.hpp"
#include "dmh/model.hpp"

namespace dmh {

enum class ModelKind { kDmh, kAdTransformer, kAdMamba, kDt };

ModelKind parse_model_kind(const std::string& name);
std::string model_kind_name(ModelKind k);

// Uniform online-policy surface over the concrete model variants.
class OnlinePolicy {
 public:
  virtual ~OnlinePolicy() = default;
  virtual void begin_episode() = 0;
  virtual int32_t act(const std::vector<int32_t>& obs) = 0;
  virtual void record(int32_t action, float reward, bool done) = 0;
  // Resets the action-sampling stream (actions are sampled from the predicted
  // distribution, deterministically for a given seed).
  virtual void reseed(uint64_t seed) = 0;
};

// Owns whichever model the run selects; the task fixes the observation/action
// space and (for the return-conditioned baseline) the target return.
class Model {
 public:
  Model(const RunConfig& cfg, const Task& reference_task, uint64_t seed);

  ModelKind kind() const { return kind_; }
  ParameterRegistry<float>& params();
  const ParameterRegistry<float>& params() const;
  int64_t episodes_per_item() const;  // context size n (1 for the DT baseline)

  Tensor<float> compute_loss(const std::vector<TrainItem>& batch, bool training,
                             Rng& rng) const;
  std::unique_ptr<OnlinePolicy> make_policy() const;

  DmhModel<float>* dmh() { return dmh_.get(); }
  const DmhModel<float>* dmh() const { return dmh_.get(); }

 private:
  ModelKind kind_;
  std::unique_ptr<DmhModel<float>> dmh_;
  std::unique_ptr<AdModel<float>> ad_;
  std::unique_ptr<DtModel<float>> dt_;
};

struct TrainResult {
  std::vector<std::pair<int64_t, double>> loss_log;  // (iteration, loss) every 100
  uint64_t param_checksum = 0;
};

// Offline training: per iteration, each batch item holds episodes of one task
// sampled from its learning history; the model sorts, tokenizes and averages
// losses; one optimizer step end-to-end.
TrainResult train_model(Model& model, const Dataset& data, const RunConfig& cfg,
                        std::ostream* log = nullptr);

struct EvalReport {
  std::string model;
  std::vector<std::string> task_labels;
  std::vector<std::vector<double>> returns;  // [task][episode]
  std::vector<std::vector<double>> wall_ms;  // [task][episode]

  double mean_return() const;
  // Mean across tasks at each episode index (the self-improvement curve).
  std::vector<double> per_episode_mean() const;
};

// Gradient-free rollouts: no optimizer exists here and the parameter checksum
// is asserted unchanged. Fully deterministic: actions are sampled from the
// predicted distributions with a fixed per-task seed.
EvalReport online_test(const Model& model, const std::vector<Task>& tasks,
                       int64_t episodes);

// Offline corpus per the run configuration: learning histories for grid
// families, policy mixtures for Tmaze; one derived seed per task.
Dataset generate_dataset(const RunConfig& cfg, uint64_t seed);

std::vector<Task> sample_eval_tasks(const RunConfig& cfg, int64_t count, uint64_t seed);

struct TimingReport {
  std::vector<int64_t> horizons;
  std::map<std::string, std::vector<double>> ms_per_episode;  // median, per model
  std::map<std::string, double> slope;                        // log-log fit
};

// Online wall-time scaling over Tmaze horizons, single-threaded, first
// episode per point excluded as warmup. Requires >= 4 horizons.
TimingReport benchmark_timing(const RunConfig& base, const std::vector<std::string>& kinds,
                              const std::vector<int64_t>& horizons,
                              int64_t episodes_per_point, uint64_t seed);

struct AblationResult {
  EvalReport with_subgoals;
  EvalReport without_subgoals;
  TrainResult train_with;
  TrainResult train_without;
};

// Paired runs differing in exactly one flag (mapped-goal segments in the
// loss), same seeds and data.
AblationResult ablate_subgoals(const RunConfig& cfg, const Dataset& data,
                               std::ostream* log = nullptr);

// Newline-delimited JSON metrics and a CSV summary (per-task mean returns).
void write_metrics_jsonl(const std::string& path, const std::string& run_id,
                         const EvalReport& report);
void write_summary_csv(const std::string& path, const std::string& run_id,
                       const std::vector<EvalReport>& reports);

// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(const std::vector<int64_t>& x, const std::vector<double>& y);

}  // namespace dmh
