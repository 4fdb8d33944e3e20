#include "dmh/datagen.hpp"

#include <algorithm>
#include <cmath>

namespace dmh {

namespace {

int32_t flag_space(EnvFamily family) {
  switch (family) {
    case EnvFamily::kDarkroomHard:
    case EnvFamily::kLargeDarkroomHard:
      return 2;  // goal reached once
    case EnvFamily::kDarkKeyToDoor:
    case EnvFamily::kLargeDarkKeyToDoor:
      return 4;  // has_key x door_opened
    default:
      return 1;
  }
}

int32_t flags_of(EnvFamily family, const EnvState& s) {
  switch (family) {
    case EnvFamily::kDarkroomHard:
    case EnvFamily::kLargeDarkroomHard:
      return s.goal_reached_once ? 1 : 0;
    case EnvFamily::kDarkKeyToDoor:
    case EnvFamily::kLargeDarkKeyToDoor:
      return (s.has_key ? 1 : 0) + (s.door_opened ? 2 : 0);
    default:
      return 0;
  }
}

}  // namespace

QTable::QTable(const Task& task, const QLearnConfig& cfg) : task_(task), cfg_(cfg) {
  DMH_CHECK(is_grid_family(task.family), "QTable supports grid tasks only");
  n_actions_ = env_meta(task).n_actions;
  n_states_ = static_cast<int64_t>(task.width) * task.height * flag_space(task.family);
  q_.assign(static_cast<size_t>(n_states_ * n_actions_), cfg.optimism);
}

int64_t QTable::index(const EnvState& s) const {
  int64_t cell = static_cast<int64_t>(s.y) * task_.width + s.x;
  return cell * flag_space(task_.family) + flags_of(task_.family, s);
}

int32_t QTable::act(const EnvState& state, float eps, Rng& rng) const {
  if (rng.uniform() < static_cast<double>(eps))
    return static_cast<int32_t>(rng.uniform_int(n_actions_));
  const float* row = q_.data() + index(state) * n_actions_;
  int32_t best = 0;
  for (int32_t a = 1; a < n_actions_; ++a)
    if (row[a] > row[best]) best = a;
  return best;
}

void QTable::update(const EnvState& before, int32_t action, float reward,
                    const EnvState& after, bool terminal) {
  float* row = q_.data() + index(before) * n_actions_;
  float target = reward;
  if (!terminal) {
    const float* next = q_.data() + index(after) * n_actions_;
    float best = next[0];
    for (int32_t a = 1; a < n_actions_; ++a) best = std::max(best, next[a]);
    target += cfg_.gamma * best;
  }
  row[action] += cfg_.alpha * (target - row[action]);
}

TaskHistory collect_history(const Task& task, int64_t steps_budget, Rng& rng,
                            const QLearnConfig& cfg) {
  DMH_CHECK(steps_budget >= 1, "steps budget must cover at least one episode");
  QTable q(task, cfg);
  TaskHistory hist;
  hist.task = task;
  int64_t steps_done = 0;
  int64_t anneal_steps = std::max<int64_t>(1, steps_budget / 2);
  while (steps_done < steps_budget) {
    EnvState state = reset_env(task);
    std::vector<Step> steps;
    steps.reserve(static_cast<size_t>(task.episode_len));
    while (!state.done) {
      float frac = std::min(1.0f, static_cast<float>(steps_done) /
                                      static_cast<float>(anneal_steps));
      float eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);
      EnvState before = state;
      int32_t action = q.act(state, eps, rng);
      Step rec;
      rec.state = observe(task, before);
      rec.action = action;
      StepOutcome out = grid_step(task, state, action);
      rec.reward = out.reward;
      rec.done = out.done ? 1 : 0;
      // Grid episodes end only by time limit, not by reaching an absorbing
      // state, so the update always bootstraps; cutting the bootstrap at the
      // truncation point would teach the stationary Q-table that the final
      // position is worthless and destabilize convergence.
      q.update(before, action, out.reward, state, /*terminal=*/false);
      steps.push_back(std::move(rec));
      ++steps_done;
    }
    hist.episodes.push_back(Trajectory::from_steps(std::move(steps)));
  }
  return hist;
}

TaskHistory collect_tmaze_data(const Task& task, int64_t n_episodes,
                               double optimal_fraction, Rng& rng) {
  DMH_CHECK(task.family == EnvFamily::kTmaze, "collect_tmaze_data needs a tmaze task");
  DMH_CHECK(n_episodes >= 1, "need at least one episode");
  DMH_CHECK(optimal_fraction >= 0.0 && optimal_fraction <= 1.0,
            "optimal_fraction must be in [0, 1]");
  int64_t n_optimal = static_cast<int64_t>(
      std::llround(optimal_fraction * static_cast<double>(n_episodes)));
  TaskHistory hist;
  hist.task = task;
  ScriptedPolicy scripted(task);
  for (int64_t e = 0; e < n_episodes; ++e) {
    bool optimal = e < n_optimal;
    EnvState state = reset_env(task);
    scripted.begin_episode();
    std::vector<Step> steps;
    steps.reserve(static_cast<size_t>(task.horizon));
    while (!state.done) {
      Step rec;
      rec.state = observe(task, state);
      rec.action = optimal ? scripted.act(rec.state, state)
                           : static_cast<int32_t>(rng.uniform_int(3));
      StepOutcome out = tmaze_step(task, state, rec.action);
      rec.reward = out.reward;
      rec.done = out.done ? 1 : 0;
      steps.push_back(std::move(rec));
    }
    hist.episodes.push_back(Trajectory::from_steps(std::move(steps)));
  }
  // Fisher-Yates so optimal and random episodes interleave per seed.
  for (int64_t i = n_episodes - 1; i > 0; --i) {
    int64_t j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
    std::swap(hist.episodes[static_cast<size_t>(i)], hist.episodes[static_cast<size_t>(j)]);
  }
  return hist;
}

}  // namespace dmh
