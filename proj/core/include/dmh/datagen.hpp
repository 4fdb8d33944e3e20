#pragma once

#include <cstdint>
#include <vector>

#include "dmh/dataset.hpp"
#include "dmh/envs.hpp"
#include "dmh/rng.hpp"

namespace dmh {

// Tabular Q-learning over the task's observation x action space. Internally
// the state is augmented with the hidden progress flags (key held, goal
// reached once, remembered oracle signal) so the table indexes a Markov
// state even though only the raw observation is recorded in the dataset.
struct QLearnConfig {
  float alpha = 0.5f;
  float gamma = 0.99f;
  // Epsilon anneals linearly over the first half of the step budget. The
  // start value keeps early behavior stochastic enough that an imitator of
  // it retains per-step entropy (a deterministic sweep cloned imperfectly
  // repeats the same near-miss forever).
  float eps_start = 0.5f;
  float eps_end = 0.05f;
  // Optimistic Q initialization: unvisited actions look better than any real
  // return, so the greedy policy sweeps the state space systematically before
  // settling. The resulting histories demonstrate directed exploration, which
  // a context-conditioned imitator can reproduce; epsilon-random behavior it
  // cannot improve on.
  float optimism = 25.0f;
};

class QTable {
 public:
  QTable(const Task& task, const QLearnConfig& cfg);

  int32_t act(const EnvState& state, float eps, Rng& rng) const;
  void update(const EnvState& before, int32_t action, float reward,
              const EnvState& after, bool terminal);

 private:
  int64_t index(const EnvState& state) const;

  Task task_;
  QLearnConfig cfg_;
  int32_t n_actions_;
  int64_t n_states_;
  std::vector<float> q_;  // n_states_ x n_actions_
};

// Runs epsilon-greedy Q-learning on the task for `steps_budget` environment
// steps (rounded up to whole episodes), recording every episode in order.
// Epsilon anneals linearly from eps_start to eps_end over the first half of
// the budget, then stays at eps_end.
TaskHistory collect_history(const Task& task, int64_t steps_budget, Rng& rng,
                            const QLearnConfig& cfg = {});

// Tmaze offline data: a shuffled mixture of scripted-optimal episodes
// (fraction `optimal_fraction`) and uniform-random-policy episodes.
TaskHistory collect_tmaze_data(const Task& task, int64_t n_episodes,
                               double optimal_fraction, Rng& rng);

}  // namespace dmh
