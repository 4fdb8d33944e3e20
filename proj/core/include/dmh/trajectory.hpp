#pragma once

#include <cstdint>
#include <vector>

#include "dmh/check.hpp"

namespace dmh {

// One environment transition. `state` is the observation before acting
// (integer coordinates for grids, (cell, signal) for Tmaze).
struct Step {
  std::vector<int32_t> state;
  int32_t action = 0;
  float reward = 0.0f;
  int32_t done = 0;  // 1 only on the final step of an episode
};

struct Trajectory {
  std::vector<Step> steps;
  double total_return = 0.0;

  int64_t length() const { return static_cast<int64_t>(steps.size()); }

  static Trajectory from_steps(std::vector<Step> steps);
};

// Sorts trajectories by nondecreasing total return; equal returns keep their
// original order. Contents are never modified, only order.
std::vector<const Trajectory*> sort_context(const std::vector<const Trajectory*>& trajs);

// Block-aggregated long-context view: one (state, reward-sum, done) triple per
// c steps of each trajectory, trajectories in context order.
struct MambaBlockToken {
  std::vector<int32_t> state;  // s_{kc}
  float reward_sum = 0.0f;     // sum of the block's rewards
  int32_t done = 0;            // 1 when the block contains the episode end
  int32_t timestep = 0;        // kc, within-episode
};

struct MambaSequence {
  int64_t block_len = 0;
  std::vector<MambaBlockToken> blocks;
  std::vector<int64_t> traj_block_start;  // first block index of each trajectory
  std::vector<int64_t> traj_block_count;

  int64_t token_count() const { return 3 * static_cast<int64_t>(blocks.size()); }
};

MambaSequence build_mamba_sequence(const std::vector<const Trajectory*>& context,
                                   int64_t c);

// Valuable sub-goal: j* = argmax_{j>i} (sum_{t=i+1..j} r_t) / (j - i),
// ties broken toward the smallest j.
struct SubGoalSelection {
  int64_t anchor = 0;    // i
  int64_t selected = 0;  // j*
  double score = 0.0;    // v(j*)
};

SubGoalSelection select_valuable_subgoal(const Trajectory& traj, int64_t i);

// Short-context view: a prompt token repeated before each of up to c steps
// starting at anchor j (a multiple of c), truncated at episode end.
enum class PromptKind {
  kGeneratedSubgoal,  // z from the long-context module
  kMappedGoal,        // f(s_g) from a selected valuable sub-goal
};

struct LocalSegment {
  int64_t anchor = 0;
  PromptKind prompt = PromptKind::kGeneratedSubgoal;
  std::vector<int32_t> goal_state;  // s_g, only for kMappedGoal
  std::vector<Step> steps;          // <= c steps from one trajectory

  int64_t token_count() const { return 4 * static_cast<int64_t>(steps.size()); }
};

LocalSegment build_local_segment(const Trajectory& traj, int64_t j, int64_t c,
                                 PromptKind prompt,
                                 std::vector<int32_t> goal_state = {});

}  // namespace dmh
