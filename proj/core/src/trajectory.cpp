#include "dmh/trajectory.hpp"

#include <algorithm>
#include <limits>

namespace dmh {

Trajectory Trajectory::from_steps(std::vector<Step> steps) {
  Trajectory t;
  t.steps = std::move(steps);
  t.total_return = 0.0;
  for (const auto& s : t.steps) t.total_return += static_cast<double>(s.reward);
  return t;
}

std::vector<const Trajectory*> sort_context(const std::vector<const Trajectory*>& trajs) {
  DMH_CHECK(!trajs.empty(), "sort_context requires at least one trajectory");
  std::vector<const Trajectory*> out = trajs;
  std::stable_sort(out.begin(), out.end(), [](const Trajectory* a, const Trajectory* b) {
    return a->total_return < b->total_return;
  });
  return out;
}

MambaSequence build_mamba_sequence(const std::vector<const Trajectory*>& context,
                                   int64_t c) {
  DMH_CHECK(c >= 1, "block length c must be >= 1, got ", c);
  DMH_CHECK(!context.empty(), "build_mamba_sequence requires a nonempty context");
  MambaSequence seq;
  seq.block_len = c;
  for (const Trajectory* traj : context) {
    int64_t T = traj->length();
    seq.traj_block_start.push_back(static_cast<int64_t>(seq.blocks.size()));
    int64_t n_blocks = 0;
    for (int64_t k = 0; k * c < T; ++k, ++n_blocks) {
      int64_t lo = k * c;
      int64_t hi = std::min(lo + c, T);
      MambaBlockToken tok;
      tok.state = traj->steps[static_cast<size_t>(lo)].state;
      tok.timestep = static_cast<int32_t>(lo);
      float rsum = 0.0f;
      int32_t done = 0;
      for (int64_t t = lo; t < hi; ++t) {
        rsum += traj->steps[static_cast<size_t>(t)].reward;
        done |= traj->steps[static_cast<size_t>(t)].done;
      }
      tok.reward_sum = rsum;
      tok.done = done;
      seq.blocks.push_back(std::move(tok));
    }
    seq.traj_block_count.push_back(n_blocks);
  }
  return seq;
}

SubGoalSelection select_valuable_subgoal(const Trajectory& traj, int64_t i) {
  int64_t T = traj.length();
  DMH_CHECK(i >= 0 && i < T - 1, "select_valuable_subgoal: anchor ", i,
            " has no future candidates in a trajectory of length ", T);
  SubGoalSelection sel;
  sel.anchor = i;
  double acc = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  int64_t best_j = i + 1;
  for (int64_t j = i + 1; j <= T - 1; ++j) {
    acc += static_cast<double>(traj.steps[static_cast<size_t>(j)].reward);
    double v = acc / static_cast<double>(j - i);
    if (v > best) {  // strict: ties keep the closest j
      best = v;
      best_j = j;
    }
  }
  sel.selected = best_j;
  sel.score = best;
  return sel;
}

LocalSegment build_local_segment(const Trajectory& traj, int64_t j, int64_t c,
                                 PromptKind prompt, std::vector<int32_t> goal_state) {
  int64_t T = traj.length();
  DMH_CHECK(j >= 0 && j < T, "segment anchor ", j, " out of range for length ", T);
  DMH_CHECK(c >= 1, "block length c must be >= 1");
  DMH_CHECK(j % c == 0, "segment anchor ", j, " must be a multiple of c=", c);
  LocalSegment seg;
  seg.anchor = j;
  seg.prompt = prompt;
  seg.goal_state = std::move(goal_state);
  if (prompt == PromptKind::kMappedGoal)
    DMH_CHECK(!seg.goal_state.empty(), "mapped-goal segment requires a goal state");
  int64_t hi = std::min(j + c, T);
  seg.steps.assign(traj.steps.begin() + j, traj.steps.begin() + hi);
  return seg;
}

}  // namespace dmh
