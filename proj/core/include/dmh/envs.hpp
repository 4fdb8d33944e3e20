#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmh/check.hpp"
#include "dmh/rng.hpp"

namespace dmh {

enum class EnvFamily {
  kDarkroom,
  kDarkroomHard,
  kDarkKeyToDoor,
  kLargeDarkroom,
  kLargeDarkroomHard,
  kLargeDarkKeyToDoor,
  kTmaze,
};

std::string env_family_name(EnvFamily f);
EnvFamily parse_env_family(const std::string& name);
bool is_grid_family(EnvFamily f);

// Task parameters. Grid tasks hide a goal (or key+door) in a width x height
// room; Tmaze hides the rewarded side, told only by the oracle at cell 0.
struct Task {
  EnvFamily family = EnvFamily::kDarkroom;
  // grid
  int32_t width = 9, height = 9;
  int32_t goal_x = 0, goal_y = 0;
  int32_t key_x = 0, key_y = 0, door_x = 0, door_y = 0;
  int32_t episode_len = 20;
  // tmaze
  int32_t horizon = 100;
  int32_t oracle_side = 0;  // 0 = left, 1 = right
};

// Grid actions; Tmaze uses {kForward=0, kTurnLeft=1, kTurnRight=2}.
enum GridAction : int32_t { kLeft = 0, kRight = 1, kUp = 2, kDown = 3, kStay = 4 };
enum TmazeAction : int32_t { kForward = 0, kTurnLeft = 1, kTurnRight = 2 };

struct EnvState {
  // grid
  int32_t x = 0, y = 0;
  bool goal_reached_once = false;
  bool has_key = false;
  bool door_opened = false;
  // tmaze
  int32_t pos = 0;
  // common
  int32_t step = 0;
  bool done = false;
};

struct StepOutcome {
  float reward = 0.0f;
  bool done = false;
};

// Observation is all the agent ever sees: grid -> (x, y); Tmaze ->
// (cell index, oracle signal at cell 0 only, else 0) with signal 1=left,
// 2=right.
std::vector<int32_t> observe(const Task& task, const EnvState& state);

EnvState reset_env(const Task& task);
StepOutcome grid_step(const Task& task, EnvState& state, int32_t action);
StepOutcome tmaze_step(const Task& task, EnvState& state, int32_t action);
StepOutcome env_step(const Task& task, EnvState& state, int32_t action);

// Uniformly samples goal/key/door cells (key != door). `tmaze_horizon` is
// used only for the Tmaze family.
Task sample_task(EnvFamily family, Rng& rng, int32_t tmaze_horizon = 100);

struct EnvMeta {
  int32_t state_dim = 2;
  int32_t n_actions = 5;
  int32_t max_steps = 20;
  std::vector<float> state_scale;  // divides raw observations before embedding
};

EnvMeta env_meta(const Task& task);

// Target returns used by the return-conditioned DT baseline.
double target_return(EnvFamily family);

// Best achievable return from the fixed start, used as the evaluation yardstick.
double optimal_return(const Task& task);

// Deterministic hand-written policy achieving optimal_return().
class ScriptedPolicy {
 public:
  explicit ScriptedPolicy(const Task& task) : task_(task) {}
  void begin_episode() { remembered_side_ = -1; }
  int32_t act(const std::vector<int32_t>& obs, const EnvState& state);

 private:
  Task task_;
  int32_t remembered_side_ = -1;
};

}  // namespace dmh
