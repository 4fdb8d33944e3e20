#include "dmh/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace dmh {

std::string env_family_name(EnvFamily f) {
  switch (f) {
    case EnvFamily::kDarkroom: return "darkroom";
    case EnvFamily::kDarkroomHard: return "darkroom_hard";
    case EnvFamily::kDarkKeyToDoor: return "dark_key_to_door";
    case EnvFamily::kLargeDarkroom: return "large_darkroom";
    case EnvFamily::kLargeDarkroomHard: return "large_darkroom_hard";
    case EnvFamily::kLargeDarkKeyToDoor: return "large_dark_key_to_door";
    case EnvFamily::kTmaze: return "tmaze";
  }
  throw ContractError("unknown env family");
}

EnvFamily parse_env_family(const std::string& name) {
  for (EnvFamily f : {EnvFamily::kDarkroom, EnvFamily::kDarkroomHard,
                      EnvFamily::kDarkKeyToDoor, EnvFamily::kLargeDarkroom,
                      EnvFamily::kLargeDarkroomHard, EnvFamily::kLargeDarkKeyToDoor,
                      EnvFamily::kTmaze})
    if (env_family_name(f) == name) return f;
  throw ConfigError("unknown environment: " + name);
}

bool is_grid_family(EnvFamily f) { return f != EnvFamily::kTmaze; }

std::vector<int32_t> observe(const Task& task, const EnvState& state) {
  if (task.family == EnvFamily::kTmaze) {
    int32_t signal = state.pos == 0 ? task.oracle_side + 1 : 0;
    return {state.pos, signal};
  }
  return {state.x, state.y};
}

EnvState reset_env(const Task& task) {
  EnvState s;
  if (is_grid_family(task.family)) {
    // fixed start at the room center
    s.x = task.width / 2;
    s.y = task.height / 2;
  }
  return s;
}

StepOutcome grid_step(const Task& task, EnvState& state, int32_t action) {
  DMH_CHECK(is_grid_family(task.family), "grid_step on non-grid task");
  DMH_CHECK(!state.done, "step after episode end");
  DMH_CHECK(action >= 0 && action <= kStay, "invalid grid action ", action);
  switch (action) {
    case kLeft: state.x = std::max(0, state.x - 1); break;
    case kRight: state.x = std::min(task.width - 1, state.x + 1); break;
    case kUp: state.y = std::max(0, state.y - 1); break;
    case kDown: state.y = std::min(task.height - 1, state.y + 1); break;
    case kStay: break;
  }
  StepOutcome out;
  switch (task.family) {
    case EnvFamily::kDarkroom:
    case EnvFamily::kLargeDarkroom:
      if (state.x == task.goal_x && state.y == task.goal_y) out.reward = 1.0f;
      break;
    case EnvFamily::kDarkroomHard:
    case EnvFamily::kLargeDarkroomHard:
      if (state.x == task.goal_x && state.y == task.goal_y && !state.goal_reached_once) {
        out.reward = 1.0f;
        state.goal_reached_once = true;
      }
      break;
    default:  // key-to-door
      if (!state.has_key && state.x == task.key_x && state.y == task.key_y) {
        out.reward = 1.0f;
        state.has_key = true;
      } else if (state.has_key && !state.door_opened && state.x == task.door_x &&
                 state.y == task.door_y) {
        out.reward = 1.0f;
        state.door_opened = true;
      }
      break;
  }
  ++state.step;
  state.done = state.step >= task.episode_len;
  out.done = state.done;
  return out;
}

StepOutcome tmaze_step(const Task& task, EnvState& state, int32_t action) {
  DMH_CHECK(task.family == EnvFamily::kTmaze, "tmaze_step on non-tmaze task");
  DMH_CHECK(!state.done, "step after episode end");
  DMH_CHECK(action >= 0 && action <= kTurnRight, "invalid tmaze action ", action);
  int32_t junction = task.horizon - 2;  // corridor cells 0..H-2
  StepOutcome out;
  ++state.step;
  state.done = state.step >= task.horizon;
  if (action == kForward) {
    state.pos = std::min(junction, state.pos + 1);
  } else if (state.done && state.pos == junction) {
    int32_t turned = action == kTurnLeft ? 0 : 1;
    if (turned == task.oracle_side) out.reward = 1.0f;
  }
  out.done = state.done;
  return out;
}

StepOutcome env_step(const Task& task, EnvState& state, int32_t action) {
  return task.family == EnvFamily::kTmaze ? tmaze_step(task, state, action)
                                          : grid_step(task, state, action);
}

Task sample_task(EnvFamily family, Rng& rng, int32_t tmaze_horizon) {
  Task t;
  t.family = family;
  if (family == EnvFamily::kTmaze) {
    DMH_CHECK(tmaze_horizon >= 3, "tmaze horizon must be >= 3");
    t.horizon = tmaze_horizon;
    t.oracle_side = static_cast<int32_t>(rng.uniform_int(2));
    return t;
  }
  bool large = family == EnvFamily::kLargeDarkroom ||
               family == EnvFamily::kLargeDarkroomHard ||
               family == EnvFamily::kLargeDarkKeyToDoor;
  t.width = t.height = large ? 40 : 9;
  bool k2d = family == EnvFamily::kDarkKeyToDoor || family == EnvFamily::kLargeDarkKeyToDoor;
  t.episode_len = (k2d ? 50 : 20) * (large ? 10 : 1);
  if (k2d) {
    t.key_x = static_cast<int32_t>(rng.uniform_int(t.width));
    t.key_y = static_cast<int32_t>(rng.uniform_int(t.height));
    do {
      t.door_x = static_cast<int32_t>(rng.uniform_int(t.width));
      t.door_y = static_cast<int32_t>(rng.uniform_int(t.height));
    } while (t.door_x == t.key_x && t.door_y == t.key_y);
  } else {
    t.goal_x = static_cast<int32_t>(rng.uniform_int(t.width));
    t.goal_y = static_cast<int32_t>(rng.uniform_int(t.height));
  }
  return t;
}

EnvMeta env_meta(const Task& task) {
  EnvMeta m;
  m.state_dim = 2;
  if (task.family == EnvFamily::kTmaze) {
    m.n_actions = 3;
    m.max_steps = task.horizon;
    m.state_scale = {static_cast<float>(task.horizon), 2.0f};
  } else {
    m.n_actions = 5;
    m.max_steps = task.episode_len;
    m.state_scale = {static_cast<float>(task.width), static_cast<float>(task.height)};
  }
  return m;
}

double target_return(EnvFamily family) {
  switch (family) {
    case EnvFamily::kDarkroom: return 20.0;
    case EnvFamily::kDarkroomHard: return 1.0;
    case EnvFamily::kDarkKeyToDoor: return 2.0;
    case EnvFamily::kLargeDarkroom: return 15.0;
    case EnvFamily::kLargeDarkroomHard: return 1.0;
    case EnvFamily::kLargeDarkKeyToDoor: return 2.0;
    case EnvFamily::kTmaze: return 1.0;
  }
  throw ContractError("unknown env family");
}

namespace {
int32_t manhattan(int32_t x0, int32_t y0, int32_t x1, int32_t y1) {
  return std::abs(x0 - x1) + std::abs(y0 - y1);
}
}  // namespace

double optimal_return(const Task& task) {
  if (task.family == EnvFamily::kTmaze) return 1.0;
  int32_t sx = task.width / 2, sy = task.height / 2;
  switch (task.family) {
    case EnvFamily::kDarkroom:
    case EnvFamily::kLargeDarkroom: {
      // rewards accrue on every step spent on the goal, including arrival
      int32_t d = std::max(1, manhattan(sx, sy, task.goal_x, task.goal_y));
      return std::max(0, task.episode_len - d + 1);
    }
    case EnvFamily::kDarkroomHard:
    case EnvFamily::kLargeDarkroomHard: {
      int32_t d = std::max(1, manhattan(sx, sy, task.goal_x, task.goal_y));
      return d <= task.episode_len ? 1.0 : 0.0;
    }
    default: {
      int32_t d = std::max(1, manhattan(sx, sy, task.key_x, task.key_y));
      int32_t d2 = manhattan(task.key_x, task.key_y, task.door_x, task.door_y);
      if (d + d2 <= task.episode_len) return 2.0;
      return d <= task.episode_len ? 1.0 : 0.0;
    }
  }
}

int32_t ScriptedPolicy::act(const std::vector<int32_t>& obs, const EnvState& state) {
  if (task_.family == EnvFamily::kTmaze) {
    if (obs[0] == 0 && obs[1] != 0) remembered_side_ = obs[1] - 1;
    int32_t junction = task_.horizon - 2;
    bool final_step = state.step == task_.horizon - 1;
    if (final_step && state.pos == junction)
      return remembered_side_ == 0 ? kTurnLeft : kTurnRight;
    return kForward;
  }
  int32_t tx, ty;
  switch (task_.family) {
    case EnvFamily::kDarkKeyToDoor:
    case EnvFamily::kLargeDarkKeyToDoor:
      tx = state.has_key ? task_.door_x : task_.key_x;
      ty = state.has_key ? task_.door_y : task_.key_y;
      break;
    default:
      tx = task_.goal_x;
      ty = task_.goal_y;
      break;
  }
  if (obs[0] < tx) return kRight;
  if (obs[0] > tx) return kLeft;
  if (obs[1] < ty) return kDown;
  if (obs[1] > ty) return kUp;
  return kStay;
}

}  // namespace dmh
