#include <doctest.h>

#include <vector>

#include "dmh/envs.hpp"
#include "dmh/rng.hpp"

using namespace dmh;

namespace {

// Rolls out the scripted policy and returns the episode return.
double scripted_return(const Task& task) {
  ScriptedPolicy pol(task);
  pol.begin_episode();
  EnvState s = reset_env(task);
  double ret = 0.0;
  while (!s.done) {
    auto obs = observe(task, s);
    auto out = env_step(task, s, pol.act(obs, s));
    ret += out.reward;
  }
  return ret;
}

}  // namespace

TEST_CASE("family names round trip") {
  for (EnvFamily f : {EnvFamily::kDarkroom, EnvFamily::kDarkroomHard,
                      EnvFamily::kDarkKeyToDoor, EnvFamily::kLargeDarkroom,
                      EnvFamily::kLargeDarkroomHard, EnvFamily::kLargeDarkKeyToDoor,
                      EnvFamily::kTmaze})
    CHECK(parse_env_family(env_family_name(f)) == f);
  CHECK_THROWS_AS(parse_env_family("bogus"), ConfigError);
}

TEST_CASE("grid episodes start at the room center and observations hide the goal") {
  Task a;
  a.goal_x = 1;
  a.goal_y = 2;
  Task b;
  b.goal_x = 7;
  b.goal_y = 8;
  auto sa = reset_env(a);
  auto sb = reset_env(b);
  CHECK(sa.x == 4);
  CHECK(sa.y == 4);
  CHECK(observe(a, sa) == observe(b, sb));  // identical until rewards reveal the task
}

TEST_CASE("grid moves are clipped at the walls") {
  Task t;
  EnvState s = reset_env(t);
  for (int i = 0; i < 6; ++i) grid_step(t, s, kLeft);
  CHECK(s.x == 0);
  CHECK(s.y == 4);
}

TEST_CASE("darkroom pays on every step spent on the goal") {
  Task t;
  t.goal_x = 5;
  t.goal_y = 4;  // one step right of the center
  EnvState s = reset_env(t);
  auto o1 = grid_step(t, s, kRight);
  CHECK(o1.reward == 1.0f);
  auto o2 = grid_step(t, s, kStay);
  CHECK(o2.reward == 1.0f);
}

TEST_CASE("darkroom hard pays exactly once") {
  Task t;
  t.family = EnvFamily::kDarkroomHard;
  t.goal_x = 5;
  t.goal_y = 4;
  EnvState s = reset_env(t);
  CHECK(grid_step(t, s, kRight).reward == 1.0f);
  CHECK(grid_step(t, s, kStay).reward == 0.0f);
  CHECK(grid_step(t, s, kLeft).reward == 0.0f);
  CHECK(grid_step(t, s, kRight).reward == 0.0f);  // returning pays nothing
}

TEST_CASE("key-to-door pays for the key then the door, in order") {
  Task t;
  t.family = EnvFamily::kDarkKeyToDoor;
  t.episode_len = 50;
  t.key_x = 5;
  t.key_y = 4;
  t.door_x = 6;
  t.door_y = 4;
  EnvState s = reset_env(t);
  // walking to the door first pays nothing
  CHECK(grid_step(t, s, kRight).reward == 1.0f);  // key
  CHECK(grid_step(t, s, kRight).reward == 1.0f);  // door with key in hand
  CHECK(grid_step(t, s, kLeft).reward == 0.0f);
  CHECK(grid_step(t, s, kRight).reward == 0.0f);  // door opens only once

  EnvState s2 = reset_env(t);
  grid_step(t, s2, kRight);  // key cell
  EnvState s3 = reset_env(t);
  s3.x = 6;  // on the door without the key
  CHECK(grid_step(t, s3, kStay).reward == 0.0f);
}

TEST_CASE("episodes end exactly at the episode length") {
  Task t;
  EnvState s = reset_env(t);
  for (int i = 0; i < 19; ++i) CHECK_FALSE(grid_step(t, s, kStay).done);
  CHECK(grid_step(t, s, kStay).done);
  CHECK_THROWS_AS(grid_step(t, s, kStay), ContractError);
}

TEST_CASE("tmaze oracle is visible only at cell zero") {
  Task t;
  t.family = EnvFamily::kTmaze;
  t.horizon = 10;
  t.oracle_side = 1;
  EnvState s = reset_env(t);
  auto obs0 = observe(t, s);
  CHECK(obs0[0] == 0);
  CHECK(obs0[1] == 2);  // right
  tmaze_step(t, s, kForward);
  auto obs1 = observe(t, s);
  CHECK(obs1[0] == 1);
  CHECK(obs1[1] == 0);  // hidden away from the oracle cell
}

TEST_CASE("tmaze rewards the matching final turn only") {
  for (int32_t side : {0, 1}) {
    Task t;
    t.family = EnvFamily::kTmaze;
    t.horizon = 6;
    t.oracle_side = side;
    EnvState s = reset_env(t);
    double ret = 0.0;
    for (int i = 0; i < 5; ++i) ret += tmaze_step(t, s, kForward).reward;
    CHECK(ret == 0.0);
    auto out = tmaze_step(t, s, side == 0 ? kTurnLeft : kTurnRight);
    CHECK(out.done);
    CHECK(out.reward == 1.0f);

    EnvState s2 = reset_env(t);
    for (int i = 0; i < 5; ++i) tmaze_step(t, s2, kForward);
    CHECK(tmaze_step(t, s2, side == 0 ? kTurnRight : kTurnLeft).reward == 0.0f);
  }
}

TEST_CASE("scripted policy achieves the optimal return on every family") {
  Rng rng(40);
  for (EnvFamily f : {EnvFamily::kDarkroom, EnvFamily::kDarkroomHard,
                      EnvFamily::kDarkKeyToDoor, EnvFamily::kLargeDarkroom,
                      EnvFamily::kLargeDarkroomHard, EnvFamily::kLargeDarkKeyToDoor,
                      EnvFamily::kTmaze}) {
    for (int rep = 0; rep < 10; ++rep) {
      Task t = sample_task(f, rng, /*tmaze_horizon=*/12);
      CHECK(scripted_return(t) == doctest::Approx(optimal_return(t)));
    }
  }
}

TEST_CASE("optimal returns match hand-computed values") {
  Task hard;
  hard.family = EnvFamily::kDarkroomHard;
  hard.goal_x = 0;
  hard.goal_y = 0;
  CHECK(optimal_return(hard) == 1.0);

  Task k2d;
  k2d.family = EnvFamily::kDarkKeyToDoor;
  k2d.episode_len = 50;
  k2d.key_x = 1;
  k2d.key_y = 1;
  k2d.door_x = 8;
  k2d.door_y = 8;
  CHECK(optimal_return(k2d) == 2.0);

  Task tm;
  tm.family = EnvFamily::kTmaze;
  CHECK(optimal_return(tm) == 1.0);

  Task dr;
  dr.goal_x = 4;
  dr.goal_y = 5;  // one step away from (4,4)
  CHECK(optimal_return(dr) == 20.0);
  Task dr2;
  dr2.goal_x = 0;
  dr2.goal_y = 0;  // eight steps away
  CHECK(optimal_return(dr2) == 13.0);
  CHECK(optimal_return(dr) <= dr.episode_len);
}

TEST_CASE("task sampling is deterministic, in-bounds, and keeps key and door apart") {
  Rng a(7), b(7);
  for (int rep = 0; rep < 50; ++rep) {
    auto t1 = sample_task(EnvFamily::kLargeDarkKeyToDoor, a);
    auto t2 = sample_task(EnvFamily::kLargeDarkKeyToDoor, b);
    CHECK(t1.key_x == t2.key_x);
    CHECK(t1.door_y == t2.door_y);
    CHECK(t1.width == 40);
    CHECK(t1.height == 40);
    CHECK(t1.episode_len == 500);
    CHECK(t1.key_x >= 0);
    CHECK(t1.key_x < 40);
    CHECK(t1.door_x >= 0);
    CHECK(t1.door_x < 40);
    CHECK((t1.key_x != t1.door_x || t1.key_y != t1.door_y));
  }
  auto g = sample_task(EnvFamily::kDarkroom, a);
  CHECK(g.width == 9);
  CHECK(g.episode_len == 20);
  CHECK(g.goal_x >= 0);
  CHECK(g.goal_x < 9);
}

TEST_CASE("env metadata reflects the family") {
  Task t;
  auto m = env_meta(t);
  CHECK(m.state_dim == 2);
  CHECK(m.n_actions == 5);
  CHECK(m.max_steps == 20);
  CHECK(m.state_scale == std::vector<float>{9.0f, 9.0f});

  Task tm;
  tm.family = EnvFamily::kTmaze;
  tm.horizon = 300;
  auto mm = env_meta(tm);
  CHECK(mm.n_actions == 3);
  CHECK(mm.max_steps == 300);
  CHECK(mm.state_scale[0] == 300.0f);
}
