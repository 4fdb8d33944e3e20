#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dmh/datagen.hpp"
#include "dmh/dataset.hpp"
#include "dmh/envs.hpp"
#include "dmh/rng.hpp"

using namespace dmh;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/dmh_test_") + name;
}

double mean_return(const std::vector<Trajectory>& eps, size_t lo, size_t hi) {
  double s = 0;
  for (size_t i = lo; i < hi; ++i) s += eps[i].total_return;
  return s / static_cast<double>(hi - lo);
}

}  // namespace

TEST_CASE("q-learning histories improve over the run") {
  Rng rng(50);
  Task t = sample_task(EnvFamily::kDarkroom, rng);
  Rng qrng(1);
  auto hist = collect_history(t, 50000, qrng);
  REQUIRE(hist.episodes.size() >= 100);
  size_t n = hist.episodes.size();
  double early = mean_return(hist.episodes, 0, n / 4);
  double late = mean_return(hist.episodes, n - n / 4, n);
  CHECK(late > early);
  // the late policy should be close to scripted-optimal
  CHECK(late > 0.5 * optimal_return(t));
}

TEST_CASE("history collection is deterministic in the seed") {
  Rng rng(51);
  Task t = sample_task(EnvFamily::kDarkroomHard, rng);
  Rng a(3), b(3);
  auto h1 = collect_history(t, 3000, a);
  auto h2 = collect_history(t, 3000, b);
  REQUIRE(h1.episodes.size() == h2.episodes.size());
  for (size_t i = 0; i < h1.episodes.size(); ++i) {
    CHECK(h1.episodes[i].total_return == h2.episodes[i].total_return);
    REQUIRE(h1.episodes[i].steps.size() == h2.episodes[i].steps.size());
    for (size_t s = 0; s < h1.episodes[i].steps.size(); ++s) {
      CHECK(h1.episodes[i].steps[s].action == h2.episodes[i].steps[s].action);
      CHECK(h1.episodes[i].steps[s].state == h2.episodes[i].steps[s].state);
    }
  }
}

TEST_CASE("a one-episode budget yields exactly one episode") {
  Rng rng(52);
  Task t = sample_task(EnvFamily::kDarkroom, rng);
  Rng qrng(1);
  auto hist = collect_history(t, 1, qrng);  // rounded up to a whole episode
  CHECK(hist.episodes.size() == 1);
  CHECK(hist.episodes[0].length() == t.episode_len);
}

TEST_CASE("episode records are well-formed transitions") {
  Rng rng(53);
  Task t = sample_task(EnvFamily::kDarkKeyToDoor, rng);
  Rng qrng(2);
  auto hist = collect_history(t, 2000, qrng);
  for (const auto& ep : hist.episodes) {
    REQUIRE(ep.length() == t.episode_len);
    for (int64_t i = 0; i < ep.length(); ++i) {
      const auto& st = ep.steps[static_cast<size_t>(i)];
      CHECK(st.state.size() == 2);
      CHECK(st.action >= 0);
      CHECK(st.action < 5);
      CHECK(st.done == (i + 1 == ep.length() ? 1 : 0));
    }
  }
}

TEST_CASE("tmaze mixture respects the optimal fraction") {
  Rng rng(54);
  Task t = sample_task(EnvFamily::kTmaze, rng, 10);
  Rng a(5);
  auto all_opt = collect_tmaze_data(t, 40, 1.0, a);
  REQUIRE(all_opt.episodes.size() == 40);
  for (const auto& ep : all_opt.episodes) CHECK(ep.total_return == doctest::Approx(1.0));

  Rng b(5);
  auto none_opt = collect_tmaze_data(t, 200, 0.0, b);
  REQUIRE(none_opt.episodes.size() == 200);
  double mean = mean_return(none_opt.episodes, 0, none_opt.episodes.size());
  CHECK(mean < 0.9);  // a random policy rarely reaches and matches the turn

  Rng c(5);
  auto half = collect_tmaze_data(t, 100, 0.5, c);
  int optimal = 0;
  for (const auto& ep : half.episodes)
    if (ep.total_return == doctest::Approx(1.0)) ++optimal;
  CHECK(optimal >= 50);  // at least the scripted half succeeds
}

TEST_CASE("dataset round trips byte-identically") {
  Rng rng(55);
  Dataset ds;
  for (int i = 0; i < 3; ++i) {
    Task t = sample_task(EnvFamily::kDarkroom, rng);
    Rng qrng(static_cast<uint64_t>(i));
    ds.push_back(collect_history(t, 500, qrng));
  }
  auto p1 = temp_path("roundtrip1.jsonl");
  auto p2 = temp_path("roundtrip2.jsonl");
  write_dataset(ds, p1);
  auto back = read_dataset(p1);
  write_dataset(back, p2);
  std::ifstream f1(p1), f2(p2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  CHECK(!s1.str().empty());
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].task.goal_x == ds[i].task.goal_x);
    REQUIRE(back[i].episodes.size() == ds[i].episodes.size());
    CHECK(back[i].episodes[0].steps[0].state == ds[i].episodes[0].steps[0].state);
  }
}

TEST_CASE("a sixty-task dataset loads with sixty headers") {
  Rng rng(56);
  Dataset ds;
  for (int i = 0; i < 60; ++i) {
    TaskHistory h;
    h.task = sample_task(EnvFamily::kDarkroom, rng);
    std::vector<Step> steps(2);
    steps[0].state = {1, 1};
    steps[1].state = {2, 2};
    steps[1].done = 1;
    h.episodes.push_back(Trajectory::from_steps(std::move(steps)));
    ds.push_back(std::move(h));
  }
  auto p = temp_path("sixty.jsonl");
  write_dataset(ds, p);
  auto back = read_dataset(p);
  CHECK(back.size() == 60);
  for (const auto& h : back) CHECK(h.episodes.size() == 1);
  std::remove(p.c_str());
}

TEST_CASE("truncated dataset files are rejected") {
  Rng rng(57);
  Dataset ds;
  Task t = sample_task(EnvFamily::kDarkroom, rng);
  Rng qrng(1);
  ds.push_back(collect_history(t, 100, qrng));
  auto p = temp_path("trunc.jsonl");
  write_dataset(ds, p);
  std::ifstream in(p);
  std::stringstream buf;
  buf << in.rdbuf();
  in.close();
  std::string text = buf.str();
  std::ofstream out(p);
  out << text.substr(0, text.size() / 2);
  out.close();
  CHECK_THROWS_AS(read_dataset(p), ParseError);
  std::remove(p.c_str());
}

TEST_CASE("missing dataset files are rejected") {
  CHECK_THROWS_AS(read_dataset("/tmp/dmh_test_does_not_exist.jsonl"), ParseError);
}
