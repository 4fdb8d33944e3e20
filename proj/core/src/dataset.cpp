#include "dmh/dataset.hpp"

#include <fstream>

#include <json.hpp>

namespace dmh {

namespace {

constexpr int kFormatVersion = 1;

using nlohmann::json;

json task_to_json(const Task& t) {
  json j;
  if (t.family == EnvFamily::kTmaze) {
    j["horizon"] = t.horizon;
    j["oracle_side"] = t.oracle_side;
    return j;
  }
  j["width"] = t.width;
  j["height"] = t.height;
  j["episode_len"] = t.episode_len;
  if (t.family == EnvFamily::kDarkKeyToDoor || t.family == EnvFamily::kLargeDarkKeyToDoor) {
    j["key_x"] = t.key_x;
    j["key_y"] = t.key_y;
    j["door_x"] = t.door_x;
    j["door_y"] = t.door_y;
  } else {
    j["goal_x"] = t.goal_x;
    j["goal_y"] = t.goal_y;
  }
  return j;
}

Task task_from_json(EnvFamily family, const json& j) {
  Task t;
  t.family = family;
  if (family == EnvFamily::kTmaze) {
    t.horizon = j.at("horizon").get<int32_t>();
    t.oracle_side = j.at("oracle_side").get<int32_t>();
    return t;
  }
  t.width = j.at("width").get<int32_t>();
  t.height = j.at("height").get<int32_t>();
  t.episode_len = j.at("episode_len").get<int32_t>();
  if (family == EnvFamily::kDarkKeyToDoor || family == EnvFamily::kLargeDarkKeyToDoor) {
    t.key_x = j.at("key_x").get<int32_t>();
    t.key_y = j.at("key_y").get<int32_t>();
    t.door_x = j.at("door_x").get<int32_t>();
    t.door_y = j.at("door_y").get<int32_t>();
  } else {
    t.goal_x = j.at("goal_x").get<int32_t>();
    t.goal_y = j.at("goal_y").get<int32_t>();
  }
  return t;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  DMH_CHECK_T(ParseError, out.good(), "cannot open ", path, " for writing");
  for (const auto& hist : dataset) {
    json header;
    header["format_version"] = kFormatVersion;
    header["env_name"] = env_family_name(hist.task.family);
    header["task_parameters"] = task_to_json(hist.task);
    header["num_episodes"] = hist.episodes.size();
    out << header.dump() << "\n";
    for (const auto& ep : hist.episodes) {
      json rec;
      auto& states = rec["states"] = json::array();
      auto& actions = rec["actions"] = json::array();
      auto& rewards = rec["rewards"] = json::array();
      auto& dones = rec["dones"] = json::array();
      for (const auto& s : ep.steps) {
        for (int32_t v : s.state) states.push_back(v);
        actions.push_back(s.action);
        rewards.push_back(static_cast<double>(s.reward));
        dones.push_back(s.done);
      }
      out << rec.dump() << "\n";
    }
  }
  DMH_CHECK_T(ParseError, out.good(), "write to ", path, " failed");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  DMH_CHECK_T(ParseError, in.good(), "cannot open ", path);
  Dataset dataset;
  std::string line;
  int64_t line_no = 0;
  int64_t episodes_pending = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (episodes_pending == 0) {
        int version = j.at("format_version").get<int>();
        if (version != kFormatVersion)
          throw ParseError(path + ":" + std::to_string(line_no) +
                           ": unsupported format_version " + std::to_string(version));
        TaskHistory hist;
        hist.task = task_from_json(parse_env_family(j.at("env_name").get<std::string>()),
                                   j.at("task_parameters"));
        episodes_pending = j.at("num_episodes").get<int64_t>();
        dataset.push_back(std::move(hist));
      } else {
        auto& hist = dataset.back();
        EnvMeta meta = env_meta(hist.task);
        const auto& states = j.at("states");
        const auto& actions = j.at("actions");
        const auto& rewards = j.at("rewards");
        const auto& dones = j.at("dones");
        size_t T = actions.size();
        if (rewards.size() != T || dones.size() != T ||
            states.size() != T * static_cast<size_t>(meta.state_dim))
          throw ParseError(path + ":" + std::to_string(line_no) +
                           ": inconsistent episode record lengths");
        std::vector<Step> steps(T);
        for (size_t t = 0; t < T; ++t) {
          steps[t].state.resize(static_cast<size_t>(meta.state_dim));
          for (int d = 0; d < meta.state_dim; ++d)
            steps[t].state[static_cast<size_t>(d)] =
                states.at(t * static_cast<size_t>(meta.state_dim) + static_cast<size_t>(d))
                    .get<int32_t>();
          steps[t].action = actions.at(t).get<int32_t>();
          steps[t].reward = static_cast<float>(rewards.at(t).get<double>());
          steps[t].done = dones.at(t).get<int32_t>();
        }
        hist.episodes.push_back(Trajectory::from_steps(std::move(steps)));
        --episodes_pending;
      }
    } catch (const ParseError&) {
      throw;
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (episodes_pending != 0)
    throw ParseError(path + ": truncated file, " + std::to_string(episodes_pending) +
                     " episode records missing");
  return dataset;
}

}  // namespace dmh
