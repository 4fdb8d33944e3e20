#pragma once

#include <string>
#include <vector>

#include "dmh/envs.hpp"
#include "dmh/trajectory.hpp"

namespace dmh {

// Offline data for one task: the ordered learning history of a source
// algorithm run on it.
struct TaskHistory {
  Task task;
  std::vector<Trajectory> episodes;
};

using Dataset = std::vector<TaskHistory>;

// Newline-delimited JSON: per task, a header record
//   {"format_version", "env_name", "task_parameters", "num_episodes"}
// followed by num_episodes episode records
//   {"states", "actions", "rewards", "dones"}
// with states flattened row-major. Round trips are byte-exact.
void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace dmh
