#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmh/check.hpp"

namespace dmh {

// Run configuration, sectioned as in the config file format. Defaults are the
// published hyperparameters; the empty file is the standard setup.
struct ModelSection {
  std::string kind = "dmh";  // dmh | ad_transformer | ad_mamba | dt
  int64_t c = 5;
  int64_t n = 10;
  int64_t embed_dim = 128;
  int64_t mamba_layers = 2;
  int64_t state_size = 16;
  int64_t tf_layers = 3;
  int64_t tf_heads = 3;
  double dropout = 0.1;
  int64_t segments_per_item = 0;  // 0 = one local segment per block
  bool use_valuable_subgoals = true;
  // Softmax temperature for online action sampling. Values below 1 sharpen an
  // already-peaked prediction (exploitation) while leaving a near-uniform
  // prediction (exploration) essentially unchanged.
  double action_temperature = 0.5;
};

struct DataSection {
  std::string env = "darkroom";
  int64_t tasks = 60;
  int64_t steps_per_task = 50000;
  int64_t tmaze_horizon = 100;
  int64_t tmaze_episodes = 400;
  double optimal_fraction = 0.5;
};

struct TrainSection {
  int64_t iterations = 5000;
  int64_t batch_size = 128;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double clip_norm = 0.25;
  int64_t warmup_steps = 100000;
  int64_t seed = 0;
};

struct EvalSection {
  int64_t episodes = 20;
  int64_t tasks = 10;
  int64_t seed = 0;
};

struct RunConfig {
  ModelSection model;
  DataSection data;
  TrainSection train;
  EvalSection eval;
};

// Config file format: a TOML subset with [model] [data] [train] [eval]
// sections, `key = value` lines, and `#` comments. Strings may be bare or
// double-quoted; booleans are true/false. Unknown sections or keys are
// rejected. Precedence: defaults, then file, then dotted overrides
// ("train.lr=2e-4").
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::string>& overrides = {},
                            const std::string& origin = "<config>");

// Fully resolved config in the same file format; parses back identically.
std::string render_config(const RunConfig& cfg);

}  // namespace dmh
