#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dmh/rng.hpp"
#include "dmh/tensor.hpp"
#include "dmh/trajectory.hpp"

namespace dmh_test {

// Central-difference gradient check in double precision. `loss_fn` recomputes
// the scalar loss from the current parameter values. Checks up to
// `max_per_tensor` randomly chosen coordinates per parameter and returns the
// maximum relative error observed.
inline double gradcheck(std::vector<dmh::Tensor<double>> params,
                        const std::function<dmh::Tensor<double>()>& loss_fn,
                        dmh::Rng& rng, int64_t max_per_tensor = 24,
                        double h = 1e-4) {
  for (auto& p : params) p.zero_grad();
  auto loss = loss_fn();
  dmh::backward(loss);
  double max_rel = 0.0;
  for (auto& p : params) {
    int64_t n = p.size();
    std::vector<int64_t> coords;
    if (n <= max_per_tensor) {
      for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int64_t k = 0; k < max_per_tensor; ++k) coords.push_back(rng.uniform_int(n));
    }
    for (int64_t i : coords) {
      double saved = p.data()[i];
      double fd;
      {
        dmh::NoGradGuard guard;
        p.data()[i] = saved + h;
        double up = loss_fn().item();
        p.data()[i] = saved - h;
        double dn = loss_fn().item();
        p.data()[i] = saved;
        fd = (up - dn) / (2.0 * h);
      }
      double an = p.grad()[i];
      double denom = std::abs(an) + std::abs(fd);
      double rel = denom > 1e-6 ? std::abs(an - fd) / denom : std::abs(an - fd);
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

// Random trajectory whose rewards/states exercise ties and zero stretches.
inline dmh::Trajectory random_traj(dmh::Rng& rng, int64_t T, int32_t n_actions = 5,
                                   int32_t coord_range = 9) {
  std::vector<dmh::Step> steps(static_cast<size_t>(T));
  for (int64_t t = 0; t < T; ++t) {
    auto& s = steps[static_cast<size_t>(t)];
    s.state = {static_cast<int32_t>(rng.uniform_int(coord_range)),
               static_cast<int32_t>(rng.uniform_int(coord_range))};
    s.action = static_cast<int32_t>(rng.uniform_int(n_actions));
    double roll = rng.uniform();
    s.reward = roll < 0.5 ? 0.0f : (roll < 0.8 ? 1.0f : static_cast<float>(rng.uniform_int(4)));
    s.done = t + 1 == T ? 1 : 0;
  }
  return dmh::Trajectory::from_steps(std::move(steps));
}

}  // namespace dmh_test
