#pragma once

// Adaptive-moment (Adam) parameter updates.

#include <cmath>
#include <span>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/nn/layers.hpp"

namespace xscene::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, learning_rate, beta1, beta2, epsilon)

struct OptimizerState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
};

/// One update of every parameter from its accumulated gradient. Moment
/// buffers are created on the first call and must keep mirroring `params`.
inline void optimizer_step(std::span<Parameter* const> params, OptimizerState& state) {
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->value.size(), 0.0);
      state.second_moment.emplace_back(p->value.size(), 0.0);
    }
  }
  require(state.first_moment.size() == params.size(), ErrorKind::usage,
          "optimizer_step: parameter list changed since the optimizer state was created");
  ++state.step;
  const auto& c = state.config;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k]->value.data();
    auto grads = params[k]->value.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    require(m.size() == values.size() && grads.size() == values.size(), ErrorKind::usage,
            "optimizer_step: moment shape does not mirror parameter " + params[k]->name);
    const double step = c.learning_rate / bias1;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      values[i] -= step * m[i] / (std::sqrt(v[i] / bias2) + c.epsilon);
    }
  }
}

}  // namespace xscene::nn
