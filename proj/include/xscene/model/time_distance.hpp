#pragma once

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "xscene/common/error.hpp"

namespace xscene::model {

struct TimeDistanceConfig {
  double period = 1440.0;          // minutes; one simulated day
  double decay_c = std::numbers::ln2;  // per minute: latent weight halves per map interval
  double lambda = 0.1;

  void validate() const {
    require(period > 0.0, ErrorKind::config, "time distance: period must be positive");
    require(decay_c >= 0.0, ErrorKind::config, "time distance: decay_c must be non-negative");
    require(lambda >= 0.0, ErrorKind::config, "time distance: lambda must be non-negative");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TimeDistanceConfig, period, decay_c, lambda)

/// Periodic time difference in [0, period/2].
inline double dis(double t1, double t2, const TimeDistanceConfig& cfg) {
  require(cfg.period > 0.0, ErrorKind::config, "dis: period must be positive");
  const double d = std::fmod(std::abs(t1 - t2), cfg.period);
  return std::min(d, cfg.period - d);
}

/// Signed offset from `from` to `to`, wrapped into [-period/2, period/2].
inline double signed_offset(double from, double to, const TimeDistanceConfig& cfg) {
  double d = std::fmod(to - from, cfg.period);
  if (d > cfg.period / 2.0) d -= cfg.period;
  if (d < -cfg.period / 2.0) d += cfg.period;
  return d;
}

inline double latent_weight(double delta_t, const TimeDistanceConfig& cfg) { return std::exp(-cfg.decay_c * delta_t); }

}  // namespace xscene::model
