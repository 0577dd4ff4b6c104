#pragma once

// Map-difference metrics and the simulation-based dataset variance.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/control/series.hpp"
#include "xscene/mapgen/ogm.hpp"
#include "xscene/sim/layout.hpp"
#include "xscene/sim/simulation.hpp"

namespace xscene::eval {

/// Mean over all W*H*C entries of the squared difference.
inline double mse(const mapgen::SceneMap& s1, const mapgen::SceneMap& s2) {
  mapgen::require_same_shape(s1, s2, "mse");
  double sum = 0.0;
  for (std::size_t i = 0; i < s1.data.size(); ++i) {
    const double d = s1.data[i] - s2.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(s1.data.size());
}

inline double prediction_error(const mapgen::SceneMap& pred, const mapgen::SceneMap& truth) { return mse(pred, truth); }

/// Mean map of a sample, then the mean MSE of every member to it.
inline double map_variance(std::span<const mapgen::SceneMap> maps) {
  require(!maps.empty(), ErrorKind::input, "map_variance: empty sample");
  mapgen::SceneMap mean = maps.front();
  std::fill(mean.data.begin(), mean.data.end(), 0.0);
  for (const auto& m : maps) {
    mapgen::require_same_shape(mean, m, "map_variance");
    for (std::size_t i = 0; i < m.data.size(); ++i) mean.data[i] += m.data[i];
  }
  for (auto& v : mean.data) v /= static_cast<double>(maps.size());
  double v = 0.0;
  for (const auto& m : maps) v += mse(m, mean);
  return v / static_cast<double>(maps.size());
}

struct VarianceConfig {
  int simulations = 3;    // n
  int windows = 3;        // m
  int sample_times = 24;  // spread evenly over the series
  std::uint64_t seed = 101;

  void validate() const {
    require(simulations >= 1 && windows >= 1 && sample_times >= 1, ErrorKind::config,
            "variance: simulations, windows and sample_times must be positive");
    require(simulations >= 2 || windows >= 2, ErrorKind::config, "variance: need n >= 2 or m >= 2");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VarianceConfig, simulations, windows, sample_times, seed)

struct SeriesVariance {
  std::vector<double> minutes;  // sampled times, wall clock
  std::vector<double> v_s;      // per sampled time
  double v_c = 0.0;             // mean over sampled times
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SeriesVariance, minutes, v_s, v_c)

/// Sampled time k sits at the middle of minute floor((k + 0.5) * span / count).
inline std::vector<std::size_t> variance_sample_minutes(std::size_t span_minutes, int count) {
  std::vector<std::size_t> out;
  for (int k = 0; k < count; ++k)
    out.push_back(static_cast<std::size_t>((k + 0.5) * static_cast<double>(span_minutes) / count));
  return out;
}

/// Inherent map randomness of one control series. For every sampled time t
/// (frame i_t at the middle of its minute), `simulations` independently seeded
/// runs each contribute `windows` maps over frames [i0, i0 + n_f) with i0 drawn
/// uniformly from [i_t - n_f, i_t] (clipped to the run). V_s is the spread of
/// those n*m maps about their mean; V_c averages V_s over the sampled times.
inline SeriesVariance series_variance(const sim::SceneLayout& layout, const control::ControlSeries& series,
                                      const sim::SimConfig& sim_cfg, const mapgen::MapConfig& map_cfg,
                                      const VarianceConfig& cfg) {
  cfg.validate();
  map_cfg.validate();
  const std::size_t nf = map_cfg.frames_per_map();
  const std::size_t total = sim::frame_count(series.duration_seconds(), sim_cfg.dt);
  require(total >= nf, ErrorKind::input, "variance: series shorter than one map window");
  const auto minutes = variance_sample_minutes(series.samples.size(), cfg.sample_times);

  struct Window {
    std::size_t time_index;
    std::size_t start;
  };
  std::mt19937_64 rng(cfg.seed ^ (series.scene == SceneId::a ? 0x0aULL : 0x0bULL));
  std::vector<std::vector<mapgen::SceneMap>> samples(minutes.size());
  for (int run = 0; run < cfg.simulations; ++run) {
    std::vector<Window> windows;
    for (std::size_t k = 0; k < minutes.size(); ++k) {
      const std::size_t it = static_cast<std::size_t>(std::llround((minutes[k] + 0.5) * 60.0 / sim_cfg.dt));
      const std::size_t lo = it >= nf ? it - nf : 0;
      const std::size_t hi = std::min(it, total - nf);
      std::uniform_int_distribution<std::size_t> pick(std::min(lo, hi), hi);
      for (int w = 0; w < cfg.windows; ++w) windows.push_back({k, pick(rng)});
    }
    std::sort(windows.begin(), windows.end(), [](const Window& x, const Window& y) { return x.start < y.start; });
    const std::size_t last = windows.back().start + nf;

    sim::SimConfig run_cfg = sim_cfg;
    run_cfg.rng_seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(run) * 7919ULL +
                       (series.scene == SceneId::a ? 1 : 2);
    std::vector<std::pair<std::size_t, mapgen::OgmAccumulator>> active;
    std::size_t next = 0, frame = 0;
    sim::run_simulation(layout, series, run_cfg, static_cast<double>(last) * sim_cfg.dt, [&](const sim::Frame& f) {
      while (next < windows.size() && windows[next].start == frame) {
        active.emplace_back(windows[next].time_index,
                            mapgen::OgmAccumulator(map_cfg, series.scene, series.start_minute + minutes[windows[next].time_index]));
        ++next;
      }
      for (auto& [k, acc] : active) acc.add(f);
      for (auto it = active.begin(); it != active.end();) {
        if (it->second.frames() == nf) {
          samples[it->first].push_back(it->second.take());
          it = active.erase(it);
        } else {
          ++it;
        }
      }
      ++frame;
    });
  }

  SeriesVariance out;
  for (std::size_t k = 0; k < minutes.size(); ++k) {
    out.minutes.push_back(series.start_minute + static_cast<double>(minutes[k]));
    out.v_s.push_back(map_variance(samples[k]));
  }
  out.v_c = std::accumulate(out.v_s.begin(), out.v_s.end(), 0.0) / static_cast<double>(out.v_s.size());
  return out;
}

struct DatasetVariance {
  SeriesVariance scene_a;
  SeriesVariance scene_b;
  double v_d = 0.0;  // mean of the two series' V_c
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DatasetVariance, scene_a, scene_b, v_d)

inline DatasetVariance dataset_variance(const sim::SceneLayout& layout_a, const sim::SceneLayout& layout_b,
                                        const control::GeneratedPair& control, const sim::SimConfig& sim_cfg,
                                        const mapgen::MapConfig& map_cfg, const VarianceConfig& cfg) {
  DatasetVariance d;
  d.scene_a = series_variance(layout_a, control.a, sim_cfg, map_cfg, cfg);
  d.scene_b = series_variance(layout_b, control.b, sim_cfg, map_cfg, cfg);
  d.v_d = 0.5 * (d.scene_a.v_c + d.scene_b.v_c);
  return d;
}

}  // namespace xscene::eval
