#pragma once

// Per-minute scene maps from simulation runs, and the train/test split with a
// controlled share of synchronized (pairwise) training observations.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/control/series.hpp"
#include "xscene/mapgen/ogm.hpp"
#include "xscene/sim/layout.hpp"
#include "xscene/sim/simulation.hpp"

namespace xscene::eval {

/// Simulates `series` and rasterizes consecutive non-overlapping windows. Map k
/// covers minutes [start + k*window, start + (k+1)*window) and is stamped with
/// its window start.
inline std::vector<mapgen::SceneMap> simulate_maps(const sim::SceneLayout& layout, const control::ControlSeries& series,
                                                   const sim::SimConfig& sim_cfg, const mapgen::MapConfig& map_cfg) {
  map_cfg.validate();
  require(std::abs(sim_cfg.dt * map_cfg.frame_rate - 1.0) < 1e-9, ErrorKind::config,
          "simulation dt must equal 1 / map frame_rate");
  const std::size_t per_map = map_cfg.frames_per_map();
  const std::size_t total = sim::frame_count(series.duration_seconds(), sim_cfg.dt);
  const std::size_t count = total / per_map;
  require(count >= 1, ErrorKind::input, "control series is shorter than one map window");

  std::vector<mapgen::SceneMap> maps;
  maps.reserve(count);
  auto stamp = [&](std::size_t k) { return series.start_minute + static_cast<double>(k) * map_cfg.window; };
  std::optional<mapgen::OgmAccumulator> acc;
  acc.emplace(map_cfg, series.scene, stamp(0));
  sim::run_simulation(layout, series, sim_cfg, static_cast<double>(count * per_map) * sim_cfg.dt,
                      [&](const sim::Frame& f) {
                        acc->add(f);
                        if (acc->frames() == per_map) {
                          maps.push_back(acc->take());
                          acc.emplace(map_cfg, series.scene, stamp(maps.size()));
                        }
                      });
  return maps;
}

struct DatasetSpec {
  double rho = 1.0;
  double alpha = 1.0;
  std::size_t train_count = 72;
  std::size_t test_count = 36;
  std::uint64_t seed = 1;  // timestamp jitter and choice of synchronized slots

  void validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::config, "dataset: alpha must lie in [0,1]");
    require(train_count >= 1, ErrorKind::config, "dataset: train_count must be positive");
    require(test_count <= train_count, ErrorKind::config, "dataset: test_count may not exceed train_count");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetSpec, rho, alpha, train_count, test_count, seed)

/// Number of synchronized training observations for a pairwise fraction.
/// Rounds down: 0.72 * 72 = 51.84 gives 51.
inline std::size_t pairwise_count(double alpha, std::size_t train_count) {
  return static_cast<std::size_t>(std::floor(alpha * static_cast<double>(train_count) + 1e-9));
}

/// Minute indices (relative to the series start) of every split member.
struct SplitPlan {
  std::vector<int> train_a;
  std::vector<int> train_b;
  std::vector<bool> paired;  // per training slot
  std::vector<int> test;     // shared by both scenes
};

/// The day is cut into train_count equal slots. Slot s holds one scene-a
/// training minute at offset 1..4; scene b uses the same minute when the slot
/// is synchronized and otherwise a minute 1 or 2 away inside offsets 0..6.
/// Every other slot contributes its test minute at offset 7 or 8 until
/// test_count is reached, so test minutes never coincide with training ones.
inline SplitPlan plan_split(const DatasetSpec& spec, std::size_t total_minutes) {
  spec.validate();
  const std::size_t slot = total_minutes / spec.train_count;
  require(slot >= 10, ErrorKind::input,
          "dataset needs at least 10 minutes per training slot; have " + std::to_string(total_minutes) +
              " minutes for " + std::to_string(spec.train_count) + " slots");
  const std::size_t stride = spec.test_count > 0 ? spec.train_count / spec.test_count : 0;

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> train_offset(1, 4), test_offset(7, 8), step(1, 2), sign(0, 1);
  std::vector<std::size_t> order(spec.train_count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  // Prefixes of one permutation, so a larger alpha synchronizes a superset of slots.
  std::vector<bool> paired(spec.train_count, false);
  for (std::size_t k = 0; k < pairwise_count(spec.alpha, spec.train_count); ++k) paired[order[k]] = true;

  SplitPlan plan;
  plan.paired = paired;
  for (std::size_t s = 0; s < spec.train_count; ++s) {
    const int base = static_cast<int>(s * slot);
    const int ta = train_offset(rng);
    int off = ta + (sign(rng) ? step(rng) : -step(rng));
    if (off < 0 || off > 6) off = ta + (ta + 2 <= 6 ? 2 : -2);
    const int te = test_offset(rng);
    plan.train_a.push_back(base + ta);
    plan.train_b.push_back(base + (paired[s] ? ta : off));
    if (stride > 0 && s % stride == stride - 1 && plan.test.size() < spec.test_count) plan.test.push_back(base + te);
  }
  return plan;
}

struct Dataset {
  DatasetSpec spec;
  std::vector<mapgen::SceneMap> train_a;
  std::vector<mapgen::SceneMap> train_b;
  std::vector<bool> paired;
  std::vector<mapgen::SceneMap> test_a;
  std::vector<mapgen::SceneMap> test_b;

  std::size_t pairwise() const { return static_cast<std::size_t>(std::count(paired.begin(), paired.end(), true)); }

  /// Index pairs (train_a, train_b) with identical timestamps.
  std::vector<std::pair<std::size_t, std::size_t>> synchronized_pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < paired.size(); ++i)
      if (paired[i]) out.emplace_back(i, i);
    return out;
  }
};

/// Selects the dataset's maps out of per-minute map sequences of both scenes.
inline Dataset build_dataset(const DatasetSpec& spec, const std::vector<mapgen::SceneMap>& maps_a,
                             const std::vector<mapgen::SceneMap>& maps_b) {
  require(maps_a.size() == maps_b.size(), ErrorKind::input, "build_dataset: scenes cover different spans");
  const SplitPlan plan = plan_split(spec, maps_a.size());
  Dataset d;
  d.spec = spec;
  d.paired = plan.paired;
  for (int m : plan.train_a) d.train_a.push_back(maps_a.at(m));
  for (int m : plan.train_b) d.train_b.push_back(maps_b.at(m));
  for (int m : plan.test) {
    d.test_a.push_back(maps_a.at(m));
    d.test_b.push_back(maps_b.at(m));
  }
  return d;
}

}  // namespace xscene::eval
