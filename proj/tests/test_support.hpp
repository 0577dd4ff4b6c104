#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "xscene/control/series.hpp"
#include "xscene/mapgen/scene_map.hpp"
#include "xscene/sim/layout.hpp"
#include "xscene/sim/simulation.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using namespace xscene;

/// 20 m square plaza with a west-east corridor and a south-north one.
inline sim::SceneLayout plaza() {
  sim::SceneLayout l;
  l.name = "plaza";
  l.bounds = {0.0, 0.0, 20.0, 20.0};
  l.walls = {{{0.0, 0.0}, {20.0, 0.0}}};
  l.endpoints = {{"w", {1.0, 10.0}}, {"e", {19.0, 10.0}}, {"s", {10.0, 1.0}}, {"n", {10.0, 19.0}}};
  l.flows = {{sim::FlowDirection::inbound, {{1.0, 10.0}, {10.0, 10.0}, {19.0, 10.0}}},
             {sim::FlowDirection::outbound, {{19.0, 10.0}, {10.0, 10.0}, {1.0, 10.0}}},
             {sim::FlowDirection::inbound, {{10.0, 1.0}, {10.0, 19.0}}},
             {sim::FlowDirection::outbound, {{10.0, 19.0}, {10.0, 1.0}}}};
  return l;
}

inline control::ControlSeries constant_series(SceneId scene, int minutes, int people, double fd,
                                              int start_minute = 480) {
  control::ControlSeries s;
  s.scene = scene;
  s.start_minute = start_minute;
  s.samples.assign(static_cast<std::size_t>(minutes), {people, fd});
  return s;
}

/// Random walk frames for up to `agents` agents that enter and leave at
/// random, spanning a little beyond a width x width grid of `cell` meters.
inline std::vector<sim::Frame> random_frames(std::mt19937_64& rng, std::size_t count, int agents, int width,
                                             double cell, double dt = 0.1) {
  const double extent = width * cell;
  std::uniform_real_distribution<double> pos(-cell, extent + cell), step(-1.5 * cell, 1.5 * cell), u(0.0, 1.0);
  std::vector<sim::Frame> frames(count);
  std::vector<std::optional<Vec2>> where(static_cast<std::size_t>(agents));
  for (std::size_t k = 0; k < count; ++k) {
    frames[k].time = static_cast<double>(k) * dt;
    for (int a = 0; a < agents; ++a) {
      auto& w = where[static_cast<std::size_t>(a)];
      if (!w) {
        if (u(rng) < 0.5) w = Vec2{pos(rng), pos(rng)};
      } else if (u(rng) < 0.05) {
        w.reset();
      } else if (u(rng) < 0.85) {
        // Occasional pure axis moves and standstills exercise channel ties.
        const double r = u(rng);
        if (r < 0.1) *w = *w + Vec2{step(rng), 0.0};
        else if (r < 0.2) *w = *w + Vec2{0.0, step(rng)};
        else if (r < 0.9) *w = *w + Vec2{step(rng), step(rng)};
      }
      if (w) frames[k].agents.push_back({static_cast<std::uint64_t>(a * 7 + 3), *w, {}});
    }
  }
  return frames;
}

inline mapgen::SceneMap random_map(std::mt19937_64& rng, int width, SceneId scene, double t, double max = 5.0) {
  std::uniform_int_distribution<int> count(0, static_cast<int>(max));
  mapgen::SceneMap m(scene, t, width, width, 1.0);
  for (auto& v : m.data) v = count(rng);
  return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("xscene_" + tag + "_" + std::to_string(rd()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string str(const std::string& rel = "") const { return (rel.empty() ? path_ : path_ / rel).string(); }

 private:
  fs::path path_;
};

}  // namespace testing_support
