#pragma once

// Rasterizes agent displacements into directional pass-count maps.
//
// Every consecutive-frame displacement of an agent marks each pixel whose
// closed cell the segment touches, in the channel of the displacement's
// dominant compass direction (ties go to the x axis). A (pixel, channel) is
// counted at most once per agent per window, so values are numbers of
// distinct agents. Stationary agents mark nothing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "xscene/common/error.hpp"
#include "xscene/mapgen/scene_map.hpp"
#include "xscene/sim/simulation.hpp"

namespace xscene::mapgen {

/// Dominant-direction channel of a displacement; -1 for a zero displacement.
inline int dominant_channel(Vec2 d) {
  if (d.x == 0.0 && d.y == 0.0) return -1;
  if (std::abs(d.x) >= std::abs(d.y)) return d.x > 0.0 ? east : west;
  return d.y > 0.0 ? north : south;
}

/// Whether segment p->q intersects the closed box [x0,x1] x [y0,y1].
inline bool segment_touches_box(Vec2 p, Vec2 q, double x0, double y0, double x1, double y1) {
  double t0 = 0.0, t1 = 1.0;
  const double d[2] = {q.x - p.x, q.y - p.y};
  const double s[2] = {p.x, p.y};
  const double lo[2] = {x0, y0};
  const double hi[2] = {x1, y1};
  for (int k = 0; k < 2; ++k) {
    if (d[k] == 0.0) {
      if (s[k] < lo[k] || s[k] > hi[k]) return false;
      continue;
    }
    double ta = (lo[k] - s[k]) / d[k];
    double tb = (hi[k] - s[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

/// Calls visit(row, col) for every in-grid cell the segment touches.
template <class Visit>
void for_each_touched_cell(Vec2 p, Vec2 q, const MapConfig& cfg, Visit&& visit) {
  const double c = cfg.cell_size;
  const double px = p.x - cfg.origin.x, py = p.y - cfg.origin.y;
  const double qx = q.x - cfg.origin.x, qy = q.y - cfg.origin.y;
  const int col0 = std::max(0, static_cast<int>(std::floor(std::min(px, qx) / c)) - 1);
  const int col1 = std::min(cfg.width - 1, static_cast<int>(std::floor(std::max(px, qx) / c)) + 1);
  const int row0 = std::max(0, static_cast<int>(std::floor(std::min(py, qy) / c)) - 1);
  const int row1 = std::min(cfg.width - 1, static_cast<int>(std::floor(std::max(py, qy) / c)) + 1);
  for (int row = row0; row <= row1; ++row)
    for (int col = col0; col <= col1; ++col)
      if (segment_touches_box({px, py}, {qx, qy}, col * c, row * c, (col + 1) * c, (row + 1) * c)) visit(row, col);
}

/// Streaming rasterizer for one window. Frames must arrive in time order at
/// the configured frame rate.
class OgmAccumulator {
 public:
  OgmAccumulator(const MapConfig& cfg, SceneId scene, double timestamp)
      : cfg_(cfg), map_(scene, timestamp, cfg.width, cfg.width, cfg.cell_size) {
    cfg_.validate();
  }

  void add(const sim::Frame& frame) {
    if (frames_ > 0) {
      const double gap = frame.time - last_time_;
      if (std::abs(gap - 1.0 / cfg_.frame_rate) > 1e-6)
        fail(ErrorKind::input, "ogm: frame gap of " + std::to_string(gap) + " s at t=" + std::to_string(frame.time));
    }
    std::unordered_map<std::uint64_t, Vec2> current;
    current.reserve(frame.agents.size());
    for (const auto& a : frame.agents) {
      current.emplace(a.id, a.position);
      const auto prev = previous_.find(a.id);
      if (prev == previous_.end()) continue;
      const int ch = dominant_channel(a.position - prev->second);
      if (ch < 0) continue;
      for_each_touched_cell(prev->second, a.position, cfg_, [&](int row, int col) {
        const std::uint64_t cell = map_.index(row, col, ch);
        if (seen_.insert((a.id << 24) ^ cell).second) map_.data[cell] += 1.0;
      });
    }
    previous_ = std::move(current);
    last_time_ = frame.time;
    ++frames_;
  }

  std::size_t frames() const { return frames_; }
  const SceneMap& map() const { return map_; }
  SceneMap take() { return std::move(map_); }

 private:
  MapConfig cfg_;
  SceneMap map_;
  std::unordered_map<std::uint64_t, Vec2> previous_;
  std::unordered_set<std::uint64_t> seen_;
  double last_time_ = 0.0;
  std::size_t frames_ = 0;
};

/// Builds the scene map of one window of frames. The frame list may be in
/// any order; it is sorted by time and must then be gap-free and exactly
/// window * frame_rate * 60 frames long.
inline SceneMap ogm(std::vector<sim::Frame> frames, const MapConfig& cfg, SceneId scene, double timestamp) {
  cfg.validate();
  require(!frames.empty(), ErrorKind::input, "ogm: empty frame window");
  require(frames.size() == cfg.frames_per_map(), ErrorKind::input,
          "ogm: window holds " + std::to_string(frames.size()) + " frames, expected " +
              std::to_string(cfg.frames_per_map()));
  std::stable_sort(frames.begin(), frames.end(), [](const auto& x, const auto& y) { return x.time < y.time; });
  OgmAccumulator acc(cfg, scene, timestamp);
  for (const auto& f : frames) acc.add(f);
  return acc.take();
}

}  // namespace xscene::mapgen
